//! Evaluation harness: ground-truth manifest ingestion, MAE and Pearson r
//! per variant (min/avg/max, plus an optional model-only baseline), and
//! residual exports for scatter / error-distribution plots.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{SceneResult, SceneStatus};
use crate::TOOL_VERSION;

/// One row of the ground-truth manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub image_path: String,
    pub ground_truth_cm: f64,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Min,
    Avg,
    Max,
    Baseline,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Min => "min",
            Variant::Avg => "avg",
            Variant::Max => "max",
            Variant::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantMetrics {
    /// None when no record could be scored.
    pub mae_cm: Option<f64>,
    /// None when undefined (fewer than two scored records, or zero
    /// variance on either side). Never NaN.
    pub pearson_r: Option<f64>,
    pub n_scored: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub id: String,
    pub variant: Variant,
    pub predicted_cm: f64,
    pub truth_cm: f64,
    pub error_cm: f64,
}

/// Per-variant metrics over one manifest, with per-record residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tool_version: String,
    pub manifest_size: usize,
    /// Scenes without a usable pipeline estimate (failures + no-estimates).
    pub n_failed: usize,
    pub variants: BTreeMap<Variant, VariantMetrics>,
    pub residuals: Vec<Residual>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("manifest header mismatch: expected `id,image_path,ground_truth_cm[,lat,lon]`, got {0:?}")]
    HeaderMismatch(String),
    #[error("manifest row {row}: {detail}")]
    BadRow { row: usize, detail: String },
    #[error("duplicate manifest id {0:?}")]
    DuplicateId(String),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("input lists have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("cannot compute {0} of an empty list")]
    EmptyInput(&'static str),
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),
    #[error("outcome id {0:?} does not appear in the manifest")]
    UnknownId(String),
}

/// Parses the manifest CSV. Header must be
/// `id,image_path,ground_truth_cm` optionally followed by `lat,lon`.
pub fn load_manifest(bytes: &[u8]) -> Result<Vec<ManifestRecord>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let with_coords = match headers.as_slice() {
        [a, b, c] if a == "id" && b == "image_path" && c == "ground_truth_cm" => false,
        [a, b, c, d, e]
            if a == "id" && b == "image_path" && c == "ground_truth_cm" && d == "lat" && e == "lon" =>
        {
            true
        }
        _ => return Err(EvalError::HeaderMismatch(headers.join(","))),
    };

    let mut records = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let rownum = i + 2; // 1-based, after the header line
        let expected = if with_coords { 5 } else { 3 };
        if row.len() != expected {
            return Err(EvalError::BadRow {
                row: rownum,
                detail: format!("expected {expected} fields, got {}", row.len()),
            });
        }
        let id = row[0].to_string();
        if id.is_empty() {
            return Err(EvalError::BadRow { row: rownum, detail: "empty id".into() });
        }
        if !seen.insert(id.clone()) {
            return Err(EvalError::DuplicateId(id));
        }
        let ground_truth_cm: f64 = row[2].parse().map_err(|_| EvalError::BadRow {
            row: rownum,
            detail: format!("unparseable ground_truth_cm {:?}", &row[2]),
        })?;
        if ground_truth_cm < 0.0 || !ground_truth_cm.is_finite() {
            return Err(EvalError::BadRow {
                row: rownum,
                detail: format!("ground_truth_cm must be >= 0, got {ground_truth_cm}"),
            });
        }
        let parse_coord = |field: &str, name: &str| -> Result<Option<f64>, EvalError> {
            if field.is_empty() {
                Ok(None)
            } else {
                field.parse().map(Some).map_err(|_| EvalError::BadRow {
                    row: rownum,
                    detail: format!("unparseable {name} {field:?}"),
                })
            }
        };
        let (latitude, longitude) = if with_coords {
            (parse_coord(&row[3], "lat")?, parse_coord(&row[4], "lon")?)
        } else {
            (None, None)
        };
        records.push(ManifestRecord {
            id,
            image_path: row[1].to_string(),
            ground_truth_cm,
            latitude,
            longitude,
        });
    }
    Ok(records)
}

/// Mean absolute error between paired predictions and truths.
pub fn mae(predicted: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    if predicted.len() != truth.len() {
        return Err(EvalError::LengthMismatch(predicted.len(), truth.len()));
    }
    if predicted.is_empty() {
        return Err(EvalError::EmptyInput("mae"));
    }
    let sum: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(sum / predicted.len() as f64)
}

/// Sample Pearson correlation coefficient. Undefined (a typed error, never
/// NaN) for fewer than two points or when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(EvalError::UndefinedCorrelation("fewer than two points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::UndefinedCorrelation("zero variance"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// A per-image prediction for the baseline variant: a single depth from a
/// knowledge-graph-free prompt run, or an explicit failure.
#[derive(Debug, Clone, PartialEq)]
pub enum BaselinePrediction {
    Depth(f64),
    Failed,
}

/// Scores every variant over the manifest. Records whose outcome carries
/// no estimate are counted in `n_failed`, never imputed. Outcome keys that
/// are not manifest ids are an error; manifest ids with no outcome at all
/// count as failed.
pub fn evaluate(
    manifest: &[ManifestRecord],
    outcomes: &BTreeMap<String, SceneResult>,
    baseline: Option<&BTreeMap<String, BaselinePrediction>>,
) -> Result<MetricsReport, EvalError> {
    if manifest.is_empty() {
        return Err(EvalError::EmptyManifest);
    }
    let ids: std::collections::BTreeSet<&str> = manifest.iter().map(|r| r.id.as_str()).collect();
    for key in outcomes.keys() {
        if !ids.contains(key.as_str()) {
            return Err(EvalError::UnknownId(key.clone()));
        }
    }
    if let Some(b) = baseline {
        for key in b.keys() {
            if !ids.contains(key.as_str()) {
                return Err(EvalError::UnknownId(key.clone()));
            }
        }
    }

    let mut variants = BTreeMap::new();
    let mut residuals = Vec::new();
    let mut pipeline_failures = 0usize;

    // Pipeline variants share scored/failed counts: a scene either has an
    // estimate (all three aggregates) or it has none.
    let mut scored: Vec<(&ManifestRecord, &SceneResult)> = Vec::new();
    for record in manifest {
        match outcomes.get(&record.id) {
            Some(result) if result.status == SceneStatus::Estimate => {
                scored.push((record, result));
            }
            _ => pipeline_failures += 1,
        }
    }

    for variant in [Variant::Min, Variant::Avg, Variant::Max] {
        let mut predicted = Vec::with_capacity(scored.len());
        let mut truth = Vec::with_capacity(scored.len());
        for (record, result) in &scored {
            let p = match variant {
                Variant::Min => result.depth_min_cm,
                Variant::Avg => result.depth_avg_cm,
                Variant::Max => result.depth_max_cm,
                Variant::Baseline => unreachable!(),
            }
            .expect("estimate status implies aggregate fields");
            predicted.push(p);
            truth.push(record.ground_truth_cm);
            residuals.push(Residual {
                id: record.id.clone(),
                variant,
                predicted_cm: p,
                truth_cm: record.ground_truth_cm,
                error_cm: p - record.ground_truth_cm,
            });
        }
        variants.insert(
            variant,
            VariantMetrics {
                mae_cm: mae(&predicted, &truth).ok(),
                pearson_r: pearson(&predicted, &truth).ok(),
                n_scored: predicted.len(),
                n_failed: manifest.len() - predicted.len(),
            },
        );
    }

    if let Some(baseline) = baseline {
        let mut predicted = Vec::new();
        let mut truth = Vec::new();
        for record in manifest {
            if let Some(BaselinePrediction::Depth(p)) = baseline.get(&record.id) {
                predicted.push(*p);
                truth.push(record.ground_truth_cm);
                residuals.push(Residual {
                    id: record.id.clone(),
                    variant: Variant::Baseline,
                    predicted_cm: *p,
                    truth_cm: record.ground_truth_cm,
                    error_cm: *p - record.ground_truth_cm,
                });
            }
        }
        variants.insert(
            Variant::Baseline,
            VariantMetrics {
                mae_cm: mae(&predicted, &truth).ok(),
                pearson_r: pearson(&predicted, &truth).ok(),
                n_scored: predicted.len(),
                n_failed: manifest.len() - predicted.len(),
            },
        );
    }

    // Residuals ordered by variant then manifest order already; re-sort by
    // (id, variant) for a stable, diff-friendly export.
    residuals.sort_by(|a, b| (&a.id, a.variant).cmp(&(&b.id, b.variant)));

    Ok(MetricsReport {
        tool_version: TOOL_VERSION.to_string(),
        manifest_size: manifest.len(),
        n_failed: pipeline_failures,
        variants,
        residuals,
    })
}

/// Deterministic report serialization: metrics JSON plus a residuals CSV
/// with header `id,variant,predicted_cm,truth_cm,error_cm`.
pub fn export_report(report: &MetricsReport) -> (Vec<u8>, Vec<u8>) {
    let mut json = serde_json::to_vec_pretty(report).expect("report serializes");
    json.push(b'\n');

    let mut csv_text = String::from("id,variant,predicted_cm,truth_cm,error_cm\n");
    for r in &report.residuals {
        csv_text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.id,
            r.variant.as_str(),
            r.predicted_cm,
            r.truth_cm,
            r.error_cm
        ));
    }
    (json, csv_text.into_bytes())
}
