//! Batch orchestration: runs the per-scene pipeline over a manifest with a
//! bounded worker pool, writes one result file per image plus a summary,
//! and (optionally) folds pending knowledge-graph entries back into the KG
//! file with an atomic rewrite.
//!
//! Scene ordering never affects output: results land in manifest order and
//! pending entries are applied serially in manifest order, so reruns and
//! different parallelism settings produce byte-identical files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::AppConfig;
use crate::engine::{estimate_scene, SceneResult, SceneStatus};
use crate::eval::{
    evaluate, export_report, load_manifest, BaselinePrediction, EvalError, ManifestRecord,
    MetricsReport,
};
use crate::gateway::{
    backend_from_config, build_baseline_prompt, build_prompt, parse_baseline_reply, GatewayError,
    ImagePayload, VlmBackend, MAX_OBJECTS,
};
use crate::kg::{load_kg, save_kg, KgError, KnowledgeGraph};
use crate::TOOL_VERSION;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Kg(#[from] KgError),
    #[error("{0}")]
    Gateway(#[from] GatewayError),
    #[error("{0}")]
    Eval(#[from] EvalError),
    #[error("failed to read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("failed to write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("result file {path} is not parseable: {detail}")]
    BadResultFile { path: String, detail: String },
}

fn read_file(path: &Path) -> Result<Vec<u8>, PipelineError> {
    std::fs::read(path).map_err(|e| PipelineError::Read {
        path: path.display().to_string(),
        source: e,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::Write {
            path: parent.display().to_string(),
            source: e,
        })?;
    }
    std::fs::write(path, bytes).map_err(|e| PipelineError::Write {
        path: path.display().to_string(),
        source: e,
    })
}

/// Write-temp-then-rename: the destination is never observable half-written.
fn write_file_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    write_file(&tmp, bytes)?;
    std::fs::rename(&tmp, path).map_err(|e| PipelineError::Write {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_kg_file(path: &Path) -> Result<KnowledgeGraph, PipelineError> {
    Ok(load_kg(&read_file(path)?)?)
}

pub fn load_manifest_file(path: &Path) -> Result<Vec<ManifestRecord>, PipelineError> {
    Ok(load_manifest(&read_file(path)?)?)
}

/// Estimates one image and returns the result document.
pub fn run_single(config: &AppConfig, kg_path: &Path, image_path: &Path) -> Result<SceneResult, PipelineError> {
    let kg = load_kg_file(kg_path)?;
    let backend = backend_from_config(&config.backend)?;
    let prompt = build_prompt(MAX_OBJECTS)?;
    let model_id = config.backend.model_id();
    let result = match ImagePayload::from_file(image_path) {
        Ok(image) => {
            let outcome = estimate_scene(&kg, backend.as_ref(), &image, &prompt, &config.filter, &model_id);
            SceneResult::from_outcome(&image_path.display().to_string(), &outcome)
        }
        Err(e) => SceneResult::from_outcome(
            &image_path.display().to_string(),
            &crate::engine::SceneOutcome::Failure { error: e, raw_response: None },
        ),
    };
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub id: String,
    pub image: String,
    pub status: SceneStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub tool_version: String,
    pub config: AppConfigEcho,
    pub n_images: usize,
    pub n_estimate: usize,
    pub n_no_estimate: usize,
    pub n_failure: usize,
    /// Pending entries applied to the KG file (0 unless --apply-pending).
    pub n_pending_applied: usize,
    pub records: Vec<BatchRecord>,
}

/// The estimation-affecting configuration, echoed for audit. Execution
/// knobs (parallelism) are deliberately absent: they must not change any
/// output byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppConfigEcho {
    pub backend_kind: String,
    pub model_id: String,
    pub kg_path: String,
    pub filter: crate::engine::FilterPolicy,
    pub apply_pending: bool,
    pub baseline: bool,
}

/// Runs the estimation pipeline over every manifest record, writing
/// `<out_dir>/<id>.json` per record plus `<out_dir>/summary.json`.
pub fn run_batch(
    config: &AppConfig,
    manifest: &[ManifestRecord],
    manifest_dir: &Path,
    kg_path: &Path,
    out_dir: &Path,
    parallelism: usize,
    apply_pending: bool,
) -> Result<BatchSummary, PipelineError> {
    let kg = load_kg_file(kg_path)?;
    let backend = backend_from_config(&config.backend)?;
    let prompt = build_prompt(MAX_OBJECTS)?;
    let model_id = config.backend.model_id();

    let results = run_scenes(
        manifest,
        manifest_dir,
        parallelism,
        |image, image_name| {
            let outcome = estimate_scene(&kg, backend.as_ref(), image, &prompt, &config.filter, &model_id);
            SceneResult::from_outcome(image_name, &outcome)
        },
        |image_name, error| {
            SceneResult::from_outcome(
                image_name,
                &crate::engine::SceneOutcome::Failure { error, raw_response: None },
            )
        },
    );

    for (record, result) in manifest.iter().zip(&results) {
        let path = out_dir.join(format!("{}.json", record.id));
        write_file(&path, result.to_json_pretty().as_bytes())?;
    }

    // Apply pending entries serially, in manifest order, after the batch.
    let mut n_pending_applied = 0;
    if apply_pending {
        let mut updated = kg.clone();
        for result in &results {
            for entry in &result.pending_entries {
                match updated.add_pending(&entry.label, entry.height_cm) {
                    Ok(next) => {
                        updated = next;
                        n_pending_applied += 1;
                    }
                    // A canonical match can appear mid-fold only if an
                    // earlier scene's entry was promoted elsewhere; skip.
                    Err(_) => continue,
                }
            }
        }
        if n_pending_applied > 0 {
            write_file_atomic(kg_path, &save_kg(&updated))?;
        }
    }

    let summary = BatchSummary {
        tool_version: TOOL_VERSION.to_string(),
        config: AppConfigEcho {
            backend_kind: format!("{:?}", config.backend.kind).to_lowercase(),
            model_id,
            kg_path: kg_path.display().to_string(),
            filter: config.filter,
            apply_pending,
            baseline: false,
        },
        n_images: manifest.len(),
        n_estimate: count(&results, SceneStatus::Estimate),
        n_no_estimate: count(&results, SceneStatus::NoEstimate),
        n_failure: count(&results, SceneStatus::Failure),
        n_pending_applied,
        records: manifest
            .iter()
            .zip(&results)
            .map(|(r, res)| BatchRecord {
                id: r.id.clone(),
                image: r.image_path.clone(),
                status: res.status,
            })
            .collect(),
    };
    let mut summary_json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    summary_json.push(b'\n');
    write_file(&out_dir.join("summary.json"), &summary_json)?;
    Ok(summary)
}

fn count(results: &[SceneResult], status: SceneStatus) -> usize {
    results.iter().filter(|r| r.status == status).count()
}

/// One baseline (knowledge-graph-free) prediction per image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub image: String,
    pub status: SceneStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_cm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub tool_version: String,
}

impl BaselineResult {
    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

/// Runs the baseline prompt over the manifest, writing `<id>.json` files
/// compatible with `evaluate --baseline`.
pub fn run_baseline_batch(
    config: &AppConfig,
    manifest: &[ManifestRecord],
    manifest_dir: &Path,
    out_dir: &Path,
    parallelism: usize,
) -> Result<usize, PipelineError> {
    let backend = backend_from_config(&config.backend)?;
    let prompt = build_baseline_prompt();

    let results = run_scenes(
        manifest,
        manifest_dir,
        parallelism,
        |image, image_name| baseline_scene(backend.as_ref(), image, &prompt, image_name),
        |image_name, error| BaselineResult {
            image: image_name.to_string(),
            status: SceneStatus::Failure,
            depth_cm: None,
            error: Some(error.to_string()),
            tool_version: TOOL_VERSION.to_string(),
        },
    );

    let mut n_ok = 0;
    for (record, result) in manifest.iter().zip(&results) {
        if result.status == SceneStatus::Estimate {
            n_ok += 1;
        }
        let mut json = serde_json::to_vec_pretty(result).expect("baseline result serializes");
        json.push(b'\n');
        write_file(&out_dir.join(format!("{}.json", record.id)), &json)?;
    }
    Ok(n_ok)
}

fn baseline_scene(
    backend: &dyn VlmBackend,
    image: &ImagePayload,
    prompt: &crate::gateway::PromptSpec,
    image_name: &str,
) -> BaselineResult {
    // Same retry contract as the main pipeline: one re-request on a
    // malformed reply, then failure.
    let outcome = backend.request(image, prompt).and_then(|raw| {
        parse_baseline_reply(&raw).or_else(|first| {
            if first.is_reply_error() {
                backend.request(image, prompt).and_then(|raw2| parse_baseline_reply(&raw2))
            } else {
                Err(first)
            }
        })
    });
    match outcome {
        Ok(depth) => BaselineResult {
            image: image_name.to_string(),
            status: SceneStatus::Estimate,
            depth_cm: Some(depth),
            error: None,
            tool_version: TOOL_VERSION.to_string(),
        },
        Err(e) => BaselineResult {
            image: image_name.to_string(),
            status: SceneStatus::Failure,
            depth_cm: None,
            error: Some(e.to_string()),
            tool_version: TOOL_VERSION.to_string(),
        },
    }
}

/// Shared worker pool: processes manifest records with bounded parallelism
/// and returns results in manifest order regardless of scheduling.
fn run_scenes<T: Send>(
    manifest: &[ManifestRecord],
    manifest_dir: &Path,
    parallelism: usize,
    process: impl Fn(&ImagePayload, &str) -> T + Sync,
    on_image_error: impl Fn(&str, GatewayError) -> T + Sync,
) -> Vec<T> {
    let n_workers = parallelism.max(1).min(manifest.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..manifest.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..n_workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= manifest.len() {
                    break;
                }
                let record = &manifest[i];
                let image_path = resolve_image_path(manifest_dir, &record.image_path);
                let result = match ImagePayload::from_file(&image_path) {
                    Ok(image) => process(&image, &record.image_path),
                    Err(e) => on_image_error(&record.image_path, e),
                };
                if let Some(slot) = slots.lock().expect("worker poisoned").get_mut(i) {
                    *slot = Some(result);
                }
            });
        }
    });

    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|s| s.expect("every slot filled"))
        .collect()
}

/// Manifest image paths are relative to the manifest file's directory
/// unless absolute.
fn resolve_image_path(manifest_dir: &Path, image_path: &str) -> PathBuf {
    let p = Path::new(image_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_dir.join(p)
    }
}

/// Loads result files for every manifest id from a batch output directory.
/// Missing files count as failures during evaluation; unparseable files
/// are an error.
pub fn load_results_dir(
    manifest: &[ManifestRecord],
    dir: &Path,
) -> Result<BTreeMap<String, SceneResult>, PipelineError> {
    let mut outcomes = BTreeMap::new();
    for record in manifest {
        let path = dir.join(format!("{}.json", record.id));
        match std::fs::read(&path) {
            Ok(bytes) => {
                let result = SceneResult::from_json(&bytes).map_err(|e| {
                    PipelineError::BadResultFile {
                        path: path.display().to_string(),
                        detail: e.to_string(),
                    }
                })?;
                outcomes.insert(record.id.clone(), result);
            }
            Err(_) => continue,
        }
    }
    Ok(outcomes)
}

pub fn load_baseline_dir(
    manifest: &[ManifestRecord],
    dir: &Path,
) -> Result<BTreeMap<String, BaselinePrediction>, PipelineError> {
    let mut predictions = BTreeMap::new();
    for record in manifest {
        let path = dir.join(format!("{}.json", record.id));
        match std::fs::read(&path) {
            Ok(bytes) => {
                let result = BaselineResult::from_json(&bytes).map_err(|e| {
                    PipelineError::BadResultFile {
                        path: path.display().to_string(),
                        detail: e.to_string(),
                    }
                })?;
                let prediction = match (result.status, result.depth_cm) {
                    (SceneStatus::Estimate, Some(d)) => BaselinePrediction::Depth(d),
                    _ => BaselinePrediction::Failed,
                };
                predictions.insert(record.id.clone(), prediction);
            }
            Err(_) => continue,
        }
    }
    Ok(predictions)
}

/// Evaluates a results directory against a manifest and writes
/// `metrics.json` and `residuals.csv` under `out_dir`.
pub fn run_evaluate(
    manifest: &[ManifestRecord],
    results_dir: &Path,
    baseline_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<MetricsReport, PipelineError> {
    let outcomes = load_results_dir(manifest, results_dir)?;
    let baseline = match baseline_dir {
        Some(dir) => Some(load_baseline_dir(manifest, dir)?),
        None => None,
    };
    let report = evaluate(manifest, &outcomes, baseline.as_ref())?;
    let (json, csv) = export_report(&report);
    write_file(&out_dir.join("metrics.json"), &json)?;
    write_file(&out_dir.join("residuals.csv"), &csv)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{BackendConfig, BackendKind};

    fn test_config(fixture_dir: &Path) -> AppConfig {
        AppConfig {
            backend: BackendConfig {
                kind: BackendKind::Mock,
                base_url: None,
                model_name: None,
                timeout_s: 30.0,
                max_retries: 2,
                fixture_dir: Some(fixture_dir.display().to_string()),
                parallelism: 2,
            },
            kg_path: None,
            filter: Default::default(),
            output_dir: None,
        }
    }

    fn kg_json() -> &'static [u8] {
        br#"{"version": "1", "entities": [
            {"id": "suv_tire", "label": "SUV tire", "aliases": ["suv wheel"],
             "height_mean_cm": 78.0, "height_std_cm": 5.0, "source": "t", "status": "canonical"}
          ], "relations": []}"#
    }

    /// Two tiny 'images' (magic bytes only), one good reply, one empty.
    fn setup(dir: &Path) -> (PathBuf, PathBuf) {
        let fixtures = dir.join("mock");
        std::fs::create_dir_all(&fixtures).unwrap();
        std::fs::create_dir_all(dir.join("images")).unwrap();
        std::fs::write(dir.join("images/a.jpg"), [0xFF, 0xD8, 0xFF, 0x01]).unwrap();
        std::fs::write(dir.join("images/b.jpg"), [0xFF, 0xD8, 0xFF, 0x02]).unwrap();
        std::fs::write(
            fixtures.join("a.jpg.json"),
            r#"{"objects":[{"label":"rear suv tire","height_cm":70,"submerged_ratio":0.5,"rationale":"hub"},
                           {"label":"traffic cone","height_cm":47,"submerged_ratio":0.4,"rationale":"tip"}]}"#,
        )
        .unwrap();
        std::fs::write(fixtures.join("b.jpg.json"), r#"{"objects":[]}"#).unwrap();
        let manifest = dir.join("manifest.csv");
        std::fs::write(
            &manifest,
            "id,image_path,ground_truth_cm\nscene_a,images/a.jpg,30\nscene_b,images/b.jpg,10\n",
        )
        .unwrap();
        let kg_path = dir.join("kg.json");
        std::fs::write(&kg_path, kg_json()).unwrap();
        (fixtures, manifest)
    }

    #[test]
    fn batch_writes_results_and_summary() {
        let tmp = tempfile::tempdir().unwrap();
        let (fixtures, manifest_path) = setup(tmp.path());
        let config = test_config(&fixtures);
        let manifest = load_manifest_file(&manifest_path).unwrap();
        let out = tmp.path().join("out");
        let summary = run_batch(
            &config,
            &manifest,
            tmp.path(),
            &tmp.path().join("kg.json"),
            &out,
            2,
            false,
        )
        .unwrap();
        assert_eq!(summary.n_images, 2);
        assert_eq!(summary.n_estimate, 1);
        assert_eq!(summary.n_no_estimate, 1);
        assert_eq!(summary.n_failure, 0);
        assert!(out.join("scene_a.json").exists());
        assert!(out.join("scene_b.json").exists());
        assert!(out.join("summary.json").exists());

        let a = SceneResult::from_json(&std::fs::read(out.join("scene_a.json")).unwrap()).unwrap();
        assert_eq!(a.status, SceneStatus::Estimate);
        assert_eq!(a.n_used, Some(2));
        assert_eq!(a.pending_entries.len(), 1);
    }

    #[test]
    fn batch_is_deterministic_across_runs_and_parallelism() {
        let tmp = tempfile::tempdir().unwrap();
        let (fixtures, manifest_path) = setup(tmp.path());
        let config = test_config(&fixtures);
        let manifest = load_manifest_file(&manifest_path).unwrap();
        let mut outputs = Vec::new();
        for (run, par) in [(0, 1), (1, 4), (2, 1)] {
            let out = tmp.path().join(format!("out{run}"));
            run_batch(&config, &manifest, tmp.path(), &tmp.path().join("kg.json"), &out, par, false)
                .unwrap();
            let mut files = BTreeMap::new();
            for name in ["scene_a.json", "scene_b.json", "summary.json"] {
                files.insert(name, std::fs::read(out.join(name)).unwrap());
            }
            outputs.push(files);
        }
        assert_eq!(outputs[0], outputs[1]);
        assert_eq!(outputs[0], outputs[2]);
    }

    #[test]
    fn apply_pending_rewrites_kg_atomically() {
        let tmp = tempfile::tempdir().unwrap();
        let (fixtures, manifest_path) = setup(tmp.path());
        let config = test_config(&fixtures);
        let manifest = load_manifest_file(&manifest_path).unwrap();
        let kg_path = tmp.path().join("kg.json");
        let before = std::fs::read(&kg_path).unwrap();

        // Without the flag the KG file is untouched.
        run_batch(&config, &manifest, tmp.path(), &kg_path, &tmp.path().join("o1"), 1, false).unwrap();
        assert_eq!(std::fs::read(&kg_path).unwrap(), before);

        let summary =
            run_batch(&config, &manifest, tmp.path(), &kg_path, &tmp.path().join("o2"), 1, true)
                .unwrap();
        assert_eq!(summary.n_pending_applied, 1);
        let kg = load_kg_file(&kg_path).unwrap();
        let id = crate::kg::EntityId::new("traffic_cone").unwrap();
        assert_eq!(kg.entity(&id).unwrap().height_mean_cm, 47.0);
        assert!(!kg_path.with_extension("tmp").exists(), "temp file cleaned up");
    }

    #[test]
    fn missing_image_becomes_failure_result() {
        let tmp = tempfile::tempdir().unwrap();
        let (fixtures, _) = setup(tmp.path());
        let config = test_config(&fixtures);
        let manifest = vec![ManifestRecord {
            id: "ghost".into(),
            image_path: "images/ghost.jpg".into(),
            ground_truth_cm: 5.0,
            latitude: None,
            longitude: None,
        }];
        let out = tmp.path().join("out");
        let summary = run_batch(
            &config,
            &manifest,
            tmp.path(),
            &tmp.path().join("kg.json"),
            &out,
            1,
            false,
        )
        .unwrap();
        assert_eq!(summary.n_failure, 1);
        let r = SceneResult::from_json(&std::fs::read(out.join("ghost.json")).unwrap()).unwrap();
        assert_eq!(r.status, SceneStatus::Failure);
        assert!(r.error.is_some());
    }

    #[test]
    fn evaluate_pipeline_end_to_end() {
        let tmp = tempfile::tempdir().unwrap();
        let (fixtures, manifest_path) = setup(tmp.path());
        let config = test_config(&fixtures);
        let manifest = load_manifest_file(&manifest_path).unwrap();
        let out = tmp.path().join("results");
        run_batch(&config, &manifest, tmp.path(), &tmp.path().join("kg.json"), &out, 1, false)
            .unwrap();
        let eval_out = tmp.path().join("eval");
        let report = run_evaluate(&manifest, &out, None, &eval_out).unwrap();
        assert_eq!(report.manifest_size, 2);
        assert_eq!(report.n_failed, 1); // scene_b had no reference objects
        assert!(eval_out.join("metrics.json").exists());
        assert!(eval_out.join("residuals.csv").exists());
    }

    #[test]
    fn baseline_batch_and_evaluation() {
        let tmp = tempfile::tempdir().unwrap();
        let (fixtures, manifest_path) = setup(tmp.path());
        // Baseline fixtures replace the estimation fixtures for this run.
        std::fs::write(fixtures.join("a.jpg.json"), r#"{"depth_cm": 33.0}"#).unwrap();
        std::fs::write(fixtures.join("b.jpg.json"), r#"{"depth_cm": 12.0}"#).unwrap();
        let config = test_config(&fixtures);
        let manifest = load_manifest_file(&manifest_path).unwrap();
        let out = tmp.path().join("baseline");
        let n_ok = run_baseline_batch(&config, &manifest, tmp.path(), &out, 2).unwrap();
        assert_eq!(n_ok, 2);
        let predictions = load_baseline_dir(&manifest, &out).unwrap();
        assert_eq!(predictions["scene_a"], BaselinePrediction::Depth(33.0));
        assert_eq!(predictions["scene_b"], BaselinePrediction::Depth(12.0));
    }
}
