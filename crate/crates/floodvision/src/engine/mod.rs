//! Depth engine: grounds observations in the knowledge graph, computes
//! per-object depths (ratio x height), excludes fully submerged references
//! and statistical outliers, and aggregates min/avg/max per scene.

mod report;

pub use report::{ObjectReport, SceneResult, SceneStatus};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    parse_observation, GatewayError, ImagePayload, PromptSpec, SceneObservation, VlmBackend,
};
use crate::kg::{KnowledgeGraph, MatchResult};

/// Where a resolved height came from: the knowledge graph (match found,
/// retrieved value overrides the model's guess) or the model's own
/// provisional estimate (no match).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeightSource {
    Kg,
    Provisional,
}

/// One observation after grounding, carrying the resolved height and the
/// derived depth. `depth_cm` is always `submerged_ratio * resolved_height_cm`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedObject {
    pub raw_label: String,
    pub match_result: Option<MatchResult>,
    pub resolved_height_cm: f64,
    pub height_source: HeightSource,
    pub submerged_ratio: f64,
    pub depth_cm: f64,
}

/// Filter output: objects kept for aggregation plus the excluded ones
/// with their reasons.
pub type FilterOutcome = (Vec<GroundedObject>, Vec<(GroundedObject, ExclusionReason)>);

/// A model-proposed height for a label the graph does not know yet. The
/// orchestrator applies these serially via `KnowledgeGraph::add_pending`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingEntry {
    pub label: String,
    pub height_cm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    FullySubmerged,
    MadOutlier,
}

impl ExclusionReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExclusionReason::FullySubmerged => "fully_submerged",
            ExclusionReason::MadOutlier => "mad_outlier",
        }
    }
}

/// Outlier filtering knobs. A submergence ratio at or above
/// `full_submergence_threshold` marks a reading as a lower bound rather
/// than a measurement; survivors are then screened with a median-absolute-
/// deviation band, which stays meaningful at the tiny sample sizes (<= 3)
/// this pipeline sees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterPolicy {
    #[serde(default = "default_full_submergence_threshold")]
    pub full_submergence_threshold: f64,
    #[serde(default = "default_mad_k")]
    pub mad_k: f64,
    #[serde(default = "default_mad_scale")]
    pub mad_scale: f64,
    #[serde(default = "default_min_n_for_mad")]
    pub min_n_for_mad: usize,
}

fn default_full_submergence_threshold() -> f64 {
    0.95
}

fn default_mad_k() -> f64 {
    2.5
}

/// Normal-consistency factor relating MAD to a standard deviation.
fn default_mad_scale() -> f64 {
    1.4826
}

fn default_min_n_for_mad() -> usize {
    3
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            full_submergence_threshold: default_full_submergence_threshold(),
            mad_k: default_mad_k(),
            mad_scale: default_mad_scale(),
            min_n_for_mad: default_min_n_for_mad(),
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.full_submergence_threshold <= 0.0
            || self.full_submergence_threshold > 1.0
            || !self.full_submergence_threshold.is_finite()
        {
            return Err(EngineError::BadPolicy(format!(
                "full_submergence_threshold must be in (0,1], got {}",
                self.full_submergence_threshold
            )));
        }
        if self.mad_k <= 0.0 || !self.mad_k.is_finite() {
            return Err(EngineError::BadPolicy(format!(
                "mad_k must be > 0, got {}",
                self.mad_k
            )));
        }
        if self.mad_scale <= 0.0 || !self.mad_scale.is_finite() {
            return Err(EngineError::BadPolicy(format!(
                "mad_scale must be > 0, got {}",
                self.mad_scale
            )));
        }
        Ok(())
    }
}

/// Retained/excluded per-object depths plus scene-level aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDepthEstimate {
    pub retained: Vec<GroundedObject>,
    pub excluded: Vec<(GroundedObject, ExclusionReason)>,
    pub depth_min_cm: f64,
    pub depth_avg_cm: f64,
    pub depth_max_cm: f64,
    pub n_used: usize,
}

/// The three ways a scene can come out: a depth estimate, an explicit
/// absence (never a zeroed estimate), or a failure wrapping the transport
/// or parse error with audit context.
#[derive(Debug)]
pub enum SceneOutcome {
    Estimate {
        estimate: SceneDepthEstimate,
        pending: Vec<PendingEntry>,
        warnings: Vec<String>,
        model_id: String,
    },
    NoEstimate {
        reason: String,
    },
    Failure {
        error: GatewayError,
        raw_response: Option<String>,
    },
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid filter policy: {0}")]
    BadPolicy(String),
    #[error("cannot {0} an empty object list")]
    EmptyInput(&'static str),
}

/// Resolves each observed object against the graph. A match means the
/// retrieved height overrides the model's guess; otherwise the provisional
/// height is kept and a pending-entry event is emitted for labels the
/// graph could record (non-empty after canonicalization).
pub fn ground_objects(
    kg: &KnowledgeGraph,
    obs: &SceneObservation,
) -> (Vec<GroundedObject>, Vec<PendingEntry>) {
    let mut grounded = Vec::with_capacity(obs.objects.len());
    let mut pending = Vec::new();
    for o in &obs.objects {
        let match_result = kg.match_entity(&o.raw_label);
        let (resolved_height_cm, height_source) = match &match_result {
            Some(m) => {
                let (mean, _std) = kg
                    .lookup_height(&m.entity)
                    .expect("matched entity exists in the graph");
                (mean, HeightSource::Kg)
            }
            None => {
                if !kg.canonicalize(&o.raw_label).is_empty() {
                    pending.push(PendingEntry {
                        label: o.raw_label.clone(),
                        height_cm: o.provisional_height_cm,
                    });
                }
                (o.provisional_height_cm, HeightSource::Provisional)
            }
        };
        grounded.push(GroundedObject {
            raw_label: o.raw_label.clone(),
            match_result,
            resolved_height_cm,
            height_source,
            submerged_ratio: o.submerged_ratio,
            depth_cm: o.submerged_ratio * resolved_height_cm,
        });
    }
    (grounded, pending)
}

/// Grounding with matching disabled: every object keeps its provisional
/// height. Used by the baseline arm of the grounding study.
pub fn ground_provisional(obs: &SceneObservation) -> Vec<GroundedObject> {
    obs.objects
        .iter()
        .map(|o| GroundedObject {
            raw_label: o.raw_label.clone(),
            match_result: None,
            resolved_height_cm: o.provisional_height_cm,
            height_source: HeightSource::Provisional,
            submerged_ratio: o.submerged_ratio,
            depth_cm: o.submerged_ratio * o.provisional_height_cm,
        })
        .collect()
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n.is_multiple_of(2) {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    } else {
        sorted[n / 2]
    }
}

fn median_of(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).expect("depths are finite"));
    median(&v)
}

/// Two-pass outlier filter.
///
/// Pass 1 drops fully submerged objects (ratio >= threshold) unless that
/// would drop everything. Pass 2, while >= `min_n_for_mad` survivors
/// remain, drops depths outside `median +/- mad_k * MAD` (MAD scaled by
/// `mad_scale`) and re-evaluates on the survivors until nothing more is
/// excluded -- the fixed-point variant, so re-applying the whole filter to
/// its own output is a no-op. A zero MAD degenerates to "keep exactly the
/// median values". Neither pass ever excludes all objects.
pub fn filter_outliers(
    objects: &[GroundedObject],
    policy: &FilterPolicy,
) -> Result<FilterOutcome, EngineError> {
    policy.validate()?;
    if objects.is_empty() {
        return Err(EngineError::EmptyInput("filter"));
    }

    let mut excluded: Vec<(GroundedObject, ExclusionReason)> = Vec::new();

    // Pass 1: fully submerged readings are lower bounds, not measurements.
    let submerged: Vec<bool> = objects
        .iter()
        .map(|o| o.submerged_ratio >= policy.full_submergence_threshold)
        .collect();
    let mut survivors: Vec<GroundedObject> = if submerged.iter().all(|&s| s) {
        objects.to_vec()
    } else {
        let mut kept = Vec::new();
        for (o, &s) in objects.iter().zip(&submerged) {
            if s {
                excluded.push((o.clone(), ExclusionReason::FullySubmerged));
            } else {
                kept.push(o.clone());
            }
        }
        kept
    };

    // Pass 2: MAD band around the median depth, iterated to a fixed point.
    while survivors.len() >= policy.min_n_for_mad {
        let m = median_of(survivors.iter().map(|o| o.depth_cm));
        let mad = policy.mad_scale * median_of(survivors.iter().map(|o| (o.depth_cm - m).abs()));
        let is_outlier = |d: f64| {
            if mad > 0.0 {
                (d - m).abs() > policy.mad_k * mad
            } else {
                d != m
            }
        };
        let n_out = survivors.iter().filter(|o| is_outlier(o.depth_cm)).count();
        if n_out == 0 || n_out == survivors.len() {
            break;
        }
        let mut kept = Vec::new();
        for o in survivors {
            if is_outlier(o.depth_cm) {
                excluded.push((o, ExclusionReason::MadOutlier));
            } else {
                kept.push(o);
            }
        }
        survivors = kept;
    }
    Ok((survivors, excluded))
}

/// Min/avg/max over retained depths. `retained` must be non-empty: a scene
/// with nothing retained yields no estimate, never a zeroed one.
pub fn aggregate(
    retained: Vec<GroundedObject>,
    excluded: Vec<(GroundedObject, ExclusionReason)>,
) -> Result<SceneDepthEstimate, EngineError> {
    if retained.is_empty() {
        return Err(EngineError::EmptyInput("aggregate"));
    }
    let depths: Vec<f64> = retained.iter().map(|o| o.depth_cm).collect();
    let min = depths.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = depths.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let avg = depths.iter().sum::<f64>() / depths.len() as f64;
    Ok(SceneDepthEstimate {
        n_used: retained.len(),
        depth_min_cm: min,
        depth_avg_cm: avg,
        depth_max_cm: max,
        retained,
        excluded,
    })
}

/// Full per-scene orchestration: request -> parse (one re-request on a
/// parse or schema failure) -> ground -> filter -> aggregate. Pending
/// entries are returned, not applied; the caller serializes graph updates.
pub fn estimate_scene(
    kg: &KnowledgeGraph,
    backend: &dyn VlmBackend,
    image: &ImagePayload,
    prompt: &PromptSpec,
    policy: &FilterPolicy,
    model_id: &str,
) -> SceneOutcome {
    let observation = match observe_with_retry(backend, image, prompt, model_id) {
        Ok(obs) => obs,
        Err((error, raw_response)) => return SceneOutcome::Failure { error, raw_response },
    };

    if observation.objects.is_empty() {
        return SceneOutcome::NoEstimate {
            reason: "no reference objects".to_string(),
        };
    }

    let (grounded, pending) = ground_objects(kg, &observation);
    let (retained, excluded) = match filter_outliers(&grounded, policy) {
        Ok(r) => r,
        Err(e) => {
            return SceneOutcome::NoEstimate { reason: e.to_string() };
        }
    };
    if retained.is_empty() {
        return SceneOutcome::NoEstimate {
            reason: "all objects filtered".to_string(),
        };
    }
    match aggregate(retained, excluded) {
        Ok(estimate) => SceneOutcome::Estimate {
            estimate,
            pending,
            warnings: observation.warnings.clone(),
            model_id: observation.model_id.clone(),
        },
        Err(e) => SceneOutcome::NoEstimate { reason: e.to_string() },
    }
}

/// One request, and on a parse/schema failure exactly one re-request.
fn observe_with_retry(
    backend: &dyn VlmBackend,
    image: &ImagePayload,
    prompt: &PromptSpec,
    model_id: &str,
) -> Result<SceneObservation, (GatewayError, Option<String>)> {
    let raw = backend
        .request(image, prompt)
        .map_err(|e| (e, None))?;
    match parse_observation(&raw, model_id) {
        Ok(obs) => Ok(obs),
        Err(first_err) if first_err.is_reply_error() => {
            let raw2 = backend.request(image, prompt).map_err(|e| (e, None))?;
            parse_observation(&raw2, model_id).map_err(|e| (e, Some(raw2)))
        }
        Err(other) => Err((other, Some(raw))),
    }
}
