//! Per-scene result file: one JSON document per image, written by the
//! batch runner and read back by the evaluation harness.

use serde::{Deserialize, Serialize};

use super::{ExclusionReason, HeightSource, SceneOutcome};
use crate::TOOL_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneStatus {
    Estimate,
    NoEstimate,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectReport {
    pub label: String,
    pub entity: Option<String>,
    pub height_source: HeightSource,
    pub height_cm: f64,
    pub ratio: f64,
    pub depth_cm: f64,
    pub excluded: bool,
    pub exclusion_reason: Option<ExclusionReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneResult {
    pub image: String,
    pub status: SceneStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_min_cm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_avg_cm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_max_cm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_used: Option<usize>,
    #[serde(default)]
    pub objects: Vec<ObjectReport>,
    #[serde(default)]
    pub pending_entries: Vec<super::PendingEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub tool_version: String,
}

impl SceneResult {
    pub fn from_outcome(image: &str, outcome: &SceneOutcome) -> Self {
        match outcome {
            SceneOutcome::Estimate { estimate, pending, warnings, model_id } => {
                let mut objects = Vec::new();
                for o in &estimate.retained {
                    objects.push(object_report(o, None));
                }
                for (o, reason) in &estimate.excluded {
                    objects.push(object_report(o, Some(*reason)));
                }
                SceneResult {
                    image: image.to_string(),
                    status: SceneStatus::Estimate,
                    depth_min_cm: Some(estimate.depth_min_cm),
                    depth_avg_cm: Some(estimate.depth_avg_cm),
                    depth_max_cm: Some(estimate.depth_max_cm),
                    n_used: Some(estimate.n_used),
                    objects,
                    pending_entries: pending.clone(),
                    reason: None,
                    error: None,
                    raw_response: None,
                    model_id: Some(model_id.clone()),
                    warnings: warnings.clone(),
                    tool_version: TOOL_VERSION.to_string(),
                }
            }
            SceneOutcome::NoEstimate { reason } => SceneResult {
                image: image.to_string(),
                status: SceneStatus::NoEstimate,
                depth_min_cm: None,
                depth_avg_cm: None,
                depth_max_cm: None,
                n_used: None,
                objects: Vec::new(),
                pending_entries: Vec::new(),
                reason: Some(reason.clone()),
                error: None,
                raw_response: None,
                model_id: None,
                warnings: Vec::new(),
                tool_version: TOOL_VERSION.to_string(),
            },
            SceneOutcome::Failure { error, raw_response } => SceneResult {
                image: image.to_string(),
                status: SceneStatus::Failure,
                depth_min_cm: None,
                depth_avg_cm: None,
                depth_max_cm: None,
                n_used: None,
                objects: Vec::new(),
                pending_entries: Vec::new(),
                reason: None,
                error: Some(error.to_string()),
                raw_response: raw_response.clone(),
                model_id: None,
                warnings: Vec::new(),
                tool_version: TOOL_VERSION.to_string(),
            },
        }
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scene result serializes");
        s.push('\n');
        s
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

fn object_report(o: &super::GroundedObject, excluded: Option<ExclusionReason>) -> ObjectReport {
    ObjectReport {
        label: o.raw_label.clone(),
        entity: o.match_result.as_ref().map(|m| m.entity.to_string()),
        height_source: o.height_source,
        height_cm: o.resolved_height_cm,
        ratio: o.submerged_ratio,
        depth_cm: o.depth_cm,
        excluded: excluded.is_some(),
        exclusion_reason: excluded,
    }
}
