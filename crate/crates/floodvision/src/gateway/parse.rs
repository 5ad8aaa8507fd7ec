//! Strict parsing of model replies. One optional Markdown code fence is
//! tolerated; everything inside must match the response schema exactly.
//! Violations name the offending field and value so a failed scene is
//! auditable without re-running the model.

use serde_json::Value;

use super::{GatewayError, ObjectObservation, SceneObservation, MAX_OBJECTS};

/// Strips at most one surrounding Markdown code fence (``` or ```json).
fn strip_fence(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    // Drop the info string ("json", "JSON", ...) up to the first newline.
    let body = match rest.find('\n') {
        Some(i) => &rest[i + 1..],
        None => return trimmed, // opening fence with no body: not a fence we unwrap
    };
    match body.trim_end().strip_suffix("```") {
        Some(inner) => inner.trim(),
        None => trimmed,
    }
}

fn violation(field: impl Into<String>, message: impl Into<String>) -> GatewayError {
    GatewayError::SchemaViolation {
        field: field.into(),
        message: message.into(),
    }
}

fn require_string(obj: &serde_json::Map<String, Value>, field: &str, path: &str) -> Result<String, GatewayError> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(violation(
            format!("{path}.{field}"),
            format!("expected a string, got {other}"),
        )),
        None => Err(violation(format!("{path}.{field}"), "missing required field")),
    }
}

fn require_number(obj: &serde_json::Map<String, Value>, field: &str, path: &str) -> Result<f64, GatewayError> {
    match obj.get(field) {
        Some(Value::Number(n)) => n.as_f64().ok_or_else(|| {
            violation(format!("{path}.{field}"), format!("non-finite number {n}"))
        }),
        Some(other) => Err(violation(
            format!("{path}.{field}"),
            format!("expected a number, got {other}"),
        )),
        None => Err(violation(format!("{path}.{field}"), "missing required field")),
    }
}

fn reject_unknown_fields(
    obj: &serde_json::Map<String, Value>,
    allowed: &[&str],
    path: &str,
) -> Result<(), GatewayError> {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(violation(
                format!("{path}.{key}"),
                format!("unknown field (allowed: {})", allowed.join(", ")),
            ));
        }
    }
    Ok(())
}

/// Parses one assistant reply into a validated [`SceneObservation`].
///
/// Rejects out-of-range submergence ratios and non-positive heights rather
/// than clamping them. Object lists longer than three are truncated to the
/// first three with a recorded warning; an empty list is a valid
/// observation (the scene has no usable references).
pub fn parse_observation(raw: &str, model_id: &str) -> Result<SceneObservation, GatewayError> {
    let payload = strip_fence(raw);
    let value: Value =
        serde_json::from_str(payload).map_err(|e| GatewayError::ReplyJson(e.to_string()))?;

    let root = value
        .as_object()
        .ok_or_else(|| violation("$", format!("expected a JSON object, got {value}")))?;
    reject_unknown_fields(root, &["objects"], "$")?;
    let objects_value = root
        .get("objects")
        .ok_or_else(|| violation("$.objects", "missing required field"))?;
    let array = objects_value
        .as_array()
        .ok_or_else(|| violation("$.objects", format!("expected an array, got {objects_value}")))?;

    let mut warnings = Vec::new();
    let mut objects = Vec::new();
    for (i, item) in array.iter().enumerate() {
        if objects.len() == MAX_OBJECTS {
            warnings.push(format!(
                "objects list has {} entries; truncated to the first {MAX_OBJECTS}",
                array.len()
            ));
            break;
        }
        let path = format!("$.objects[{i}]");
        let obj = item
            .as_object()
            .ok_or_else(|| violation(&path, format!("expected an object, got {item}")))?;
        reject_unknown_fields(obj, &["label", "height_cm", "submerged_ratio", "rationale"], &path)?;

        let label = require_string(obj, "label", &path)?;
        let height_cm = require_number(obj, "height_cm", &path)?;
        if height_cm <= 0.0 || !height_cm.is_finite() {
            return Err(violation(
                format!("{path}.height_cm"),
                format!("height must be > 0, got {height_cm}"),
            ));
        }
        let submerged_ratio = require_number(obj, "submerged_ratio", &path)?;
        if !(0.0..=1.0).contains(&submerged_ratio) || !submerged_ratio.is_finite() {
            return Err(violation(
                format!("{path}.submerged_ratio"),
                format!("submerged_ratio out of [0,1]: {submerged_ratio}"),
            ));
        }
        let rationale = require_string(obj, "rationale", &path)?;

        objects.push(ObjectObservation {
            raw_label: label,
            provisional_height_cm: height_cm,
            submerged_ratio,
            rationale,
        });
    }

    Ok(SceneObservation {
        objects,
        model_id: model_id.to_string(),
        raw_response: raw.to_string(),
        warnings,
    })
}

/// Renders an observation back into the wire schema. Inverse of
/// [`parse_observation`] on the objects list.
pub fn serialize_observation(objects: &[ObjectObservation]) -> String {
    let items: Vec<Value> = objects
        .iter()
        .map(|o| {
            serde_json::json!({
                "label": o.raw_label,
                "height_cm": o.provisional_height_cm,
                "submerged_ratio": o.submerged_ratio,
                "rationale": o.rationale,
            })
        })
        .collect();
    serde_json::json!({ "objects": items }).to_string()
}

/// Parses the baseline reply `{"depth_cm": number}` to a single depth.
pub fn parse_baseline_reply(raw: &str) -> Result<f64, GatewayError> {
    let payload = strip_fence(raw);
    let value: Value =
        serde_json::from_str(payload).map_err(|e| GatewayError::ReplyJson(e.to_string()))?;
    let root = value
        .as_object()
        .ok_or_else(|| violation("$", format!("expected a JSON object, got {value}")))?;
    reject_unknown_fields(root, &["depth_cm"], "$")?;
    let depth = require_number(root, "depth_cm", "$")?;
    if depth < 0.0 || !depth.is_finite() {
        return Err(violation("$.depth_cm", format!("depth must be >= 0, got {depth}")));
    }
    Ok(depth)
}
