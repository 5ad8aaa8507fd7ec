//! Prompt construction. One image-agnostic prompt per run, identical for
//! every image, walking the model through object identification, height and
//! submergence estimation, and strict JSON output.

use super::{GatewayError, PromptSpec};

/// The response schema shown verbatim to the model and enforced by the
/// parser.
pub const RESPONSE_SCHEMA_TEXT: &str = r#"{
  "objects": [
    {
      "label": "string - object name with positional/visual qualifiers",
      "height_cm": "number - provisional real-world height in centimeters, > 0",
      "submerged_ratio": "number - fraction of the object below the waterline, 0.0 to 1.0",
      "rationale": "string - brief visual justification"
    }
  ]
}"#;

const SYSTEM_FRAMING: &str = "You are a customized flood analysis assistant. You examine a single RGB \
photograph of an urban flood scene and estimate floodwater depth from visible reference objects. \
You reason carefully about real-world object dimensions and waterline positions, and you answer \
only in the exact JSON format requested.";

/// Builds the three-step estimation prompt. Deterministic: identical input
/// gives byte-identical output.
pub fn build_prompt(max_objects: usize) -> Result<PromptSpec, GatewayError> {
    if max_objects < 1 {
        return Err(GatewayError::BadConfig(format!(
            "max_objects must be >= 1, got {max_objects}"
        )));
    }
    let step_instructions = format!(
        "Follow these three steps.\n\
         \n\
         Step 1 - Object identification: select up to {max_objects} visually distinct reference \
         objects that are partially submerged or adjacent to the water (for example car tires, \
         curbs, fire hydrants, people). Disambiguate similar instances with positional or visual \
         qualifiers, e.g. \"rear SUV tire\" or \"nearest fire hydrant\". If no usable reference \
         object is visible, return an empty objects list.\n\
         \n\
         Step 2 - Measurement estimation: for each object, estimate (a) its provisional \
         real-world height in centimeters, meaning the height of its top above the ground when \
         dry, and (b) its submerged ratio, the fraction of that height below the waterline, as a \
         number from 0.0 to 1.0. Anchor the ratio in visible evidence such as the position of the \
         waterline on the object.\n\
         \n\
         Step 3 - Structured output: reply with exactly one JSON document matching this schema, \
         with no extra fields and no surrounding prose:\n\
         {schema}\n",
        max_objects = max_objects,
        schema = RESPONSE_SCHEMA_TEXT,
    );
    Ok(PromptSpec {
        system_framing: SYSTEM_FRAMING.to_string(),
        step_instructions,
        max_objects,
        response_schema_text: RESPONSE_SCHEMA_TEXT.to_string(),
    })
}

/// The knowledge-graph-free baseline prompt: a single scene depth, no
/// reference-object reasoning requested.
pub fn build_baseline_prompt() -> PromptSpec {
    PromptSpec {
        system_framing: SYSTEM_FRAMING.to_string(),
        step_instructions: "Estimate the floodwater depth on the road surface in this image, in \
             centimeters. Reply with exactly one JSON document of the form {\"depth_cm\": number} \
             with no extra fields and no surrounding prose."
            .to_string(),
        max_objects: 1,
        response_schema_text: "{\"depth_cm\": number}".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(build_prompt(3).unwrap(), build_prompt(3).unwrap());
        assert_eq!(build_baseline_prompt(), build_baseline_prompt());
    }

    #[test]
    fn contains_ratio_bounds_unit_and_qualifier_guidance() {
        let p = build_prompt(3).unwrap();
        assert!(p.step_instructions.contains("0.0"));
        assert!(p.step_instructions.contains("1.0"));
        assert!(p.step_instructions.contains("centimeters"));
        assert!(p.step_instructions.contains("rear"));
        assert!(p.step_instructions.contains(RESPONSE_SCHEMA_TEXT));
        assert!(p.step_instructions.contains("up to 3"));
        assert_eq!(p.max_objects, 3);
    }

    #[test]
    fn rejects_zero_objects() {
        assert!(build_prompt(0).is_err());
    }

    #[test]
    fn baseline_asks_for_single_depth() {
        let p = build_baseline_prompt();
        assert!(p.step_instructions.contains("depth_cm"));
        assert!(p.step_instructions.contains("centimeters"));
    }
}
