use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::penalty::object_candidates;
use crate::schema::{
    check_compliance, from_value, ComplianceConfig, ComplianceReport, ParseOptions, RelationCatalog, SchemaError,
    StructuredRep,
};

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HarvestError {
    #[error("no JSON object found in response")]
    NoJsonFound,
    #[error("schema violation at {path}: {reason}")]
    SchemaViolation { path: String, reason: String },
}

impl From<SchemaError> for HarvestError {
    fn from(e: SchemaError) -> Self {
        match e {
            SchemaError::SchemaViolation { path, reason } => HarvestError::SchemaViolation { path, reason },
            SchemaError::MalformedJson(reason) => HarvestError::SchemaViolation {
                path: "$".into(),
                reason,
            },
        }
    }
}

/// Recovers a structured representation from free-form model output.
///
/// A response that is entirely a non-object JSON value is a schema violation.
/// Otherwise each balanced `{...}` span is tried in order and the first one
/// that satisfies the schema wins; if objects were found but none fit, the
/// first object's violation is reported.
pub fn harvest_structured(response_text: &str) -> Result<StructuredRep, HarvestError> {
    harvest_with(response_text, &ParseOptions::default())
}

pub fn harvest_with(response_text: &str, opts: &ParseOptions) -> Result<StructuredRep, HarvestError> {
    let trimmed = response_text.trim();
    if let Ok(value) = serde_json::from_str::<Value>(trimmed) {
        return Ok(from_value(&value, opts)?);
    }
    let mut first_error = None;
    for candidate in object_candidates(trimmed) {
        let Ok(value @ Value::Object(_)) = serde_json::from_str::<Value>(candidate) else {
            continue;
        };
        match from_value(&value, opts) {
            Ok(rep) => return Ok(rep),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    Err(first_error.map(HarvestError::from).unwrap_or(HarvestError::NoJsonFound))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Harvested {
    pub rep: StructuredRep,
    pub compliance: ComplianceReport,
}

/// [`harvest_structured`] followed by a compliance check against the source sentence.
pub fn harvest_checked(
    response_text: &str,
    original_text: &str,
    catalog: &RelationCatalog,
    cfg: &ComplianceConfig,
) -> Result<Harvested, HarvestError> {
    let rep = harvest_structured(response_text)?;
    let compliance = check_compliance(&rep, original_text, catalog, cfg);
    Ok(Harvested { rep, compliance })
}

/// Collapses a reconstruction to one line: whitespace runs become single
/// spaces and surrounding quotes or a leading "Sentence:" label are dropped.
pub fn normalize_reconstruction(text: &str) -> String {
    let mut s = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if let Some(rest) = s.strip_prefix("Sentence:") {
        s = rest.trim_start().to_string();
    }
    for (open, close) in [('"', '"'), ('\u{201c}', '\u{201d}')] {
        if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
            s = s[open.len_utf8()..s.len() - close.len_utf8()].trim().to_string();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::serialize_structured;

    const REP: &str = r#"{"core":{"label":"finding","claim":"dots glow"},"hierarchy":[{"relation":"cause","components":["size",[{"relation":"means","components":["ligands"]}]]}]}"#;

    #[test]
    fn leading_prose_then_object() {
        let rep = harvest_structured(&format!("Here is the JSON:\n{REP}\nThanks.")).unwrap();
        assert_eq!(serialize_structured(&rep), REP);
    }

    #[test]
    fn no_braces() {
        assert_eq!(harvest_structured("I cannot help with that."), Err(HarvestError::NoJsonFound));
        assert_eq!(harvest_structured("{ not json at all"), Err(HarvestError::NoJsonFound));
    }

    #[test]
    fn array_is_schema_violation() {
        assert!(matches!(harvest_structured(&format!("[{REP}]")), Err(HarvestError::SchemaViolation { .. })));
    }

    #[test]
    fn later_valid_object_wins_over_earlier_wrong_shape() {
        let text = format!("meta {{\"note\": 1}} then {REP}");
        assert_eq!(serialize_structured(&harvest_structured(&text).unwrap()), REP);
        let only_wrong = "meta {\"note\": 1} only";
        assert!(matches!(harvest_structured(only_wrong), Err(HarvestError::SchemaViolation { .. })));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_reconstruction("  Sentence: \"Dots   glow\nbrightly.\" \n"), "Dots glow brightly.");
        assert_eq!(normalize_reconstruction("plain"), "plain");
    }
}
