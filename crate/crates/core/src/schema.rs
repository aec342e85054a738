//! Hierarchical JSON representation of a sentence: a core statement plus a
//! relation-typed hierarchy of components.
//!
//! Wire shape:
//!
//! ```json
//! {"core":{"label":"finding","claim":"X increases Y"},
//!  "hierarchy":[{"relation":"condition","components":["at low T",[{"relation":"cause","components":["..."]}]]}]}
//! ```
//!
//! A component is either a string or a nested list of hierarchy nodes.
//! Nodes may carry extra keys; they are kept verbatim and re-emitted after
//! `relation` and `components` in sorted key order.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub const DEFAULT_MAX_DEPTH: usize = 8;
pub const DEFAULT_COMPRESSION_THRESHOLD: f64 = 0.30;

const DEFAULT_RELATIONS: &str = include_str!("../assets/relations.json");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("schema violation at {path}: {reason}")]
    SchemaViolation { path: String, reason: String },
}

impl SchemaError {
    fn violation(path: impl Into<String>, reason: impl Into<String>) -> Self {
        SchemaError::SchemaViolation {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoreStatement {
    pub label: String,
    pub claim: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Component {
    Text(String),
    Nested(Vec<HierarchyNode>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyNode {
    pub relation: String,
    pub components: Vec<Component>,
    /// Keys other than `relation`/`components`, preserved but not validated.
    pub extra: Map<String, Value>,
}

impl HierarchyNode {
    pub fn new(relation: impl Into<String>, components: Vec<Component>) -> Self {
        Self {
            relation: relation.into(),
            components,
            extra: Map::new(),
        }
    }

    fn depth(&self) -> usize {
        1 + self
            .components
            .iter()
            .map(|c| match c {
                Component::Text(_) => 0,
                Component::Nested(nodes) => nodes.iter().map(HierarchyNode::depth).max().unwrap_or(0),
            })
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredRep {
    pub core: CoreStatement,
    pub hierarchy: Vec<HierarchyNode>,
}

impl StructuredRep {
    /// Nesting depth of the hierarchy; top-level nodes sit at depth 1.
    pub fn depth(&self) -> usize {
        self.hierarchy.iter().map(HierarchyNode::depth).max().unwrap_or(0)
    }

    /// Every relation string used anywhere in the hierarchy, in document order.
    pub fn relations(&self) -> Vec<&str> {
        fn walk<'a>(nodes: &'a [HierarchyNode], out: &mut Vec<&'a str>) {
            for node in nodes {
                out.push(&node.relation);
                for c in &node.components {
                    if let Component::Nested(inner) = c {
                        walk(inner, out);
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.hierarchy, &mut out);
        out
    }

    /// Leaf text fields with their dotted paths: label, claim and every string component.
    pub fn text_fields(&self) -> Vec<(String, &str)> {
        fn walk<'a>(prefix: &str, nodes: &'a [HierarchyNode], out: &mut Vec<(String, &'a str)>) {
            for (i, node) in nodes.iter().enumerate() {
                for (j, c) in node.components.iter().enumerate() {
                    let path = format!("{prefix}[{i}].components[{j}]");
                    match c {
                        Component::Text(s) => out.push((path, s.as_str())),
                        Component::Nested(inner) => walk(&path, inner, out),
                    }
                }
            }
        }
        let mut out = vec![
            ("core.label".to_string(), self.core.label.as_str()),
            ("core.claim".to_string(), self.core.claim.as_str()),
        ];
        walk("hierarchy", &self.hierarchy, &mut out);
        out
    }
}

impl Serialize for CoreStatement {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("CoreStatement", 2)?;
        st.serialize_field("label", &self.label)?;
        st.serialize_field("claim", &self.claim)?;
        st.end()
    }
}

impl Serialize for Component {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Component::Text(t) => s.serialize_str(t),
            Component::Nested(nodes) => nodes.serialize(s),
        }
    }
}

impl Serialize for HierarchyNode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(2 + self.extra.len()))?;
        map.serialize_entry("relation", &self.relation)?;
        map.serialize_entry("components", &self.components)?;
        for (k, v) in &self.extra {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl Serialize for StructuredRep {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("StructuredRep", 2)?;
        st.serialize_field("core", &self.core)?;
        st.serialize_field("hierarchy", &self.hierarchy)?;
        st.end()
    }
}

impl<'de> serde::Deserialize<'de> for StructuredRep {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(d)?;
        from_value(&value, &ParseOptions::default()).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for StructuredRep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_structured(self))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    pub max_depth: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

pub fn parse_structured(text: &str) -> Result<StructuredRep, SchemaError> {
    parse_structured_with(text, &ParseOptions::default())
}

pub fn parse_structured_with(text: &str, opts: &ParseOptions) -> Result<StructuredRep, SchemaError> {
    let value: Value = serde_json::from_str(text).map_err(|e| SchemaError::MalformedJson(e.to_string()))?;
    from_value(&value, opts)
}

/// Validates an already-parsed JSON value against the representation's shape.
pub fn from_value(value: &Value, opts: &ParseOptions) -> Result<StructuredRep, SchemaError> {
    let obj = value
        .as_object()
        .ok_or_else(|| SchemaError::violation("$", "top level must be a JSON object"))?;
    let core = obj.get("core").ok_or_else(|| SchemaError::violation("$", "missing key `core`"))?;
    let hierarchy = obj
        .get("hierarchy")
        .ok_or_else(|| SchemaError::violation("$", "missing key `hierarchy`"))?;
    if let Some(extra) = obj.keys().find(|k| *k != "core" && *k != "hierarchy") {
        return Err(SchemaError::violation("$", format!("unexpected top-level key `{extra}`")));
    }
    let core = parse_core(core)?;
    let hierarchy = parse_nodes(hierarchy, "hierarchy", 1, opts, true)?;
    Ok(StructuredRep { core, hierarchy })
}

fn parse_core(v: &Value) -> Result<CoreStatement, SchemaError> {
    let obj = v
        .as_object()
        .ok_or_else(|| SchemaError::violation("core", "must be an object"))?;
    if let Some(extra) = obj.keys().find(|k| *k != "label" && *k != "claim") {
        return Err(SchemaError::violation("core", format!("unexpected key `{extra}`")));
    }
    let field = |name: &str| -> Result<String, SchemaError> {
        let path = format!("core.{name}");
        let s = obj
            .get(name)
            .ok_or_else(|| SchemaError::violation(&path, "missing"))?
            .as_str()
            .ok_or_else(|| SchemaError::violation(&path, "must be a string"))?;
        if s.trim().is_empty() {
            return Err(SchemaError::violation(&path, "must be non-empty"));
        }
        Ok(s.to_string())
    };
    Ok(CoreStatement {
        label: field("label")?,
        claim: field("claim")?,
    })
}

fn parse_nodes(
    v: &Value,
    path: &str,
    depth: usize,
    opts: &ParseOptions,
    allow_empty: bool,
) -> Result<Vec<HierarchyNode>, SchemaError> {
    let items = v
        .as_array()
        .ok_or_else(|| SchemaError::violation(path, "must be a list of hierarchy nodes"))?;
    if items.is_empty() && !allow_empty {
        return Err(SchemaError::violation(path, "nested node list must be non-empty"));
    }
    if !items.is_empty() && depth > opts.max_depth {
        return Err(SchemaError::violation(
            path,
            format!("nesting depth exceeds maximum of {}", opts.max_depth),
        ));
    }
    items
        .iter()
        .enumerate()
        .map(|(i, item)| parse_node(item, &format!("{path}[{i}]"), depth, opts))
        .collect()
}

fn parse_node(v: &Value, path: &str, depth: usize, opts: &ParseOptions) -> Result<HierarchyNode, SchemaError> {
    let obj = v
        .as_object()
        .ok_or_else(|| SchemaError::violation(path, "hierarchy node must be an object"))?;
    let relation = obj
        .get("relation")
        .ok_or_else(|| SchemaError::violation(path, "missing key `relation`"))?
        .as_str()
        .ok_or_else(|| SchemaError::violation(format!("{path}.relation"), "must be a string"))?;
    if relation.trim().is_empty() {
        return Err(SchemaError::violation(format!("{path}.relation"), "must be non-empty"));
    }
    let comps_path = format!("{path}.components");
    let comps = obj
        .get("components")
        .ok_or_else(|| SchemaError::violation(path, "missing key `components`"))?
        .as_array()
        .ok_or_else(|| SchemaError::violation(&comps_path, "must be a list"))?;
    if comps.is_empty() {
        return Err(SchemaError::violation(&comps_path, "must be non-empty"));
    }
    let components = comps
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let cpath = format!("{comps_path}[{j}]");
            match c {
                Value::String(s) => Ok(Component::Text(s.clone())),
                Value::Array(_) => parse_nodes(c, &cpath, depth + 1, opts, false).map(Component::Nested),
                _ => Err(SchemaError::violation(cpath, "component must be a string or a list of nodes")),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let extra = obj
        .iter()
        .filter(|(k, _)| *k != "relation" && *k != "components")
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    Ok(HierarchyNode {
        relation: relation.to_string(),
        components,
        extra,
    })
}

/// Compact, key-ordered JSON. Output is a pure function of the value.
pub fn serialize_structured(rep: &StructuredRep) -> String {
    serde_json::to_string(rep).expect("structured representation always serializes")
}

// ---------------------------------------------------------------------------
// Relation catalog

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read relation catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("relation catalog must be a JSON array of strings: {0}")]
    Format(#[from] serde_json::Error),
    #[error("duplicate relation `{0}` in catalog")]
    Duplicate(String),
    #[error("empty relation name in catalog")]
    Empty,
}

/// Reference relation vocabulary. Advisory only: relations outside the
/// catalog are reported, never rejected, while `open_vocabulary` holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationCatalog {
    relations: Vec<String>,
    pub open_vocabulary: bool,
}

fn normalize_relation(s: &str) -> String {
    s.trim().nfc().collect::<String>().to_lowercase()
}

impl RelationCatalog {
    pub fn new<I, S>(relations: I) -> Result<Self, CatalogError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for r in relations {
            let norm = normalize_relation(r.as_ref());
            if norm.is_empty() {
                return Err(CatalogError::Empty);
            }
            if !seen.insert(norm.clone()) {
                return Err(CatalogError::Duplicate(norm));
            }
            out.push(norm);
        }
        Ok(Self {
            relations: out,
            open_vocabulary: true,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let list: Vec<String> = serde_json::from_str(text)?;
        Self::new(list)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn contains(&self, relation: &str) -> bool {
        let norm = normalize_relation(relation);
        self.relations.contains(&norm)
    }
}

impl Default for RelationCatalog {
    fn default() -> Self {
        Self::from_json(DEFAULT_RELATIONS).expect("bundled relation catalog is valid")
    }
}

// ---------------------------------------------------------------------------
// Compression compliance

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    /// Unicode scalar values after NFC normalization.
    #[default]
    Chars,
    /// Tokens from the shared metric tokenizer.
    Tokens,
}

impl LengthUnit {
    pub fn measure(self, text: &str) -> usize {
        match self {
            LengthUnit::Chars => text.nfc().count(),
            LengthUnit::Tokens => crate::metrics::tokenize(text).len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ComplianceConfig {
    pub threshold: f64,
    pub unit: LengthUnit,
}

impl Default for ComplianceConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_COMPRESSION_THRESHOLD,
            unit: LengthUnit::Chars,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FieldRatioViolation {
    pub path: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct ComplianceReport {
    pub field_ratio_violations: Vec<FieldRatioViolation>,
    pub unknown_relations: Vec<String>,
    pub max_depth: usize,
}

impl ComplianceReport {
    pub fn is_clean(&self) -> bool {
        self.field_ratio_violations.is_empty()
    }
}

/// Reports every leaf text field longer than `threshold` times the original
/// sentence, plus relations missing from the catalog. Never rejects.
pub fn check_compliance(
    rep: &StructuredRep,
    original_text: &str,
    catalog: &RelationCatalog,
    cfg: &ComplianceConfig,
) -> ComplianceReport {
    let original_len = cfg.unit.measure(original_text);
    let field_ratio_violations = if original_len == 0 {
        Vec::new()
    } else {
        rep.text_fields()
            .into_iter()
            .filter_map(|(path, text)| {
                let ratio = cfg.unit.measure(text) as f64 / original_len as f64;
                (ratio > cfg.threshold).then_some(FieldRatioViolation { path, ratio })
            })
            .collect()
    };

    let mut seen = BTreeSet::new();
    let unknown_relations = rep
        .relations()
        .into_iter()
        .filter(|r| !catalog.contains(r))
        .filter(|r| seen.insert(r.to_string()))
        .map(str::to_string)
        .collect();

    ComplianceReport {
        field_ratio_violations,
        unknown_relations,
        max_depth: rep.depth(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"core":{"label":"finding","claim":"X increases Y"},"hierarchy":[]}"#;

    fn rep_with_claim(claim: &str) -> StructuredRep {
        StructuredRep {
            core: CoreStatement {
                label: "finding".into(),
                claim: claim.into(),
            },
            hierarchy: vec![HierarchyNode::new("frobnicates", vec![Component::Text("short".into())])],
        }
    }

    #[test]
    fn minimal_instance_parses() {
        let rep = parse_structured(MINIMAL).unwrap();
        assert_eq!(rep.core.label, "finding");
        assert!(rep.hierarchy.is_empty());
        assert_eq!(serialize_structured(&rep), MINIMAL);
    }

    #[test]
    fn rejects_empty_label_and_missing_core() {
        let empty = r#"{"core":{"label":"","claim":"c"},"hierarchy":[]}"#;
        assert!(matches!(parse_structured(empty), Err(SchemaError::SchemaViolation { .. })));
        let missing = r#"{"hierarchy":[]}"#;
        assert!(matches!(parse_structured(missing), Err(SchemaError::SchemaViolation { .. })));
    }

    #[test]
    fn malformed_versus_wrong_shape() {
        assert!(matches!(parse_structured("{\"core\":"), Err(SchemaError::MalformedJson(_))));
        assert!(matches!(parse_structured("[]"), Err(SchemaError::SchemaViolation { .. })));
        let non_list = r#"{"core":{"label":"a","claim":"b"},"hierarchy":{}}"#;
        assert!(matches!(parse_structured(non_list), Err(SchemaError::SchemaViolation { .. })));
        let extra = r#"{"core":{"label":"a","claim":"b"},"hierarchy":[],"more":1}"#;
        assert!(matches!(parse_structured(extra), Err(SchemaError::SchemaViolation { .. })));
        let blank_rel = r#"{"core":{"label":"a","claim":"b"},"hierarchy":[{"relation":" ","components":["x"]}]}"#;
        assert!(matches!(parse_structured(blank_rel), Err(SchemaError::SchemaViolation { .. })));
        let no_comps = r#"{"core":{"label":"a","claim":"b"},"hierarchy":[{"relation":"r","components":[]}]}"#;
        assert!(matches!(parse_structured(no_comps), Err(SchemaError::SchemaViolation { .. })));
    }

    #[test]
    fn depth_limit_is_enforced() {
        fn nested(depth: usize) -> String {
            let mut s = r#"{"relation":"r","components":["leaf"]}"#.to_string();
            for _ in 1..depth {
                s = format!(r#"{{"relation":"r","components":[[{s}]]}}"#);
            }
            format!(r#"{{"core":{{"label":"a","claim":"b"}},"hierarchy":[{s}]}}"#)
        }
        assert_eq!(parse_structured(&nested(8)).unwrap().depth(), 8);
        assert!(parse_structured(&nested(9)).is_err());
        let opts = ParseOptions { max_depth: 9 };
        assert!(parse_structured_with(&nested(9), &opts).is_ok());
    }

    #[test]
    fn extra_node_keys_are_preserved() {
        let text = r#"{"core":{"label":"a","claim":"b"},"hierarchy":[{"relation":"r","components":["x"],"weight":2,"alpha":"z"}]}"#;
        let rep = parse_structured(text).unwrap();
        assert_eq!(rep.hierarchy[0].extra.len(), 2);
        assert_eq!(
            serialize_structured(&rep),
            r#"{"core":{"label":"a","claim":"b"},"hierarchy":[{"relation":"r","components":["x"],"alpha":"z","weight":2}]}"#
        );
    }

    #[test]
    fn compliance_flags_field_over_threshold() {
        let original = "a".repeat(100);
        let catalog = RelationCatalog::default();
        let rep = rep_with_claim(&"c".repeat(31));
        let report = check_compliance(&rep, &original, &catalog, &ComplianceConfig::default());
        assert_eq!(report.field_ratio_violations.len(), 1);
        assert_eq!(report.field_ratio_violations[0].path, "core.claim");
        assert!((report.field_ratio_violations[0].ratio - 0.31).abs() < 1e-12);

        let ok = rep_with_claim(&"c".repeat(30));
        assert!(check_compliance(&ok, &original, &catalog, &ComplianceConfig::default()).is_clean());
    }

    #[test]
    fn unknown_relation_is_reported_not_rejected() {
        let rep = rep_with_claim("short claim");
        let report = check_compliance(&rep, "a sentence of moderate length here", &RelationCatalog::default(), &ComplianceConfig::default());
        assert_eq!(report.unknown_relations, vec!["frobnicates".to_string()]);
        assert_eq!(report.max_depth, 1);
    }

    #[test]
    fn default_catalog_has_seventeen_entries() {
        let cat = RelationCatalog::default();
        assert_eq!(cat.len(), 17);
        assert!(cat.contains("Condition "));
        assert!(RelationCatalog::new(["cause", "Cause"]).is_err());
    }

    #[test]
    fn token_unit_counts_tokens() {
        assert_eq!(LengthUnit::Tokens.measure("The cat, sat."), 5);
        assert_eq!(LengthUnit::Chars.measure("e\u{301}"), 1);
    }
}
