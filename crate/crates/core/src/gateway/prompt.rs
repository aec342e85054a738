use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::GatewayError;
use crate::schema::{serialize_structured, RelationCatalog, StructuredRep};

const GENERATE_JSON: &str = include_str!("../../assets/prompts/generate_json.toml");
const RECONSTRUCT: &str = include_str!("../../assets/prompts/reconstruct.toml");
const FEW_SHOT: &str = include_str!("../../assets/prompts/few_shot.jsonl");

const INPUT_SLOT: &str = "{{input}}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    GenerateJson,
    Reconstruct,
}

impl TemplateKind {
    fn file_stem(self) -> &'static str {
        match self {
            TemplateKind::GenerateJson => "generate_json",
            TemplateKind::Reconstruct => "reconstruct",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub sentence: String,
    pub json: Value,
}

#[derive(Debug, Clone, Deserialize)]
struct TemplateText {
    system: String,
    user: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    pub system_text: String,
    pub user_text: String,
    pub few_shot_examples: Vec<FewShotExample>,
    pub relations: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub enum Payload<'a> {
    Sentence(&'a str),
    Structured(&'a StructuredRep),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

pub fn parse_few_shot(text: &str) -> Result<Vec<FewShotExample>, GatewayError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| GatewayError::Template(format!("few-shot line {}: {e}", i + 1)))
        })
        .collect()
}

impl PromptTemplate {
    pub fn from_parts(
        kind: TemplateKind,
        template_toml: &str,
        few_shot_examples: Vec<FewShotExample>,
        catalog: &RelationCatalog,
    ) -> Result<Self, GatewayError> {
        let text: TemplateText =
            toml::from_str(template_toml).map_err(|e| GatewayError::Template(format!("{}: {e}", kind.file_stem())))?;
        if text.user.matches(INPUT_SLOT).count() != 1 {
            return Err(GatewayError::Template(format!(
                "{}: user text must contain {INPUT_SLOT} exactly once",
                kind.file_stem()
            )));
        }
        if text.system.contains(INPUT_SLOT) {
            return Err(GatewayError::Template(format!(
                "{}: {INPUT_SLOT} is only allowed in the user text",
                kind.file_stem()
            )));
        }
        Ok(Self {
            kind,
            system_text: text.system.trim().to_string(),
            user_text: text.user.trim().to_string(),
            few_shot_examples,
            relations: catalog.relations().to_vec(),
        })
    }

    pub fn builtin(kind: TemplateKind, catalog: &RelationCatalog) -> Self {
        let toml = match kind {
            TemplateKind::GenerateJson => GENERATE_JSON,
            TemplateKind::Reconstruct => RECONSTRUCT,
        };
        let examples = parse_few_shot(FEW_SHOT).expect("bundled few-shot examples parse");
        Self::from_parts(kind, toml, examples, catalog).expect("bundled template is valid")
    }

    /// Loads `<dir>/<kind>.toml` and `<dir>/few_shot.jsonl`, falling back to
    /// the bundled file for whichever is absent.
    pub fn load(kind: TemplateKind, dir: &Path, catalog: &RelationCatalog) -> Result<Self, GatewayError> {
        let read = |name: &str| -> Result<Option<String>, GatewayError> {
            let path = dir.join(name);
            if !path.exists() {
                return Ok(None);
            }
            std::fs::read_to_string(&path)
                .map(Some)
                .map_err(|e| GatewayError::Template(format!("{}: {e}", path.display())))
        };
        let builtin = Self::builtin(kind, catalog);
        let toml = read(&format!("{}.toml", kind.file_stem()))?;
        let examples = match read("few_shot.jsonl")? {
            Some(t) => parse_few_shot(&t)?,
            None => builtin.few_shot_examples.clone(),
        };
        match toml {
            Some(t) => Self::from_parts(kind, &t, examples, catalog),
            None => Ok(Self {
                few_shot_examples: examples,
                ..builtin
            }),
        }
    }

    fn examples_block(&self) -> String {
        self.few_shot_examples
            .iter()
            .map(|ex| {
                let json = serde_json::to_string(&ex.json).expect("value serializes");
                match self.kind {
                    TemplateKind::GenerateJson => format!("Sentence: {}\nJSON: {json}", ex.sentence),
                    TemplateKind::Reconstruct => format!("JSON: {json}\nSentence: {}", ex.sentence),
                }
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn render(&self, payload: Payload<'_>) -> Result<RenderedPrompt, GatewayError> {
        let input = match (self.kind, payload) {
            (TemplateKind::GenerateJson, Payload::Sentence(s)) => s.to_string(),
            (TemplateKind::Reconstruct, Payload::Structured(rep)) => serialize_structured(rep),
            (kind, _) => return Err(GatewayError::SlotMismatch(kind)),
        };
        let relations = self.relations.join(", ");
        let examples = self.examples_block();
        let vars: HashMap<&str, &str> = [
            ("relations", relations.as_str()),
            ("examples", examples.as_str()),
            ("input", input.as_str()),
        ]
        .into_iter()
        .collect();
        Ok(RenderedPrompt {
            system: substitute(&self.system_text, &vars),
            user: substitute(&self.user_text, &vars),
        })
    }
}

/// Single left-to-right pass over `{{name}}` placeholders; substituted text
/// is never rescanned. Unknown placeholders are left as is.
fn substitute(template: &str, vars: &HashMap<&str, &str>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) if vars.contains_key(&after[..end]) => {
                out.push_str(vars[&after[..end]]);
                rest = &after[end + 2..];
            }
            _ => {
                out.push_str("{{");
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{check_compliance, parse_structured, ComplianceConfig};

    fn catalog() -> RelationCatalog {
        RelationCatalog::default()
    }

    #[test]
    fn generate_prompt_contains_sentence_once_and_all_examples() {
        let t = PromptTemplate::builtin(TemplateKind::GenerateJson, &catalog());
        let sentence = "Graphene membranes filter salt ions at room temperature.";
        let p = t.render(Payload::Sentence(sentence)).unwrap();
        let full = format!("{}\n{}", p.system, p.user);
        assert_eq!(full.matches(sentence).count(), 1);
        for ex in &t.few_shot_examples {
            assert!(p.system.contains(&ex.sentence));
        }
        for needle in ["word for word", "30%", "hierarchically", "condition", "exception"] {
            assert!(p.system.contains(needle), "missing {needle}");
        }
        assert_eq!(p, t.render(Payload::Sentence(sentence)).unwrap());
    }

    #[test]
    fn reconstruct_prompt_mentions_core_components_relations() {
        let t = PromptTemplate::builtin(TemplateKind::Reconstruct, &catalog());
        let rep = parse_structured(r#"{"core":{"label":"a","claim":"b"},"hierarchy":[]}"#).unwrap();
        let p = t.render(Payload::Structured(&rep)).unwrap();
        for needle in ["core claim", "hierarchical components", "relation types", "one coherent sentence"] {
            assert!(p.system.contains(needle), "missing {needle}");
        }
        assert!(p.user.contains(&serialize_structured(&rep)));
    }

    #[test]
    fn slot_mismatch() {
        let t = PromptTemplate::builtin(TemplateKind::Reconstruct, &catalog());
        assert!(matches!(t.render(Payload::Sentence("x")), Err(GatewayError::SlotMismatch(_))));
    }

    #[test]
    fn placeholder_text_inside_input_is_not_expanded() {
        let t = PromptTemplate::builtin(TemplateKind::GenerateJson, &catalog());
        let p = t.render(Payload::Sentence("odd {{examples}} text")).unwrap();
        assert!(p.user.contains("odd {{examples}} text"));
    }

    #[test]
    fn template_must_have_one_input_slot() {
        let bad = "system = \"s\"\nuser = \"no slot\"";
        assert!(PromptTemplate::from_parts(TemplateKind::GenerateJson, bad, vec![], &catalog()).is_err());
        let twice = "system = \"s\"\nuser = \"{{input}} {{input}}\"";
        assert!(PromptTemplate::from_parts(TemplateKind::GenerateJson, twice, vec![], &catalog()).is_err());
    }

    #[test]
    fn bundled_examples_follow_the_compression_rule() {
        let examples = parse_few_shot(FEW_SHOT).unwrap();
        assert_eq!(examples.len(), 3);
        for ex in examples {
            let rep = parse_structured(&ex.json.to_string()).unwrap();
            let report = check_compliance(&rep, &ex.sentence, &catalog(), &ComplianceConfig::default());
            assert!(report.is_clean(), "{:?}", report.field_ratio_violations);
        }
    }
}
