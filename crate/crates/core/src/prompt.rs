//! Teaching prompts and downstream task templates.
//!
//! Templates are data, not code: the defaults under `templates/` are
//! embedded at build time and any of them can be replaced by a JSON file
//! with the same shape.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use crate::teacher::BehaviorKind;

/// Default limit on the length of a sentence placed in a teaching prompt.
pub const DEFAULT_PROMPT_BUDGET_CHARS: usize = 4_000;

const NER_TEMPLATE: &str = include_str!("../templates/ner.json");
const QRA_TEMPLATE: &str = include_str!("../templates/qra.json");
const TASK_TEMPLATES: &[(&str, &str)] = &[
    ("xnli", include_str!("../templates/tasks/xnli.json")),
    ("rte", include_str!("../templates/tasks/rte.json")),
    ("cb", include_str!("../templates/tasks/cb.json")),
    ("paws-x", include_str!("../templates/tasks/paws-x.json")),
    ("boolq", include_str!("../templates/tasks/boolq.json")),
    ("sst2", include_str!("../templates/tasks/sst2.json")),
    ("bigbench", include_str!("../templates/tasks/bigbench.json")),
    (
        "entity_probe",
        include_str!("../templates/tasks/entity_probe.json"),
    ),
];

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("sentence is empty")]
    EmptySentence,
    #[error("sentence of {len} chars exceeds the prompt budget of {budget} chars")]
    OverBudget { len: usize, budget: usize },
    #[error("template `{template}`: missing value for slot `{slot}`")]
    MissingSlot { template: String, slot: String },
    #[error("template `{template}`: unexpected field `{field}`")]
    ExtraField { template: String, field: String },
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("unknown task template `{0}`")]
    UnknownTemplate(String),
    #[error("{path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("template JSON")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub input: String,
    pub output: String,
}

/// Few-shot prompt that asks the teacher for one reading behavior.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeachingTemplate {
    pub kind: BehaviorKind,
    pub instruction: String,
    pub input_header: String,
    /// Empty when the teacher's response carries its own headers (QRA).
    #[serde(default)]
    pub output_header: String,
    pub shots: Vec<Shot>,
}

impl TeachingTemplate {
    pub fn default_for(kind: BehaviorKind) -> Self {
        let raw = match kind {
            BehaviorKind::Ner => NER_TEMPLATE,
            BehaviorKind::Qra => QRA_TEMPLATE,
        };
        Self::from_json(raw).expect("embedded teaching template is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let t: TeachingTemplate = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        Self::from_json(&read_normalized(path)?)
    }

    fn validate(&self) -> Result<(), PromptError> {
        if self.kind == BehaviorKind::Ner && self.shots.is_empty() {
            return Err(PromptError::InvalidTemplate(
                "NER template needs at least one shot".into(),
            ));
        }
        if self.input_header.is_empty() {
            return Err(PromptError::InvalidTemplate("input_header is empty".into()));
        }
        Ok(())
    }

    pub fn id(&self) -> &'static str {
        match self.kind {
            BehaviorKind::Ner => "teach-ner",
            BehaviorKind::Qra => "teach-qra",
        }
    }

    fn push_block(&self, out: &mut String, input: &str) {
        out.push_str(&self.input_header);
        out.push('\n');
        out.push_str(input);
        if !self.output_header.is_empty() {
            out.push('\n');
            out.push_str(&self.output_header);
        }
    }
}

/// A rendered prompt and its content digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub hash: String,
    pub template_id: String,
}

impl RenderedPrompt {
    pub fn new(text: String, template_id: impl Into<String>) -> Self {
        let hash = crate::content_digest(text.as_bytes());
        RenderedPrompt {
            text,
            hash,
            template_id: template_id.into(),
        }
    }
}

/// Renders instruction, shots and the sentence block, one blank line between
/// blocks. The prompt ends with the output header (or the sentence when the
/// template has none) so the teacher continues from there.
pub fn render_teaching_prompt(
    template: &TeachingTemplate,
    sentence: &str,
    budget_chars: usize,
) -> Result<RenderedPrompt, PromptError> {
    if sentence.trim().is_empty() {
        return Err(PromptError::EmptySentence);
    }
    let len = sentence.chars().count();
    if len > budget_chars {
        return Err(PromptError::OverBudget {
            len,
            budget: budget_chars,
        });
    }
    let mut text = String::new();
    text.push_str(&template.instruction);
    text.push_str("\n\n");
    for shot in &template.shots {
        template.push_block(&mut text, &shot.input);
        text.push('\n');
        text.push_str(&shot.output);
        text.push_str("\n\n");
    }
    template.push_block(&mut text, sentence);
    Ok(RenderedPrompt::new(text, template.id()))
}

/// Downstream task prompt with `{slot}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTemplate {
    pub task_id: String,
    pub body: String,
    pub slots: Vec<String>,
    #[serde(default)]
    pub candidates: Vec<String>,
}

impl TaskTemplate {
    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let t: TaskTemplate = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        Self::from_json(&read_normalized(path)?)
    }

    /// One of the bundled task templates (`xnli`, `rte`, `cb`, `paws-x`,
    /// `boolq`, `sst2`, `bigbench`, `entity_probe`).
    pub fn builtin(task_id: &str) -> Result<Self, PromptError> {
        TASK_TEMPLATES
            .iter()
            .find(|(id, _)| *id == task_id)
            .map(|(_, raw)| Self::from_json(raw))
            .unwrap_or_else(|| Err(PromptError::UnknownTemplate(task_id.to_string())))
    }

    pub fn builtin_ids() -> impl Iterator<Item = &'static str> {
        TASK_TEMPLATES.iter().map(|(id, _)| *id)
    }

    fn validate(&self) -> Result<(), PromptError> {
        let slots: HashSet<&str> = self.slots.iter().map(String::as_str).collect();
        if slots.len() != self.slots.len() {
            return Err(PromptError::InvalidTemplate(format!(
                "`{}` lists a slot twice",
                self.task_id
            )));
        }
        for seg in parse_body(&self.body) {
            if let Segment::Slot(name) = seg {
                if !slots.contains(name) {
                    return Err(PromptError::InvalidTemplate(format!(
                        "`{}`: placeholder `{{{name}}}` is not a declared slot",
                        self.task_id
                    )));
                }
            }
        }
        let distinct: HashSet<&String> = self.candidates.iter().collect();
        if distinct.len() != self.candidates.len() {
            return Err(PromptError::InvalidTemplate(format!(
                "`{}` has duplicate candidates",
                self.task_id
            )));
        }
        Ok(())
    }
}

enum Segment<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn is_slot_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Splits a body into literal text and `{name}` placeholders. Braces that do
/// not enclose a valid slot name are literal.
fn parse_body(body: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_slot_name(&after[..close]) => {
                if open > 0 {
                    out.push(Segment::Text(&rest[..open]));
                }
                out.push(Segment::Slot(&after[..close]));
                rest = &after[close + 1..];
            }
            _ => {
                out.push(Segment::Text(&rest[..=open]));
                rest = after;
            }
        }
    }
    if !rest.is_empty() {
        out.push(Segment::Text(rest));
    }
    out
}

/// Substitutes every placeholder in one pass; field values are inserted
/// verbatim and never rescanned.
pub fn render_task_prompt<V: AsRef<str>>(
    template: &TaskTemplate,
    fields: &IndexMap<String, V>,
) -> Result<RenderedPrompt, PromptError> {
    for slot in &template.slots {
        if !fields.contains_key(slot) {
            return Err(PromptError::MissingSlot {
                template: template.task_id.clone(),
                slot: slot.clone(),
            });
        }
    }
    if let Some(extra) = fields.keys().find(|k| !template.slots.contains(k)) {
        return Err(PromptError::ExtraField {
            template: template.task_id.clone(),
            field: extra.clone(),
        });
    }
    let mut text = String::with_capacity(template.body.len());
    for seg in parse_body(&template.body) {
        match seg {
            Segment::Text(t) => text.push_str(t),
            Segment::Slot(name) => text.push_str(fields[name].as_ref()),
        }
    }
    Ok(RenderedPrompt::new(text, template.task_id.clone()))
}

/// Loads every `*.json` task template in a directory, keyed by task id.
pub fn load_task_templates(dir: &Path) -> Result<BTreeMap<String, TaskTemplate>, PromptError> {
    let io_err = |source| PromptError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut out = BTreeMap::new();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
        .collect();
    paths.sort();
    for p in paths {
        let t = TaskTemplate::load(&p)?;
        out.insert(t.task_id.clone(), t);
    }
    Ok(out)
}

/// Reads a template file with CRLF normalized to LF.
fn read_normalized(path: &Path) -> Result<String, PromptError> {
    std::fs::read_to_string(path)
        .map(|s| s.replace("\r\n", "\n"))
        .map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const BELMONT: &str = "Belmont Estate is on the market for $63 million and boasts roughly 22,000 square feet of luxurious finishes and elaborate architecture on 1.28 acres.";

    fn fields(pairs: &[(&str, &str)]) -> IndexMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn ner_prompt_ends_with_sentence_then_output() {
        let t = TeachingTemplate::default_for(BehaviorKind::Ner);
        assert_eq!(t.shots.len(), 3);
        let p = render_teaching_prompt(&t, BELMONT, DEFAULT_PROMPT_BUDGET_CHARS).unwrap();
        assert!(p
            .text
            .starts_with("Perform named entity recognition on a given sentence"));
        assert!(p
            .text
            .ends_with(&format!("Enter a sentence:\n{BELMONT}\nOutput:")));
        assert!(p.text.contains(
            "Enter a sentence:\nI just bought a new MacBook Pro from Apple.\nOutput:\nIn this sentence, \"Apple\" is an organization name entity"
        ));
    }

    #[test]
    fn qra_prompt_ends_after_sentence_block() {
        let t = TeachingTemplate::default_for(BehaviorKind::Qra);
        assert_eq!(t.shots.len(), 1);
        let p = render_teaching_prompt(&t, BELMONT, DEFAULT_PROMPT_BUDGET_CHARS).unwrap();
        assert!(p.text.starts_with("Ask a question to the input sentence"));
        assert!(p.text.ends_with(&format!("The sentence:\n{BELMONT}")));
        assert!(p.text.contains("Question:\nWhat did he need to do in order to graduate with honors?\nAnswer:\nMaintain a high GPA throughout college."));
    }

    #[test]
    fn rendering_is_deterministic() {
        let t = TeachingTemplate::default_for(BehaviorKind::Ner);
        let a = render_teaching_prompt(&t, BELMONT, 4000).unwrap();
        let b = render_teaching_prompt(&t, BELMONT, 4000).unwrap();
        assert_eq!(a.hash, b.hash);
        assert_eq!(a.hash, crate::content_digest(a.text.as_bytes()));
    }

    #[test]
    fn budget_and_empty_sentence() {
        let t = TeachingTemplate::default_for(BehaviorKind::Ner);
        let long = "x".repeat(11);
        assert!(matches!(
            render_teaching_prompt(&t, &long, 10),
            Err(PromptError::OverBudget {
                len: 11,
                budget: 10
            })
        ));
        assert!(matches!(
            render_teaching_prompt(&t, "  ", 10),
            Err(PromptError::EmptySentence)
        ));
    }

    #[test]
    fn ner_template_needs_a_shot() {
        let raw = r#"{"kind":"NER","instruction":"i","input_header":"In:","output_header":"Out:","shots":[]}"#;
        assert!(TeachingTemplate::from_json(raw).is_err());
    }

    #[test]
    fn xnli_rendering() {
        let t = TaskTemplate::builtin("xnli").unwrap();
        let p = render_task_prompt(&t, &fields(&[("premise", "P"), ("hypothesis", "H")])).unwrap();
        assert_eq!(
            p.text,
            "P\nQuestion: Does this imply that \"H\"? Yes, no or maybe?\nAnswer:"
        );
        assert_eq!(t.candidates, ["Yes", "No", "Maybe"]);
    }

    #[test]
    fn sst2_rendering() {
        let t = TaskTemplate::builtin("sst2").unwrap();
        let p = render_task_prompt(&t, &fields(&[("sentence", "Great film.")])).unwrap();
        assert!(p.text.contains("positive or negative sentiment"));
        assert!(p.text.contains("Sentence: Great film.\nAnswer:"));
        assert_eq!(t.candidates, ["positive", "negative"]);
    }

    #[test]
    fn zero_slot_template_is_identity() {
        let t = TaskTemplate {
            task_id: "plain".into(),
            body: "Just text {not a slot}.".into(),
            slots: vec![],
            candidates: vec![],
        };
        t.validate().unwrap();
        let p = render_task_prompt(&t, &IndexMap::<String, String>::new()).unwrap();
        assert_eq!(p.text, t.body);
    }

    #[test]
    fn missing_and_extra_fields() {
        let t = TaskTemplate::builtin("xnli").unwrap();
        let err = render_task_prompt(&t, &fields(&[("premise", "P")])).unwrap_err();
        assert!(matches!(err, PromptError::MissingSlot { ref slot, .. } if slot == "hypothesis"));
        let err = render_task_prompt(
            &t,
            &fields(&[("premise", "P"), ("hypothesis", "H"), ("x", "y")]),
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::ExtraField { ref field, .. } if field == "x"));
    }

    #[test]
    fn values_are_not_rescanned() {
        let t = TaskTemplate::builtin("boolq").unwrap();
        let p = render_task_prompt(
            &t,
            &fields(&[("passage", "{question}"), ("question", "Q?")]),
        )
        .unwrap();
        assert_eq!(p.text, "{question}\nQuestion: Q?\nAnswer:");
    }

    #[test]
    fn undeclared_placeholder_rejected() {
        let raw = r#"{"task_id":"t","body":"{a} {b}","slots":["a"]}"#;
        assert!(TaskTemplate::from_json(raw).is_err());
        let raw = r#"{"task_id":"t","body":"{a}","slots":["a"],"candidates":["x","x"]}"#;
        assert!(TaskTemplate::from_json(raw).is_err());
    }

    #[test]
    fn all_builtins_load() {
        for id in TaskTemplate::builtin_ids() {
            let t = TaskTemplate::builtin(id).unwrap();
            assert_eq!(t.task_id, id);
        }
    }

    proptest! {
        #[test]
        fn teaching_prompt_is_injective(a in "[A-Za-z ,.]{1,40}", b in "[A-Za-z ,.]{1,40}") {
            prop_assume!(a.trim() != "" && b.trim() != "" && a != b);
            let t = TeachingTemplate::default_for(BehaviorKind::Ner);
            let pa = render_teaching_prompt(&t, &a, 4000).unwrap();
            let pb = render_teaching_prompt(&t, &b, 4000).unwrap();
            prop_assert_ne!(pa.text, pb.text);
        }
    }
}
