//! Deterministic offline teacher.
//!
//! NER: maximal runs of capitalized tokens plus standalone numbers, skipping
//! a capitalized stopword at the start of the sentence. QRA: one question
//! about the first entity (or first token) answered by the sentence itself.

use super::{word_matches, words, BehaviorKind, CallError, Request, TeacherBackend};

pub const MOCK_TEACHER_ID: &str = "mock-v1";

const INITIAL_STOPWORDS: &[&str] = &[
    "a", "after", "all", "an", "and", "are", "as", "at", "be", "before", "but", "by", "each",
    "every", "for", "from", "he", "her", "here", "his", "how", "i", "if", "in", "is", "it", "its",
    "many", "most", "my", "no", "not", "of", "on", "one", "or", "our", "she", "some", "that",
    "the", "their", "there", "these", "they", "this", "those", "to", "was", "we", "were", "what",
    "when", "where", "which", "while", "who", "why", "with", "you", "your",
];

pub struct MockBackend;

impl TeacherBackend for MockBackend {
    fn id(&self) -> String {
        MOCK_TEACHER_ID.to_string()
    }

    fn complete(&self, request: &Request<'_>) -> Result<String, CallError> {
        Ok(match *request {
            Request::Behavior { kind, sentence, .. } => mock_teacher(sentence, kind),
            Request::Task { prompt, candidates } => mock_task_answer(&prompt.text, candidates),
        })
    }
}

fn is_numeric(core: &str) -> bool {
    core.chars().any(|c| c.is_ascii_digit())
        && core
            .chars()
            .all(|c| c.is_ascii_digit() || c == ',' || c == '.')
}

/// Entity spans found by the mock NER rule, in order of first appearance.
pub fn ner_spans(sentence: &str) -> Vec<String> {
    let mut spans: Vec<String> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let flush = |current: &mut Vec<&str>, spans: &mut Vec<String>| {
        if !current.is_empty() {
            let span = current.join(" ");
            if !spans.contains(&span) {
                spans.push(span);
            }
            current.clear();
        }
    };
    for (i, raw) in sentence.split_whitespace().enumerate() {
        let core = raw.trim_matches(|c: char| !c.is_alphanumeric());
        let leading = !raw.starts_with(core);
        let trailing = !raw.ends_with(core);
        if core.is_empty() {
            flush(&mut current, &mut spans);
            continue;
        }
        if leading {
            flush(&mut current, &mut spans);
        }
        if is_numeric(core) {
            flush(&mut current, &mut spans);
            current.push(core);
            flush(&mut current, &mut spans);
            continue;
        }
        let capitalized = core.chars().next().is_some_and(char::is_uppercase);
        let initial_stopword = i == 0 && INITIAL_STOPWORDS.contains(&core.to_lowercase().as_str());
        if capitalized && !initial_stopword {
            current.push(core);
            if trailing {
                flush(&mut current, &mut spans);
            }
        } else {
            flush(&mut current, &mut spans);
        }
    }
    flush(&mut current, &mut spans);
    spans
}

/// Mock reading behavior for a non-empty sentence.
pub fn mock_teacher(sentence: &str, kind: BehaviorKind) -> String {
    let spans = ner_spans(sentence);
    match kind {
        BehaviorKind::Ner => {
            if spans.is_empty() {
                "In this sentence, there are no named entities.".to_string()
            } else {
                spans
                    .iter()
                    .map(|s| format!("In this sentence, \"{s}\" is a named entity."))
                    .collect::<Vec<_>>()
                    .join(" ")
            }
        }
        BehaviorKind::Qra => {
            let subject = spans.into_iter().next().unwrap_or_else(|| {
                let first = sentence.split_whitespace().next().unwrap_or(sentence);
                let core = first.trim_matches(|c: char| !c.is_alphanumeric());
                if core.is_empty() { first } else { core }.to_string()
            });
            format!(
                "Question:\nWhat is stated about \"{subject}\"?\nAnswer:\n{}",
                sentence.trim()
            )
        }
    }
}

/// Picks the candidate with the most whole-word occurrences in the prompt;
/// ties go to the first-listed candidate.
pub fn mock_task_answer(prompt: &str, candidates: &[String]) -> String {
    let prompt_words = words(prompt);
    let mut best: Option<(usize, &String)> = None;
    for c in candidates {
        let n = word_matches(&prompt_words, &words(c)).len();
        if best.is_none_or(|(m, _)| n > m) {
            best = Some((n, c));
        }
    }
    best.map(|(_, c)| c.clone()).unwrap_or_default()
}
