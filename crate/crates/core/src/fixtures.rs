//! Bundled two-domain fixtures used by the end-to-end demo.
//!
//! Corpus A (harbor domain) is read by the teacher; corpus B (finance
//! domain) is the student's own pretraining text. Both probe tasks are drawn
//! from domain A.

pub const CORPUS_A: &str = include_str!("../fixtures/corpus_a.jsonl");
pub const CORPUS_B: &str = include_str!("../fixtures/corpus_b.jsonl");

/// `(file name, contents)` of every bundled task file.
pub const TASKS: [(&str, &str); 2] = [
    (
        "entity_probe.jsonl",
        include_str!("../fixtures/tasks/entity_probe.jsonl"),
    ),
    (
        "question_probe.jsonl",
        include_str!("../fixtures/tasks/question_probe.jsonl"),
    ),
];
