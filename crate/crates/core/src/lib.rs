//! Reading-behavior distillation.
//!
//! A teacher model reads every sentence of a general corpus and produces two
//! kinds of reading behavior: a named-entity description and a
//! question/answer pair. Those responses are interleaved with their source
//! sentences into training passages, mixed with the original passages, and
//! used to train a student language model. The student is then evaluated on
//! multiple-choice tasks by average per-token log-probability, and its
//! proximity to the teacher is measured by sequence-level cross entropy.
//!
//! Pipeline stages map onto modules:
//!
//! - [`corpus`]: document ingestion and sentence segmentation
//! - [`prompt`]: teaching prompts and downstream task templates
//! - [`teacher`]: mock or remote teacher, validation, resumable synthesis
//! - [`compose`]: training passages, ablation filters, seeded mixing
//! - [`lm`]: interpolated add-k n-gram student and scorer backends
//! - [`eval`]: multiple-choice scoring, reports, task splits
//! - [`analysis`]: teacher/student cross entropy and data-size scaling
//!
//! [`synthetic`] generates the seeded two-domain fixtures bundled in
//! [`fixtures`].

pub mod analysis;
pub mod compose;
pub mod corpus;
pub mod eval;
pub mod exec;
pub mod fixtures;
pub mod jsonl;
pub mod lm;
mod net;
pub mod prompt;
pub mod seed;
pub mod synthetic;
pub mod teacher;

pub use compose::{DocKind, TrainingDoc};
pub use corpus::{Passage, RawDocument, Sentence};
pub use eval::{EvalReport, Prediction, TaskInstance};
pub use lm::{NGramModel, Scorer};
pub use teacher::{BehaviorKind, BehaviorRecord};

/// Hex-encoded SHA-256 of `bytes`.
pub fn content_digest(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
