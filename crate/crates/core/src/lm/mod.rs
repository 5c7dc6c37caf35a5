//! Student language model and scoring backends.
//!
//! The built-in student is an interpolated add-k n-gram model
//! ([`NGramModel`]). Evaluation and analysis only see the [`Scorer`] trait,
//! so a remote model exposing per-token log-probabilities
//! ([`RemoteScorer`]) can stand in for it.

mod model;
mod remote;
mod tokenize;

pub use model::{LmConfig, LmError, NGramModel, Vocabulary, BOS, EOS, MODEL_FORMAT_VERSION, UNK};
pub use remote::{RemoteScorer, DEFAULT_LOGPROBS_PATH};
pub use tokenize::{tokenize, tokenize_with};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("continuation is empty")]
    EmptyContinuation,
    #[error("no documents to score")]
    NoDocuments,
    #[error("scorer transport failure: {0}")]
    Transport(String),
    #[error("scorer protocol error: {0}")]
    Protocol(String),
}

/// Anything that can assign per-token log-probabilities to text.
pub trait Scorer: Send + Sync {
    fn id(&self) -> String;

    /// Log-probabilities of the tokens of `continuation`, each conditioned on
    /// `prompt` followed by the earlier continuation tokens. Prompt tokens are
    /// not scored.
    fn continuation_logprobs(
        &self,
        prompt: &str,
        continuation: &str,
    ) -> Result<Vec<TokenLogprob>, ScoreError>;

    /// Negative log-likelihood of a whole document as a training target
    /// (for the n-gram model this includes the end-of-sequence token).
    fn document_nll(&self, text: &str) -> Result<f64, ScoreError> {
        Ok(-self
            .continuation_logprobs("", text)?
            .iter()
            .map(|t| t.logprob)
            .sum::<f64>())
    }
}

/// Per-token log-probabilities of `text` from the start of a sequence.
pub fn sequence_logprobs(
    backend: &dyn Scorer,
    text: &str,
) -> Result<Vec<TokenLogprob>, ScoreError> {
    backend.continuation_logprobs("", text)
}

/// Mean log-probability of the continuation tokens given the prompt.
pub fn avg_logprob(
    backend: &dyn Scorer,
    prompt: &str,
    continuation: &str,
) -> Result<f64, ScoreError> {
    let lps = backend.continuation_logprobs(prompt, continuation)?;
    if lps.is_empty() {
        return Err(ScoreError::EmptyContinuation);
    }
    Ok(lps.iter().map(|t| t.logprob).sum::<f64>() / lps.len() as f64)
}

/// Average over documents of the summed token negative log-likelihood.
pub fn nll<S: AsRef<str>>(backend: &dyn Scorer, docs: &[S]) -> Result<f64, ScoreError> {
    if docs.is_empty() {
        return Err(ScoreError::NoDocuments);
    }
    let mut total = 0.0;
    for d in docs {
        total += backend.document_nll(d.as_ref())?;
    }
    Ok(total / docs.len() as f64)
}

/// Assigns probability `1 / vocab_size` to every token.
#[derive(Debug, Clone, Copy)]
pub struct UniformScorer {
    pub vocab_size: usize,
}

impl Scorer for UniformScorer {
    fn id(&self) -> String {
        format!("uniform-{}", self.vocab_size)
    }

    fn continuation_logprobs(
        &self,
        _prompt: &str,
        continuation: &str,
    ) -> Result<Vec<TokenLogprob>, ScoreError> {
        let lp = -(self.vocab_size as f64).ln();
        Ok(tokenize(continuation)
            .into_iter()
            .map(|token| TokenLogprob { token, logprob: lp })
            .collect())
    }
}
