//! Interpolated add-k n-gram model.
//!
//! For a history `h` and token `t`:
//!
//! ```text
//! P(t | h) = sum_j  w_j * (c_j(ctx_j, t) + k) / (c_j(ctx_j) + k * V)
//! ```
//!
//! where `ctx_j` is the last `j - 1` tokens of the BOS-padded history,
//! `c_j(ctx)` the number of tokens observed after `ctx`, and `V` the full
//! vocabulary size (specials included). Each order's distribution sums to 1
//! over the vocabulary, so the mixture does too.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use super::{tokenize_with, ScoreError, Scorer, TokenLogprob};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const MODEL_FORMAT_VERSION: u32 = 1;

const BOS_ID: u32 = 0;
const EOS_ID: u32 = 1;
const UNK_ID: u32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("model file")]
    Io(#[from] std::io::Error),
    #[error("model JSON")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("corrupt model: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub order: usize,
    pub k: f64,
    /// Per-order interpolation weights, unigram first. `None` means equal
    /// weights.
    pub weights: Option<Vec<f64>>,
    pub lowercase: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            order: 3,
            k: 0.1,
            weights: None,
            lowercase: true,
        }
    }
}

impl LmConfig {
    pub fn with_order(order: usize) -> Self {
        LmConfig {
            order,
            ..LmConfig::default()
        }
    }

    pub fn resolved_weights(&self) -> Result<Vec<f64>, LmError> {
        if self.order == 0 {
            return Err(LmError::Config("order must be at least 1".into()));
        }
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(LmError::Config("k must be a finite positive number".into()));
        }
        let w = match &self.weights {
            Some(w) => w.clone(),
            None => vec![1.0 / self.order as f64; self.order],
        };
        if w.len() != self.order {
            return Err(LmError::Config(format!(
                "{} weights given for order {}",
                w.len(),
                self.order
            )));
        }
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(LmError::Config(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(LmError::Config(format!("weights sum to {sum}, not 1")));
        }
        Ok(w)
    }
}

/// Dense token ids; `<s>`, `</s>` and `<unk>` take ids 0, 1 and 2, the
/// remaining tokens follow in byte order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: BTreeSet<String>) -> Result<Self, LmError> {
        let mut all: Vec<String> = vec![BOS.into(), EOS.into(), UNK.into()];
        for t in tokens {
            if t == BOS || t == EOS || t == UNK {
                continue;
            }
            all.push(t);
        }
        Self::from_list(all)
    }

    fn from_list(tokens: Vec<String>) -> Result<Self, LmError> {
        if tokens.len() < 3 || tokens[0] != BOS || tokens[1] != EOS || tokens[2] != UNK {
            return Err(LmError::Corrupt(
                "vocabulary must start with <s>, </s>, <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(LmError::Corrupt(format!("token `{t}` appears twice")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

/// Trained model; immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    k: f64,
    weights: Vec<f64>,
    lowercase: bool,
    vocab: Vocabulary,
    /// `tables[j - 1]` holds counts for order `j`, keyed by the `j - 1`
    /// preceding ids.
    tables: Vec<HashMap<Vec<u32>, ContextCounts>>,
}

impl NGramModel {
    /// Counts every order-1..=order n-gram of every document, with the
    /// history padded by `order - 1` BOS tokens and EOS appended.
    pub fn train<I, S>(docs: I, config: &LmConfig) -> Result<Self, LmError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let weights = config.resolved_weights()?;
        let tokenized: Vec<Vec<String>> = docs
            .into_iter()
            .map(|d| tokenize_with(d.as_ref(), config.lowercase))
            .filter(|t| !t.is_empty())
            .collect();
        if tokenized.is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        let vocab = Vocabulary::from_tokens(tokenized.iter().flatten().cloned().collect())?;
        let order = config.order;
        let mut tables: Vec<HashMap<Vec<u32>, ContextCounts>> = vec![HashMap::new(); order];
        for doc in &tokenized {
            let mut ids: Vec<u32> = vec![BOS_ID; order - 1];
            ids.extend(doc.iter().map(|t| vocab.id(t)));
            ids.push(EOS_ID);
            for pos in order - 1..ids.len() {
                let t = ids[pos];
                for j in 1..=order {
                    let ctx = ids[pos + 1 - j..pos].to_vec();
                    let entry = tables[j - 1].entry(ctx).or_default();
                    entry.total += 1;
                    *entry.next.entry(t).or_default() += 1;
                }
            }
        }
        Ok(NGramModel {
            order,
            k: config.k,
            weights,
            lowercase: config.lowercase,
            vocab,
            tables,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        tokenize_with(text, self.lowercase)
    }

    /// Raw count of `token` following exactly `context` (`context.len() + 1`
    /// is the n-gram order). Context tokens may include `<s>`.
    pub fn count(&self, context: &[&str], token: &str) -> u64 {
        let Some(table) = self.tables.get(context.len()) else {
            return 0;
        };
        let ctx: Vec<u32> = context.iter().map(|t| self.vocab.id(t)).collect();
        table
            .get(&ctx)
            .and_then(|c| c.next.get(&self.vocab.id(token)).copied())
            .unwrap_or(0)
    }

    fn padded(&self, history: &[String]) -> Vec<u32> {
        let mut ids = vec![BOS_ID; self.order - 1];
        ids.extend(history.iter().map(|t| self.vocab.id(t)));
        ids
    }

    /// `ids` must already carry at least `order - 1` ids of padding.
    fn prob_ids(&self, ids: &[u32], t: u32) -> f64 {
        let v = self.vocab.len() as f64;
        let mut p = 0.0;
        for j in 1..=self.order {
            let w = self.weights[j - 1];
            if w == 0.0 {
                continue;
            }
            let ctx = &ids[ids.len() + 1 - j..];
            let (c, total) = match self.tables[j - 1].get(ctx) {
                Some(cc) => (cc.next.get(&t).copied().unwrap_or(0), cc.total),
                None => (0, 0),
            };
            p += w * (c as f64 + self.k) / (total as f64 + self.k * v);
        }
        p
    }

    /// P(token | history); `history` is unpadded and tokens outside the
    /// vocabulary count as `<unk>`.
    pub fn prob(&self, history: &[String], token: &str) -> f64 {
        self.prob_ids(&self.padded(history), self.vocab.id(token))
    }

    /// The full next-token distribution after `history`, indexed by id.
    pub fn distribution(&self, history: &[String]) -> Vec<f64> {
        let ids = self.padded(history);
        (0..self.vocab.len() as u32)
            .map(|t| self.prob_ids(&ids, t))
            .collect()
    }

    fn score_ids(&self, prefix: &[String], tokens: &[String], with_eos: bool) -> Vec<f64> {
        let mut ids = self.padded(prefix);
        let mut out = Vec::with_capacity(tokens.len() + 1);
        for t in tokens {
            let id = self.vocab.id(t);
            out.push(self.prob_ids(&ids, id).ln());
            ids.push(id);
        }
        if with_eos {
            out.push(self.prob_ids(&ids, EOS_ID).ln());
        }
        out
    }

    /// SHA-256 of the serialized model.
    pub fn digest(&self) -> String {
        crate::content_digest(self.to_json().as_bytes())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, LmError> {
        let f: ModelFile = serde_json::from_str(text)?;
        Self::from_file(f)
    }

    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LmError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn to_file(&self) -> ModelFile {
        let counts = self
            .tables
            .iter()
            .map(|table| {
                table
                    .iter()
                    .map(|(ctx, cc)| {
                        let key = ctx
                            .iter()
                            .map(|&id| self.vocab.token(id))
                            .collect::<Vec<_>>()
                            .join(" ");
                        let next = cc
                            .next
                            .iter()
                            .map(|(&id, &n)| (self.vocab.token(id).to_string(), n))
                            .collect();
                        (key, next)
                    })
                    .collect()
            })
            .collect();
        ModelFile {
            counts,
            format_version: MODEL_FORMAT_VERSION,
            k: self.k,
            lowercase: self.lowercase,
            order: self.order,
            vocab: self.vocab.tokens.clone(),
            weights: self.weights.clone(),
        }
    }

    fn from_file(f: ModelFile) -> Result<Self, LmError> {
        if f.format_version != MODEL_FORMAT_VERSION {
            return Err(LmError::Version(f.format_version));
        }
        let config = LmConfig {
            order: f.order,
            k: f.k,
            weights: Some(f.weights),
            lowercase: f.lowercase,
        };
        let weights = config.resolved_weights()?;
        let vocab = Vocabulary::from_list(f.vocab)?;
        if f.counts.len() != f.order {
            return Err(LmError::Corrupt(format!(
                "{} count tables for order {}",
                f.counts.len(),
                f.order
            )));
        }
        let lookup = |tok: &str| {
            vocab
                .index
                .get(tok)
                .copied()
                .ok_or_else(|| LmError::Corrupt(format!("token `{tok}` not in vocabulary")))
        };
        let mut tables = Vec::with_capacity(f.order);
        for (j, table) in f.counts.into_iter().enumerate() {
            let mut out = HashMap::with_capacity(table.len());
            for (key, next) in table {
                let ctx: Vec<u32> = key
                    .split_whitespace()
                    .map(lookup)
                    .collect::<Result<_, _>>()?;
                if ctx.len() != j {
                    return Err(LmError::Corrupt(format!(
                        "context `{key}` in order-{} table",
                        j + 1
                    )));
                }
                let mut cc = ContextCounts::default();
                for (tok, n) in next {
                    cc.total += n;
                    cc.next.insert(lookup(&tok)?, n);
                }
                out.insert(ctx, cc);
            }
            tables.push(out);
        }
        Ok(NGramModel {
            order: f.order,
            k: f.k,
            weights,
            lowercase: f.lowercase,
            vocab,
            tables,
        })
    }
}

/// On-disk model layout. Fields are declared in alphabetical order and all
/// maps are ordered so the JSON is canonical.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    counts: Vec<BTreeMap<String, BTreeMap<String, u64>>>,
    format_version: u32,
    k: f64,
    lowercase: bool,
    order: usize,
    vocab: Vec<String>,
    weights: Vec<f64>,
}

impl Scorer for NGramModel {
    fn id(&self) -> String {
        format!("ngram-{}:{}", self.order, &self.digest()[..12])
    }

    fn continuation_logprobs(
        &self,
        prompt: &str,
        continuation: &str,
    ) -> Result<Vec<TokenLogprob>, ScoreError> {
        let prefix = self.tokenize(prompt);
        let tokens = self.tokenize(continuation);
        let lps = self.score_ids(&prefix, &tokens, false);
        Ok(tokens
            .into_iter()
            .zip(lps)
            .map(|(token, logprob)| TokenLogprob { token, logprob })
            .collect())
    }

    fn document_nll(&self, text: &str) -> Result<f64, ScoreError> {
        let tokens = self.tokenize(text);
        Ok(-self.score_ids(&[], &tokens, true).iter().sum::<f64>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{avg_logprob, nll, sequence_logprobs};
    use proptest::prelude::*;

    fn bigram() -> LmConfig {
        LmConfig {
            order: 2,
            k: 0.1,
            weights: Some(vec![0.0, 1.0]),
            lowercase: true,
        }
    }

    fn s(x: &[&str]) -> Vec<String> {
        x.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn hand_counts() {
        let m = NGramModel::train(["a b a b"], &bigram()).unwrap();
        assert_eq!(m.count(&["a"], "b"), 2);
        assert_eq!(m.count(&["b"], "a"), 1);
        assert_eq!(m.count(&[BOS], "a"), 1);
        assert_eq!(m.count(&["b"], EOS), 1);
        assert_eq!(m.count(&[], "a"), 2);
        assert_eq!(m.vocab().len(), 5);
    }

    #[test]
    fn bigram_logprob_formula() {
        let m = NGramModel::train(["a b a b"], &bigram()).unwrap();
        let (k, v): (f64, f64) = (0.1, 5.0);
        let lps = m.continuation_logprobs("a", "b").unwrap();
        assert_eq!(lps.len(), 1);
        let expected = ((2.0 + k) / (2.0 + k * v)).ln();
        assert!((lps[0].logprob - expected).abs() < 1e-12);
    }

    #[test]
    fn unigram_prefers_seen_token_over_unk() {
        let m = NGramModel::train(["x"], &LmConfig::with_order(1)).unwrap();
        assert!(m.prob(&[], "x") > m.prob(&[], UNK));
        assert_eq!(m.prob(&[], "never-seen"), m.prob(&[], UNK));
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(matches!(
            NGramModel::train(Vec::<String>::new(), &LmConfig::default()),
            Err(LmError::EmptyCorpus)
        ));
        assert!(matches!(
            NGramModel::train(["   "], &LmConfig::default()),
            Err(LmError::EmptyCorpus)
        ));
    }

    #[test]
    fn bad_configs() {
        let mut c = LmConfig {
            weights: Some(vec![0.5, 0.5]),
            ..LmConfig::default()
        };
        assert!(NGramModel::train(["a"], &c).is_err());
        c.weights = Some(vec![0.5, 0.6, -0.1]);
        assert!(NGramModel::train(["a"], &c).is_err());
        assert!(NGramModel::train(
            ["a"],
            &LmConfig {
                k: 0.0,
                ..LmConfig::default()
            }
        )
        .is_err());
        assert!(NGramModel::train(["a"], &LmConfig::with_order(0)).is_err());
    }

    #[test]
    fn training_is_bit_stable() {
        let docs = ["the cat sat .", "the dog ran !"];
        let a = NGramModel::train(docs, &LmConfig::default()).unwrap();
        let b = NGramModel::train(docs, &LmConfig::default()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn json_round_trip() {
        let m = NGramModel::train(
            ["Belmont Estate costs $63 million.", "He left."],
            &LmConfig::default(),
        )
        .unwrap();
        let back = NGramModel::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
        assert_eq!(back.to_json(), m.to_json());
        let json = m.to_json();
        let keys: Vec<usize> = [
            "\"counts\"",
            "\"format_version\"",
            "\"k\"",
            "\"lowercase\"",
            "\"order\"",
            "\"vocab\"",
            "\"weights\"",
        ]
        .iter()
        .map(|k| json.find(k).unwrap())
        .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_text_and_unseen_token() {
        let m = NGramModel::train(["a b a b"], &bigram()).unwrap();
        assert!(sequence_logprobs(&m, "").unwrap().is_empty());
        let lps = sequence_logprobs(&m, "zzz").unwrap();
        assert_eq!(lps.len(), 1);
        // After <s>: one observation (a), UNK unseen.
        let expected = (0.1f64 / (1.0 + 0.1 * 5.0)).ln();
        assert!((lps[0].logprob - expected).abs() < 1e-12);
    }

    #[test]
    fn avg_logprob_hand_check() {
        let m = NGramModel::train(["a b a b"], &bigram()).unwrap();
        let (k, v): (f64, f64) = (0.1, 5.0);
        let b_after_a = ((2.0 + k) / (2.0 + k * v)).ln();
        let b_after_b = (k / (2.0 + k * v)).ln();
        let got = avg_logprob(&m, "a", "b b").unwrap();
        assert!((got - (b_after_a + b_after_b) / 2.0).abs() < 1e-12);
        assert_eq!(avg_logprob(&m, "a", "b b  ").unwrap(), got);
        assert!(matches!(
            avg_logprob(&m, "a", " "),
            Err(ScoreError::EmptyContinuation)
        ));
    }

    #[test]
    fn certain_token_scores_zero() {
        // Smoothing keeps trained probabilities below 1; a one-token uniform
        // scorer is the degenerate certain case.
        let m = NGramModel::train(["a b a b"], &bigram()).unwrap();
        assert!(avg_logprob(&m, "a", "b").unwrap() < 0.0);
        let u = crate::lm::UniformScorer { vocab_size: 1 };
        assert_eq!(avg_logprob(&u, "x", "y").unwrap(), 0.0);
    }

    #[test]
    fn nll_properties() {
        let d = "the cat sat on the mat .";
        let m = NGramModel::train([d], &LmConfig::default()).unwrap();
        let l = nll(&m, &[d]).unwrap();
        let v = m.vocab().len() as f64;
        let t = (m.tokenize(d).len() + 1) as f64;
        assert!(l < t * v.ln());
        assert!(l >= 0.0);
        assert!((nll(&m, &[d, d]).unwrap() - l).abs() < 1e-12);
        assert!(matches!(
            nll(&m, &Vec::<String>::new()),
            Err(ScoreError::NoDocuments)
        ));
    }

    #[test]
    fn trained_beats_disjoint() {
        let x = ["the cat sat on the mat .", "a cat ran to the mat ."];
        let y = [
            "stocks fell sharply today !",
            "markets rallied late on friday !",
        ];
        let mx = NGramModel::train(x, &LmConfig::default()).unwrap();
        let my = NGramModel::train(y, &LmConfig::default()).unwrap();
        assert!(nll(&mx, &x).unwrap() < nll(&my, &x).unwrap());
    }

    proptest! {
        #[test]
        fn normalizes_for_every_context(
            docs in proptest::collection::vec("[abcd ]{1,12}", 1..5),
            history in proptest::collection::vec("[abcde]", 0..4),
            order in 1usize..4,
        ) {
            prop_assume!(docs.iter().any(|d| !d.trim().is_empty()));
            let m = NGramModel::train(&docs, &LmConfig::with_order(order)).unwrap();
            let total: f64 = m.distribution(&history).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "sum = {}", total);
        }

        #[test]
        fn more_occurrences_never_lower_probability(
            base in proptest::collection::vec("[abc]( [abc]){0,6}", 1..4),
            extra in 1usize..4,
        ) {
            // Pure bigram so the added `a -> b` occurrences touch only the
            // table being queried; "a b c" pins the vocabulary.
            let mut base = base;
            base.push("a b c".to_string());
            let m = NGramModel::train(&base, &bigram()).unwrap();
            let mut more = base.clone();
            more.extend(std::iter::repeat_n("a b".to_string(), extra));
            let m2 = NGramModel::train(&more, &bigram()).unwrap();
            let h = s(&["a"]);
            prop_assert!(m2.prob(&h, "b") >= m.prob(&h, "b"));
        }
    }
}
