//! Training-mixture construction.
//!
//! Behavior records are interleaved with their sentences into passages
//! (`s1 <sep> R(s1) <sep> s2 <sep> R(s2) ...`), original passages are joined
//! with the same delimiter, and the resulting per-kind streams are mixed by
//! exact rational ratios and shuffled with a seeded generator.

use num_rational::Ratio;
use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::corpus::{segment, Passage, RawDocument, SegmenterConfig};
use crate::eval::TaskInstance;
use crate::prompt::{RenderedPrompt, TaskTemplate};
use crate::seed;
use crate::teacher::{
    synthesize_into, BehaviorKey, BehaviorKind, BehaviorRecord, Status, SynthesisError, TaskAnswer,
    Teacher, TeachingTemplates,
};

pub const DEFAULT_DELIMITER: &str = "<sep>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DocKind {
    Ori,
    Ner,
    Qra,
    SentNer,
    SentQra,
    TaskPseudo,
    TaskGold,
    TaskBrd,
}

impl DocKind {
    pub const ALL: [DocKind; 8] = [
        DocKind::Ori,
        DocKind::Ner,
        DocKind::Qra,
        DocKind::SentNer,
        DocKind::SentQra,
        DocKind::TaskPseudo,
        DocKind::TaskGold,
        DocKind::TaskBrd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DocKind::Ori => "ORI",
            DocKind::Ner => "NER",
            DocKind::Qra => "QRA",
            DocKind::SentNer => "SENT_NER",
            DocKind::SentQra => "SENT_QRA",
            DocKind::TaskPseudo => "TASK_PSEUDO",
            DocKind::TaskGold => "TASK_GOLD",
            DocKind::TaskBrd => "TASK_BRD",
        }
    }

    pub fn passage_kind(behavior: BehaviorKind) -> DocKind {
        match behavior {
            BehaviorKind::Ner => DocKind::Ner,
            BehaviorKind::Qra => DocKind::Qra,
        }
    }

    pub fn sentence_kind(behavior: BehaviorKind) -> DocKind {
        match behavior {
            BehaviorKind::Ner => DocKind::SentNer,
            BehaviorKind::Qra => DocKind::SentQra,
        }
    }

    /// The behavior a composed doc of this kind carries, if any.
    pub fn behavior(self) -> Option<BehaviorKind> {
        match self {
            DocKind::Ner | DocKind::SentNer => Some(BehaviorKind::Ner),
            DocKind::Qra | DocKind::SentQra => Some(BehaviorKind::Qra),
            _ => None,
        }
    }
}

impl fmt::Display for DocKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DocKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DocKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown document kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingDoc {
    pub kind: DocKind,
    pub source_id: String,
    pub text: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ComposeError {
    #[error("passage `{passage_id}` sentence {index}: no accepted {kind} record ({detail})")]
    NoAcceptedRecord {
        passage_id: String,
        index: usize,
        kind: BehaviorKind,
        detail: String,
    },
    #[error("passage `{0}` has no sentences")]
    EmptyPassage(String),
    #[error("`{source_id}` contains the delimiter `{delimiter}`")]
    ContainsDelimiter {
        source_id: String,
        delimiter: String,
    },
    #[error("invalid delimiter `{0}`: must be non-empty and contain no whitespace")]
    InvalidDelimiter(String),
    #[error("invalid mix: {0}")]
    Mix(String),
    #[error("invalid filters: {0}")]
    Filter(String),
    #[error("instance `{id}`: {message}")]
    Instance { id: String, message: String },
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
}

/// A nonnegative exact ratio, written as `"2"`, `"1/3"` or `"0.25"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct MixRatio(pub Ratio<u64>);

impl MixRatio {
    pub fn integer(n: u64) -> Self {
        MixRatio(Ratio::from_integer(n))
    }

    pub fn is_zero(self) -> bool {
        *self.0.numer() == 0
    }
}

impl fmt::Display for MixRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for MixRatio {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || format!("invalid ratio `{s}`");
        let parse = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
        if let Some((n, d)) = s.split_once('/') {
            let d = parse(d)?;
            if d == 0 {
                return Err(bad());
            }
            return Ok(MixRatio(Ratio::new(parse(n)?, d)));
        }
        if let Some((int, frac)) = s.split_once('.') {
            if frac.is_empty() || frac.len() > 18 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            let scale = 10u64.pow(frac.len() as u32);
            let int = if int.is_empty() { 0 } else { parse(int)? };
            let numer = int
                .checked_mul(scale)
                .and_then(|v| v.checked_add(parse(frac).ok()?))
                .ok_or_else(bad)?;
            return Ok(MixRatio(Ratio::new(numer, scale)));
        }
        Ok(MixRatio::integer(parse(s)?))
    }
}

impl Serialize for MixRatio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MixRatio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(n) => Ok(MixRatio::integer(n)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    #[default]
    Passage,
    Sentence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixSpec {
    pub ratios: BTreeMap<DocKind, MixRatio>,
    pub seed: u64,
    pub level: Level,
    pub delimiter: String,
}

impl Default for MixSpec {
    fn default() -> Self {
        MixSpec {
            ratios: [DocKind::Ori, DocKind::Ner, DocKind::Qra]
                .into_iter()
                .map(|k| (k, MixRatio::integer(1)))
                .collect(),
            seed: seed::DEFAULT_SEED,
            level: Level::Passage,
            delimiter: DEFAULT_DELIMITER.to_string(),
        }
    }
}

impl MixSpec {
    /// Ratios with behavior kinds mapped to this spec's level: at sentence
    /// level a ratio on `NER` applies to `SENT_NER` (and likewise for QRA).
    pub fn level_ratios(&self) -> BTreeMap<DocKind, MixRatio> {
        let mut out = BTreeMap::new();
        for (&kind, &r) in &self.ratios {
            let mapped = match (self.level, kind.behavior()) {
                (Level::Sentence, Some(b)) => DocKind::sentence_kind(b),
                (Level::Passage, Some(b)) => DocKind::passage_kind(b),
                _ => kind,
            };
            out.insert(mapped, r);
        }
        out
    }
}

fn default_sentiment_words() -> Vec<String> {
    ["positive", "negative", "neutral"]
        .map(String::from)
        .to_vec()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSpec {
    pub drop_ner: bool,
    pub drop_qra: bool,
    pub drop_sentiment: bool,
    pub sentiment_words: Vec<String>,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            drop_ner: false,
            drop_qra: false,
            drop_sentiment: false,
            sentiment_words: default_sentiment_words(),
        }
    }
}

impl FilterSpec {
    /// Rejects filter/mix combinations that would remove original passages
    /// together with both behavior kinds.
    pub fn validate(&self, mix: &MixSpec) -> Result<(), ComposeError> {
        let ori = mix.ratios.get(&DocKind::Ori).is_some_and(|r| !r.is_zero());
        if self.drop_ner && self.drop_qra && !ori {
            return Err(ComposeError::Filter(
                "dropping NER and QRA with a zero ORI ratio leaves nothing to train on".into(),
            ));
        }
        Ok(())
    }

    pub fn drops_kind(&self, kind: BehaviorKind) -> bool {
        match kind {
            BehaviorKind::Ner => self.drop_ner,
            BehaviorKind::Qra => self.drop_qra,
        }
    }
}

/// Splits a QRA response into its question and answer parts at the first
/// `Answer:` marker. Without a marker both parts are the whole response.
pub fn split_qra(response: &str) -> (&str, &str) {
    match response.find("Answer:") {
        Some(at) => {
            let question = response[..at].trim();
            let question = question
                .strip_prefix("Question:")
                .unwrap_or(question)
                .trim();
            (question, response[at + "Answer:".len()..].trim())
        }
        None => (response, response),
    }
}

fn contains_word(text: &str, word: &str) -> bool {
    let word = word.to_lowercase();
    text.split(|c: char| !c.is_alphanumeric())
        .any(|w| !w.is_empty() && w.to_lowercase() == word)
}

/// True when a QRA record asks about attitude or answers with a sentiment word.
pub fn is_sentiment_record(record: &BehaviorRecord, words: &[String]) -> bool {
    if record.kind != BehaviorKind::Qra {
        return false;
    }
    let (question, answer) = split_qra(&record.response);
    contains_word(question, "attitude") || words.iter().any(|w| contains_word(answer, w))
}

/// Per-kind record counts before and after filtering.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub input: BTreeMap<BehaviorKind, usize>,
    pub dropped_ner: usize,
    pub dropped_qra: usize,
    pub dropped_sentiment: usize,
    pub output: BTreeMap<BehaviorKind, usize>,
}

/// Removes records according to `spec`. Kind drops are applied before the
/// sentiment filter, so a QRA record removed by `drop_qra` is not also
/// counted as a sentiment drop.
pub fn apply_filters(
    records: Vec<BehaviorRecord>,
    spec: &FilterSpec,
) -> (Vec<BehaviorRecord>, FilterStats) {
    let mut stats = FilterStats::default();
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        *stats.input.entry(r.kind).or_default() += 1;
        if spec.drops_kind(r.kind) {
            match r.kind {
                BehaviorKind::Ner => stats.dropped_ner += 1,
                BehaviorKind::Qra => stats.dropped_qra += 1,
            }
            continue;
        }
        if spec.drop_sentiment && is_sentiment_record(&r, &spec.sentiment_words) {
            stats.dropped_sentiment += 1;
            continue;
        }
        *stats.output.entry(r.kind).or_default() += 1;
        kept.push(r);
    }
    (kept, stats)
}

fn padded(delimiter: &str) -> Result<String, ComposeError> {
    if delimiter.is_empty() || delimiter.chars().any(char::is_whitespace) {
        return Err(ComposeError::InvalidDelimiter(delimiter.to_string()));
    }
    Ok(format!(" {delimiter} "))
}

fn check_content(text: &str, source_id: &str, delimiter: &str) -> Result<(), ComposeError> {
    if text.contains(delimiter) {
        return Err(ComposeError::ContainsDelimiter {
            source_id: source_id.to_string(),
            delimiter: delimiter.to_string(),
        });
    }
    Ok(())
}

/// Accepted records keyed by (passage, sentence, kind).
pub struct RecordIndex<'a> {
    by_key: HashMap<BehaviorKey, &'a BehaviorRecord>,
}

impl<'a> RecordIndex<'a> {
    /// Later records for the same key replace earlier ones.
    pub fn new(records: &'a [BehaviorRecord]) -> Self {
        RecordIndex {
            by_key: records.iter().map(|r| (r.key(), r)).collect(),
        }
    }

    /// The accepted response for one sentence, or the reason there is none.
    pub fn response(
        &self,
        passage: &Passage,
        index: usize,
        kind: BehaviorKind,
    ) -> Result<&'a str, ComposeError> {
        let key = BehaviorKey {
            passage_id: passage.id.clone(),
            sentence_index: index,
            kind,
        };
        let missing = |detail: String| ComposeError::NoAcceptedRecord {
            passage_id: passage.id.clone(),
            index,
            kind,
            detail,
        };
        let record = self
            .by_key
            .get(&key)
            .ok_or_else(|| missing("missing".into()))?;
        match record.status {
            Status::Accepted => {}
            Status::Rejected(reason) => {
                return Err(missing(format!("rejected: {}", reason.as_str())))
            }
        }
        let sentence = &passage.sentences[index].text;
        if record.sentence != *sentence {
            return Err(missing("record sentence differs from the passage".into()));
        }
        Ok(record.response.as_str())
    }
}

/// `s1 D R(s1) D s2 D R(s2) ... D sn D R(sn)` with `D = " <delimiter> "`.
pub fn compose_behavior_passage(
    passage: &Passage,
    records: &[BehaviorRecord],
    kind: BehaviorKind,
    delimiter: &str,
) -> Result<TrainingDoc, ComposeError> {
    compose_indexed(
        passage,
        &RecordIndex::new(records),
        kind,
        delimiter,
        DocKind::passage_kind(kind),
    )
}

fn compose_indexed(
    passage: &Passage,
    index: &RecordIndex<'_>,
    kind: BehaviorKind,
    delimiter: &str,
    doc_kind: DocKind,
) -> Result<TrainingDoc, ComposeError> {
    let d = padded(delimiter)?;
    if passage.sentences.is_empty() {
        return Err(ComposeError::EmptyPassage(passage.id.clone()));
    }
    let mut parts = Vec::with_capacity(passage.sentences.len() * 2);
    for (i, s) in passage.sentences.iter().enumerate() {
        let response = index.response(passage, i, kind)?;
        check_content(&s.text, &passage.id, delimiter)?;
        check_content(response, &passage.id, delimiter)?;
        parts.push(s.text.as_str());
        parts.push(response);
    }
    Ok(TrainingDoc {
        kind: doc_kind,
        source_id: passage.id.clone(),
        text: parts.join(&d),
    })
}

/// Sentences joined by the padded delimiter.
pub fn compose_original(passage: &Passage, delimiter: &str) -> Result<TrainingDoc, ComposeError> {
    let d = padded(delimiter)?;
    if passage.sentences.is_empty() {
        return Err(ComposeError::EmptyPassage(passage.id.clone()));
    }
    for s in &passage.sentences {
        check_content(&s.text, &passage.id, delimiter)?;
    }
    Ok(TrainingDoc {
        kind: DocKind::Ori,
        source_id: passage.id.clone(),
        text: passage
            .sentences
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(&d),
    })
}

fn sentence_doc(
    passage: &Passage,
    i: usize,
    index: &RecordIndex<'_>,
    kind: BehaviorKind,
    delimiter: &str,
) -> Result<TrainingDoc, ComposeError> {
    let single = Passage {
        id: passage.id.clone(),
        sentences: vec![passage.sentences[i].clone()],
    };
    let response = index.response(passage, i, kind)?;
    let d = padded(delimiter)?;
    check_content(&single.sentences[0].text, &passage.id, delimiter)?;
    check_content(response, &passage.id, delimiter)?;
    Ok(TrainingDoc {
        kind: DocKind::sentence_kind(kind),
        source_id: format!("{}#{}", passage.id, i),
        text: format!("{}{d}{response}", single.sentences[0].text),
    })
}

/// One `s <sep> R(s)` doc per sentence, in a seeded random order.
pub fn sentence_level_variant(
    passages: &[Passage],
    records: &[BehaviorRecord],
    kind: BehaviorKind,
    delimiter: &str,
    seed: u64,
) -> Result<Vec<TrainingDoc>, ComposeError> {
    let index = RecordIndex::new(records);
    let mut docs = Vec::new();
    for p in passages {
        for i in 0..p.sentences.len() {
            docs.push(sentence_doc(p, i, &index, kind, delimiter)?);
        }
    }
    docs.shuffle(&mut seed::substream(seed, "sentence-level"));
    Ok(docs)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCount {
    pub available: usize,
    pub emitted: usize,
}

/// The largest `u` with `floor(u * ratio) <= available` for every kind with a
/// positive ratio, and the resulting per-kind counts.
pub fn mix_counts(
    available: &BTreeMap<DocKind, usize>,
    ratios: &BTreeMap<DocKind, MixRatio>,
) -> Result<BTreeMap<DocKind, usize>, ComposeError> {
    let positive: Vec<(DocKind, Ratio<u64>)> = ratios
        .iter()
        .filter(|(_, r)| !r.is_zero())
        .map(|(&k, r)| (k, r.0))
        .collect();
    if positive.is_empty() {
        return Err(ComposeError::Mix("no positive ratio".into()));
    }
    for (k, _) in &positive {
        if !available.contains_key(k) {
            return Err(ComposeError::Mix(format!(
                "ratio given for absent kind {k}"
            )));
        }
    }
    let unit = positive
        .iter()
        .map(|(k, r)| Ratio::from_integer(available[k] as u64) / r)
        .min()
        .expect("non-empty");
    Ok(positive
        .iter()
        .map(|&(k, r)| (k, (unit * r).to_integer() as usize))
        .collect())
}

/// Takes the ratio-determined prefix of every stream and shuffles the union
/// with the `mix` substream of `spec.seed`.
pub fn mix(
    streams: BTreeMap<DocKind, Vec<TrainingDoc>>,
    spec: &MixSpec,
) -> Result<(Vec<TrainingDoc>, BTreeMap<DocKind, KindCount>), ComposeError> {
    let available: BTreeMap<DocKind, usize> = streams.iter().map(|(&k, v)| (k, v.len())).collect();
    let counts = mix_counts(&available, &spec.ratios)?;
    let mut out = Vec::new();
    let mut summary = BTreeMap::new();
    for (kind, docs) in streams {
        let take = counts.get(&kind).copied().unwrap_or(0);
        summary.insert(
            kind,
            KindCount {
                available: docs.len(),
                emitted: take,
            },
        );
        out.extend(docs.into_iter().take(take));
    }
    if out.is_empty() {
        return Err(ComposeError::Mix("selection is empty".into()));
    }
    out.shuffle(&mut seed::substream(spec.seed, "mix"));
    Ok((out, summary))
}

/// Suggested hyperparameters for training a neural student on the dataset.
/// Recorded as metadata only; the built-in n-gram student ignores them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub objective: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_input_length: usize,
    pub steps: usize,
    pub save_every: usize,
}

impl Default for TrainingMetadata {
    fn default() -> Self {
        TrainingMetadata {
            objective: "autoregressive".into(),
            learning_rate: 0.0003,
            batch_size: 8,
            max_input_length: 2048,
            steps: 40000,
            save_every: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub level: Level,
    pub delimiter: String,
    pub ratios: BTreeMap<DocKind, MixRatio>,
    pub counts: BTreeMap<DocKind, KindCount>,
    pub total: usize,
    /// Behavior units (passages or sentences) left out because a record was
    /// missing, rejected or filtered.
    pub skipped: BTreeMap<DocKind, usize>,
    pub filters: FilterSpec,
    pub filter_stats: FilterStats,
    pub training_config: TrainingMetadata,
}

/// Filters records, builds every stream the mix asks for, and mixes them.
pub fn compose_dataset(
    passages: &[Passage],
    records: Vec<BehaviorRecord>,
    spec: &MixSpec,
    filters: &FilterSpec,
) -> Result<(Vec<TrainingDoc>, Manifest), ComposeError> {
    filters.validate(spec)?;
    padded(&spec.delimiter)?;
    let (records, filter_stats) = apply_filters(records, filters);
    let index = RecordIndex::new(&records);
    let mut ratios = spec.level_ratios();
    for kind in BehaviorKind::ALL {
        if filters.drops_kind(kind) {
            ratios.remove(&DocKind::passage_kind(kind));
            ratios.remove(&DocKind::sentence_kind(kind));
        }
    }

    let mut streams = BTreeMap::new();
    let mut skipped = BTreeMap::new();
    if ratios.contains_key(&DocKind::Ori) {
        let docs = passages
            .iter()
            .map(|p| compose_original(p, &spec.delimiter))
            .collect::<Result<Vec<_>, _>>()?;
        streams.insert(DocKind::Ori, docs);
    }
    for kind in BehaviorKind::ALL {
        let doc_kind = match spec.level {
            Level::Passage => DocKind::passage_kind(kind),
            Level::Sentence => DocKind::sentence_kind(kind),
        };
        if !ratios.contains_key(&doc_kind) {
            continue;
        }
        let mut docs = Vec::new();
        let mut skip = 0;
        for p in passages {
            match spec.level {
                Level::Passage => match compose_indexed(p, &index, kind, &spec.delimiter, doc_kind)
                {
                    Ok(doc) => docs.push(doc),
                    Err(ComposeError::NoAcceptedRecord { .. }) => skip += 1,
                    Err(e) => return Err(e),
                },
                Level::Sentence => {
                    for i in 0..p.sentences.len() {
                        match sentence_doc(p, i, &index, kind, &spec.delimiter) {
                            Ok(doc) => docs.push(doc),
                            Err(ComposeError::NoAcceptedRecord { .. }) => skip += 1,
                            Err(e) => return Err(e),
                        }
                    }
                }
            }
        }
        if spec.level == Level::Sentence {
            docs.shuffle(&mut seed::substream(spec.seed, "sentence-level"));
        }
        if skip > 0 {
            log::warn!("{doc_kind}: skipped {skip} units without accepted records");
        }
        skipped.insert(doc_kind, skip);
        streams.insert(doc_kind, docs);
    }
    let mix_spec = MixSpec {
        ratios: ratios.clone(),
        ..spec.clone()
    };
    let (docs, counts) = mix(streams, &mix_spec)?;
    let manifest = Manifest {
        seed: spec.seed,
        level: spec.level,
        delimiter: spec.delimiter.clone(),
        ratios,
        counts,
        total: docs.len(),
        skipped,
        filters: filters.clone(),
        filter_stats,
        training_config: TrainingMetadata::default(),
    };
    Ok((docs, manifest))
}

/// Counts from composing task documents.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskComposeSummary {
    pub composed: usize,
    pub skipped: usize,
}

fn task_prompt(
    instance: &TaskInstance,
    template: Option<&TaskTemplate>,
) -> Result<RenderedPrompt, ComposeError> {
    let text = instance
        .prompt_text(template)
        .map_err(|e| ComposeError::Instance {
            id: instance.id.clone(),
            message: e.to_string(),
        })?;
    let id = template
        .map(|t| t.task_id.clone())
        .unwrap_or_else(|| "inline".into());
    Ok(RenderedPrompt::new(text, id))
}

/// Teacher-labelled task docs (`prompt answer`). Instances whose answer is
/// rejected are skipped and counted.
pub fn compose_task_pseudo(
    instances: &[TaskInstance],
    teacher: &Teacher,
    template: Option<&TaskTemplate>,
) -> Result<(Vec<TrainingDoc>, TaskComposeSummary), ComposeError> {
    let mut docs = Vec::new();
    let mut summary = TaskComposeSummary::default();
    for inst in instances {
        let prompt = task_prompt(inst, template)?;
        match teacher.answer_task(&prompt, &inst.candidates) {
            TaskAnswer::Answered(answer) => {
                docs.push(TrainingDoc {
                    kind: DocKind::TaskPseudo,
                    source_id: inst.id.clone(),
                    text: format!("{} {answer}", prompt.text),
                });
                summary.composed += 1;
            }
            TaskAnswer::Rejected(reason) => {
                log::warn!(
                    "instance `{}`: teacher answer rejected ({})",
                    inst.id,
                    reason.as_str()
                );
                summary.skipped += 1;
            }
        }
    }
    Ok((docs, summary))
}

/// Gold-labelled task docs (`prompt gold`).
pub fn compose_task_gold(
    instances: &[TaskInstance],
    template: Option<&TaskTemplate>,
) -> Result<Vec<TrainingDoc>, ComposeError> {
    instances
        .iter()
        .map(|inst| {
            let gold = inst.gold.as_ref().ok_or_else(|| ComposeError::Instance {
                id: inst.id.clone(),
                message: "no gold answer".into(),
            })?;
            if !inst.candidates.contains(gold) {
                return Err(ComposeError::Instance {
                    id: inst.id.clone(),
                    message: format!("gold `{gold}` is not a candidate"),
                });
            }
            let prompt = task_prompt(inst, template)?;
            Ok(TrainingDoc {
                kind: DocKind::TaskGold,
                source_id: inst.id.clone(),
                text: format!("{} {gold}", prompt.text),
            })
        })
        .collect()
}

/// Runs the behavior pipeline over task inputs: each instance's input text
/// is segmented, read by the teacher, and composed into one doc per kind.
pub fn compose_brd2(
    instances: &[TaskInstance],
    teacher: &Teacher,
    templates: &TeachingTemplates,
    kinds: &[BehaviorKind],
    segmenter: &SegmenterConfig,
    delimiter: &str,
) -> Result<(Vec<TrainingDoc>, TaskComposeSummary), ComposeError> {
    if kinds.is_empty() {
        return Err(SynthesisError::NoKinds.into());
    }
    padded(delimiter)?;
    let mut passages = Vec::new();
    let mut summary = TaskComposeSummary::default();
    for inst in instances {
        let text = inst.input_text();
        if text.trim().is_empty() {
            log::warn!("instance `{}`: empty input text, skipped", inst.id);
            summary.skipped += kinds.len();
            continue;
        }
        let passage = segment(
            &RawDocument {
                id: inst.id.clone(),
                text,
            },
            segmenter,
        );
        if passage.sentences.is_empty() {
            summary.skipped += kinds.len();
            continue;
        }
        passages.push(passage);
    }
    let mut records = Vec::new();
    synthesize_into(&passages, kinds, teacher, templates, Vec::new(), |r| {
        records.push(r.clone());
        Ok(())
    })?;
    let index = RecordIndex::new(&records);
    let mut docs = Vec::new();
    for p in &passages {
        for &kind in kinds {
            match compose_indexed(p, &index, kind, delimiter, DocKind::TaskBrd) {
                Ok(doc) => {
                    docs.push(doc);
                    summary.composed += 1;
                }
                Err(
                    e @ (ComposeError::NoAcceptedRecord { .. }
                    | ComposeError::ContainsDelimiter { .. }),
                ) => {
                    log::warn!("{e}; skipped");
                    summary.skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok((docs, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teacher::{mock_teacher, RejectReason};
    use proptest::prelude::*;

    fn record(p: &Passage, i: usize, kind: BehaviorKind, response: &str) -> BehaviorRecord {
        BehaviorRecord {
            passage_id: p.id.clone(),
            sentence_index: i,
            kind,
            sentence: p.sentences[i].text.clone(),
            response: response.into(),
            prompt_hash: "h".into(),
            teacher_id: "t".into(),
            status: Status::Accepted,
        }
    }

    fn mock_records(passages: &[Passage]) -> Vec<BehaviorRecord> {
        let mut out = Vec::new();
        for p in passages {
            for (i, s) in p.sentences.iter().enumerate() {
                for kind in BehaviorKind::ALL {
                    out.push(record(p, i, kind, &mock_teacher(&s.text, kind)));
                }
            }
        }
        out
    }

    fn three() -> Passage {
        Passage::from_sentences("p", ["s1", "s2", "s3"])
    }

    #[test]
    fn behavior_passage_layout() {
        let p = three();
        let recs: Vec<_> = (0..3)
            .map(|i| record(&p, i, BehaviorKind::Ner, &format!("NER(s{})", i + 1)))
            .collect();
        let doc = compose_behavior_passage(&p, &recs, BehaviorKind::Ner, "<sep>").unwrap();
        assert_eq!(
            doc.text,
            "s1 <sep> NER(s1) <sep> s2 <sep> NER(s2) <sep> s3 <sep> NER(s3)"
        );
        assert_eq!(doc.kind, DocKind::Ner);
    }

    #[test]
    fn belmont_passage() {
        let s = "It is reported that the Belmont Estate is on sale for $63 million and covers an area of 1.28 acres.";
        let r = "In this sentence, \"Belmont Estate\" is a geographic entity, \"63 million\" is a numerical entity representing the price of the estate, and \"1.28 acres\" is a geographic entity representing the size of the estate.";
        let p = Passage::from_sentences("b", [s]);
        let doc = compose_behavior_passage(
            &p,
            &[record(&p, 0, BehaviorKind::Ner, r)],
            BehaviorKind::Ner,
            "<sep>",
        )
        .unwrap();
        assert_eq!(doc.text, format!("{s} <sep> {r}"));
    }

    #[test]
    fn rejected_or_missing_record_names_index() {
        let p = three();
        let mut recs: Vec<_> = (0..3)
            .map(|i| record(&p, i, BehaviorKind::Ner, "r"))
            .collect();
        recs[1].status = Status::Rejected(RejectReason::Empty);
        match compose_behavior_passage(&p, &recs, BehaviorKind::Ner, "<sep>") {
            Err(ComposeError::NoAcceptedRecord {
                index, passage_id, ..
            }) => {
                assert_eq!(index, 1);
                assert_eq!(passage_id, "p");
            }
            other => panic!("{other:?}"),
        }
        recs.remove(1);
        assert!(matches!(
            compose_behavior_passage(&p, &recs, BehaviorKind::Ner, "<sep>"),
            Err(ComposeError::NoAcceptedRecord { index: 1, .. })
        ));
        assert!(compose_behavior_passage(&p, &recs, BehaviorKind::Qra, "<sep>").is_err());
    }

    #[test]
    fn delimiter_in_content_is_rejected() {
        let p = Passage::from_sentences("p", ["a <sep> b"]);
        assert!(matches!(
            compose_original(&p, "<sep>"),
            Err(ComposeError::ContainsDelimiter { .. })
        ));
        let p = three();
        let recs: Vec<_> = (0..3)
            .map(|i| record(&p, i, BehaviorKind::Qra, "x<sep>y"))
            .collect();
        assert!(compose_behavior_passage(&p, &recs, BehaviorKind::Qra, "<sep>").is_err());
        assert!(compose_original(&p, "").is_err());
        assert!(compose_original(&p, "a b").is_err());
    }

    #[test]
    fn original_layout() {
        assert_eq!(
            compose_original(&three(), "<sep>").unwrap().text,
            "s1 <sep> s2 <sep> s3"
        );
        let one = Passage::from_sentences("p", ["only"]);
        assert_eq!(compose_original(&one, "<sep>").unwrap().text, "only");
        let empty = Passage::from_sentences("p", Vec::<String>::new());
        assert!(matches!(
            compose_original(&empty, "<sep>"),
            Err(ComposeError::EmptyPassage(_))
        ));
    }

    #[test]
    fn sentence_level_enumerates_and_permutes() {
        let p = three();
        let recs = mock_records(std::slice::from_ref(&p));
        let a = sentence_level_variant(
            std::slice::from_ref(&p),
            &recs,
            BehaviorKind::Ner,
            "<sep>",
            1,
        )
        .unwrap();
        let b = sentence_level_variant(
            std::slice::from_ref(&p),
            &recs,
            BehaviorKind::Ner,
            "<sep>",
            1,
        )
        .unwrap();
        let c = sentence_level_variant(
            std::slice::from_ref(&p),
            &recs,
            BehaviorKind::Ner,
            "<sep>",
            2,
        )
        .unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
        let mut expected: Vec<String> = p
            .sentences
            .iter()
            .map(|s| {
                format!(
                    "{} <sep> {}",
                    s.text,
                    mock_teacher(&s.text, BehaviorKind::Ner)
                )
            })
            .collect();
        expected.sort();
        for docs in [&a, &c] {
            let mut got: Vec<String> = docs.iter().map(|d| d.text.clone()).collect();
            got.sort();
            assert_eq!(got, expected);
            assert!(docs.iter().all(|d| d.kind == DocKind::SentNer));
        }
    }

    fn qra(p: &Passage, response: &str) -> BehaviorRecord {
        record(p, 0, BehaviorKind::Qra, response)
    }

    #[test]
    fn sentiment_filter() {
        let p = Passage::from_sentences("p", ["x"]);
        let spec = FilterSpec {
            drop_sentiment: true,
            ..FilterSpec::default()
        };
        let positive = qra(
            &p,
            "Question:\nWhat is the tone?\nAnswer:\nThe sentiment is positive.",
        );
        let composited = qra(
            &p,
            "Question:\nWhat did he do?\nAnswer:\nHe composited the image.",
        );
        let attitude = qra(
            &p,
            "Question:\nWhat is the Attitude of the writer?\nAnswer:\nCalm.",
        );
        let question_word = qra(&p, "Question:\nIs it positive?\nAnswer:\nIt rains.");
        let (kept, stats) = apply_filters(
            vec![
                positive,
                composited.clone(),
                attitude,
                question_word.clone(),
            ],
            &spec,
        );
        assert_eq!(kept, vec![composited, question_word]);
        assert_eq!(stats.dropped_sentiment, 2);
        let ner = record(&p, 0, BehaviorKind::Ner, "neutral");
        let (kept, _) = apply_filters(vec![ner.clone()], &spec);
        assert_eq!(kept, vec![ner]);
    }

    #[test]
    fn qra_split() {
        assert_eq!(
            split_qra("Question:\nHow much?\nAnswer:\n$63 million."),
            ("How much?", "$63 million.")
        );
        assert_eq!(split_qra("no marker"), ("no marker", "no marker"));
    }

    #[test]
    fn drop_ner_keeps_qra() {
        let ps = vec![three()];
        let recs = mock_records(&ps);
        let spec = FilterSpec {
            drop_ner: true,
            ..FilterSpec::default()
        };
        let (kept, stats) = apply_filters(recs, &spec);
        assert!(kept.iter().all(|r| r.kind == BehaviorKind::Qra));
        assert_eq!(kept.len(), 3);
        assert_eq!(stats.dropped_ner, 3);
    }

    #[test]
    fn filter_validation() {
        let both = FilterSpec {
            drop_ner: true,
            drop_qra: true,
            ..FilterSpec::default()
        };
        assert!(both.validate(&MixSpec::default()).is_ok());
        let mut no_ori = MixSpec::default();
        no_ori.ratios.insert(DocKind::Ori, MixRatio::integer(0));
        assert!(both.validate(&no_ori).is_err());
    }

    fn stream(kind: DocKind, n: usize) -> Vec<TrainingDoc> {
        (0..n)
            .map(|i| TrainingDoc {
                kind,
                source_id: format!("{kind}-{i}"),
                text: format!("{kind} {i}"),
            })
            .collect()
    }

    fn spec(ori: u64, ner: u64, qra: u64) -> MixSpec {
        MixSpec {
            ratios: [
                (DocKind::Ori, ori),
                (DocKind::Ner, ner),
                (DocKind::Qra, qra),
            ]
            .into_iter()
            .map(|(k, r)| (k, MixRatio::integer(r)))
            .collect(),
            ..MixSpec::default()
        }
    }

    fn streams(n: [usize; 3]) -> BTreeMap<DocKind, Vec<TrainingDoc>> {
        [DocKind::Ori, DocKind::Ner, DocKind::Qra]
            .into_iter()
            .zip(n)
            .map(|(k, n)| (k, stream(k, n)))
            .collect()
    }

    fn emitted(counts: &BTreeMap<DocKind, KindCount>) -> Vec<usize> {
        [DocKind::Ori, DocKind::Ner, DocKind::Qra]
            .iter()
            .map(|k| counts.get(k).map_or(0, |c| c.emitted))
            .collect()
    }

    #[test]
    fn mix_examples() {
        let (docs, c) = mix(streams([100; 3]), &spec(1, 1, 1)).unwrap();
        assert_eq!(docs.len(), 300);
        assert_eq!(emitted(&c), vec![100, 100, 100]);
        let (docs, c) = mix(streams([100; 3]), &spec(1, 0, 0)).unwrap();
        assert!(docs.iter().all(|d| d.kind == DocKind::Ori));
        assert_eq!(emitted(&c), vec![100, 0, 0]);
        let (_, c) = mix(streams([100; 3]), &spec(2, 1, 1)).unwrap();
        assert_eq!(emitted(&c), vec![100, 50, 50]);
        assert!(mix(streams([100; 3]), &spec(0, 0, 0)).is_err());
        assert!(mix(streams([0, 10, 10]), &spec(1, 1, 1)).is_err());
        let mut only_ori = BTreeMap::new();
        only_ori.insert(DocKind::Ori, stream(DocKind::Ori, 3));
        assert!(mix(only_ori, &spec(1, 1, 0)).is_err());
    }

    #[test]
    fn mix_is_seeded() {
        let a = mix(streams([20; 3]), &spec(1, 1, 1)).unwrap().0;
        let b = mix(streams([20; 3]), &spec(1, 1, 1)).unwrap().0;
        assert_eq!(a, b);
        let mut other = spec(1, 1, 1);
        other.seed = 7;
        let c = mix(streams([20; 3]), &other).unwrap().0;
        assert_ne!(a, c);
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!("2".parse::<MixRatio>().unwrap(), MixRatio::integer(2));
        assert_eq!("1/3".parse::<MixRatio>().unwrap().0, Ratio::new(1, 3));
        assert_eq!("0.25".parse::<MixRatio>().unwrap().0, Ratio::new(1, 4));
        assert!("1/0".parse::<MixRatio>().is_err());
        assert!("-1".parse::<MixRatio>().is_err());
        let json: BTreeMap<DocKind, MixRatio> =
            serde_json::from_str(r#"{"ORI":2,"NER":"1/2"}"#).unwrap();
        assert_eq!(
            serde_json::to_string(&json).unwrap(),
            r#"{"ORI":"2","NER":"1/2"}"#
        );
    }

    #[test]
    fn dataset_variants() {
        let ps = vec![three(), Passage::from_sentences("q", ["t1", "t2"])];
        let recs = mock_records(&ps);
        let (docs, m) = compose_dataset(
            &ps,
            recs.clone(),
            &MixSpec::default(),
            &FilterSpec::default(),
        )
        .unwrap();
        assert_eq!(docs.len(), 6);
        assert_eq!(
            m.counts.keys().copied().collect::<Vec<_>>(),
            vec![DocKind::Ori, DocKind::Ner, DocKind::Qra]
        );

        let drop_qra = FilterSpec {
            drop_qra: true,
            ..FilterSpec::default()
        };
        let (_, m) = compose_dataset(&ps, recs.clone(), &MixSpec::default(), &drop_qra).unwrap();
        assert!(!m.counts.contains_key(&DocKind::Qra));
        assert_eq!(m.filter_stats.dropped_qra, 5);

        let sentence = MixSpec {
            level: Level::Sentence,
            ..MixSpec::default()
        };
        let (docs, m) = compose_dataset(&ps, recs, &sentence, &FilterSpec::default()).unwrap();
        assert_eq!(
            m.counts.keys().copied().collect::<Vec<_>>(),
            vec![DocKind::Ori, DocKind::SentNer, DocKind::SentQra]
        );
        assert_eq!(m.counts[&DocKind::SentNer].available, 5);
        assert_eq!(
            docs.iter().filter(|d| d.kind == DocKind::SentQra).count(),
            2
        );
    }

    #[test]
    fn incomplete_passages_are_skipped() {
        let ps = vec![three(), Passage::from_sentences("q", ["t1", "t2"])];
        let mut recs = mock_records(&ps);
        recs.retain(|r| {
            !(r.passage_id == "q" && r.sentence_index == 1 && r.kind == BehaviorKind::Ner)
        });
        let ner_only = MixSpec {
            ratios: [(DocKind::Ner, MixRatio::integer(1))].into_iter().collect(),
            ..MixSpec::default()
        };
        let (docs, m) = compose_dataset(&ps, recs, &ner_only, &FilterSpec::default()).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(m.skipped[&DocKind::Ner], 1);
    }

    #[test]
    fn task_docs() {
        let tpl = TaskTemplate::builtin("sst2").unwrap();
        let inst = TaskInstance {
            id: "1".into(),
            prompt: None,
            fields: Some(
                [(
                    "sentence".to_string(),
                    "A positive, joyful film.".to_string(),
                )]
                .into_iter()
                .collect(),
            ),
            candidates: vec!["positive".into(), "negative".into()],
            gold: Some("negative".into()),
        };
        let (docs, s) =
            compose_task_pseudo(std::slice::from_ref(&inst), &Teacher::mock(), Some(&tpl)).unwrap();
        assert_eq!(
            s,
            TaskComposeSummary {
                composed: 1,
                skipped: 0
            }
        );
        assert!(docs[0].text.ends_with("Answer: positive"));
        let gold = compose_task_gold(std::slice::from_ref(&inst), Some(&tpl)).unwrap();
        assert!(gold[0].text.ends_with("Answer: negative"));
        assert!(compose_task_pseudo(&[], &Teacher::mock(), Some(&tpl))
            .unwrap()
            .0
            .is_empty());
        let bad = TaskInstance {
            gold: Some("Perhaps".into()),
            ..inst
        };
        assert!(compose_task_gold(&[bad], Some(&tpl)).is_err());
    }

    #[test]
    fn brd2_docs() {
        let boolq = TaskInstance {
            id: "b1".into(),
            prompt: None,
            fields: Some(
                [
                    (
                        "passage".to_string(),
                        "Paris is in France. It is large.".to_string(),
                    ),
                    ("question".to_string(), "Is Paris in France?".to_string()),
                ]
                .into_iter()
                .collect(),
            ),
            candidates: vec!["Yes".into(), "No".into()],
            gold: None,
        };
        let empty = TaskInstance {
            id: "e".into(),
            fields: Some(
                [("passage".to_string(), " ".to_string())]
                    .into_iter()
                    .collect(),
            ),
            ..boolq.clone()
        };
        let templates = TeachingTemplates::default();
        let (docs, summary) = compose_brd2(
            &[boolq, empty],
            &Teacher::mock(),
            &templates,
            &[BehaviorKind::Ner],
            &SegmenterConfig::default(),
            "<sep>",
        )
        .unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].kind, DocKind::TaskBrd);
        assert_eq!(docs[0].text.matches(" <sep> ").count(), 5);
        assert_eq!(summary.skipped, 1);
        assert!(compose_brd2(
            &[],
            &Teacher::mock(),
            &templates,
            &[],
            &SegmenterConfig::default(),
            "<sep>"
        )
        .is_err());
    }

    fn sentence_text() -> impl Strategy<Value = String> {
        "[A-Za-z0-9 ,.<>$\"']{1,40}".prop_filter("non-blank, no delimiter", |s| {
            !s.trim().is_empty() && !s.contains("<sep>")
        })
    }

    proptest! {
        #[test]
        fn round_trip(sentences in prop::collection::vec(sentence_text(), 1..8), responses in prop::collection::vec(sentence_text(), 8)) {
            let p = Passage::from_sentences("p", sentences.clone());
            let recs: Vec<_> = (0..sentences.len()).map(|i| record(&p, i, BehaviorKind::Qra, &responses[i])).collect();
            let doc = compose_behavior_passage(&p, &recs, BehaviorKind::Qra, "<sep>").unwrap();
            let parts: Vec<&str> = doc.text.split(" <sep> ").collect();
            let expected: Vec<&str> = sentences.iter().zip(&responses).flat_map(|(s, r)| [s.as_str(), r.as_str()]).collect();
            prop_assert_eq!(parts, expected);
        }

        #[test]
        fn ratio_fidelity(n in prop::array::uniform3(0usize..60), r in prop::array::uniform3(0u64..5)) {
            prop_assume!(r.iter().any(|&x| x > 0));
            let available: BTreeMap<DocKind, usize> = [DocKind::Ori, DocKind::Ner, DocKind::Qra].into_iter().zip(n).collect();
            let counts = mix_counts(&available, &spec(r[0], r[1], r[2]).ratios).unwrap();
            // Independent check in floating point on integer ratios.
            let unit = (0..3).filter(|&i| r[i] > 0).map(|i| n[i] as f64 / r[i] as f64).fold(f64::INFINITY, f64::min);
            for (i, k) in [DocKind::Ori, DocKind::Ner, DocKind::Qra].iter().enumerate() {
                let expected = if r[i] == 0 { 0 } else { (unit * r[i] as f64 + 1e-9).floor() as usize };
                prop_assert_eq!(counts.get(k).copied().unwrap_or(0), expected);
                prop_assert!(expected <= n[i]);
            }
        }

        #[test]
        fn filters_compose(kinds in prop::collection::vec(any::<bool>(), 0..30), sentiment in prop::collection::vec(any::<bool>(), 30)) {
            let p = Passage::from_sentences("p", ["x"]);
            let records: Vec<_> = kinds.iter().enumerate().map(|(i, &ner)| {
                let kind = if ner { BehaviorKind::Ner } else { BehaviorKind::Qra };
                let answer = if sentiment[i] { "negative" } else { "fine" };
                record(&p, 0, kind, &format!("Question:\nq{i}?\nAnswer:\n{answer}"))
            }).collect();
            let ner = FilterSpec { drop_ner: true, ..FilterSpec::default() };
            let qra = FilterSpec { drop_qra: true, ..FilterSpec::default() };
            let both = FilterSpec { drop_ner: true, drop_qra: true, ..FilterSpec::default() };
            let (a, _) = apply_filters(apply_filters(records.clone(), &ner).0, &qra);
            let (b, _) = apply_filters(apply_filters(records.clone(), &qra).0, &ner);
            let (c, _) = apply_filters(records.clone(), &both);
            prop_assert!(a.is_empty() && b.is_empty() && c.is_empty());
            let senti = FilterSpec { drop_sentiment: true, ..FilterSpec::default() };
            let (d, _) = apply_filters(apply_filters(records.clone(), &senti).0, &ner);
            let (e, _) = apply_filters(apply_filters(records.clone(), &ner).0, &senti);
            let one_pass: Vec<_> = records.iter().filter(|r| r.kind == BehaviorKind::Qra && !r.response.ends_with("negative")).cloned().collect();
            prop_assert_eq!(&d, &one_pass);
            prop_assert_eq!(&e, &one_pass);
        }
    }
}
