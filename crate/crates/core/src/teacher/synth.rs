//! Resumable, order-preserving synthesis over a corpus.

use serde::Serialize;
use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use super::{
    BehaviorKind, BehaviorRecord, RejectReason, SentenceRef, Status, Teacher, TeachingTemplates,
};
use crate::corpus::Passage;
use crate::jsonl;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BehaviorKey {
    pub passage_id: String,
    pub sentence_index: usize,
    pub kind: BehaviorKind,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("no behavior kinds requested")]
    NoKinds,
    #[error("cannot write behavior sink {path}")]
    Sink { path: String, source: io::Error },
    #[error("emitting a behavior record failed")]
    Emit(#[source] io::Error),
    #[error("cannot read existing behavior sink")]
    Existing(#[from] jsonl::JsonlError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SynthesisSummary {
    /// Requests issued during this run.
    pub requested: usize,
    /// Keys already present in the sink and therefore not requested.
    pub skipped: usize,
    pub accepted: BTreeMap<BehaviorKind, usize>,
    pub rejected: BTreeMap<BehaviorKind, usize>,
    pub rejected_by_reason: BTreeMap<String, usize>,
}

impl SynthesisSummary {
    pub fn new_records(&self) -> usize {
        self.accepted.values().sum::<usize>() + self.rejected.values().sum::<usize>()
    }

    pub fn transport_failures(&self) -> usize {
        self.rejected_by_reason
            .get("transport")
            .copied()
            .unwrap_or(0)
    }

    fn count(&mut self, record: &BehaviorRecord) {
        match record.status {
            Status::Accepted => *self.accepted.entry(record.kind).or_default() += 1,
            Status::Rejected(r) => {
                *self.rejected.entry(record.kind).or_default() += 1;
                *self
                    .rejected_by_reason
                    .entry(r.as_str().to_string())
                    .or_default() += 1;
            }
        }
    }
}

enum Slot {
    Existing(BehaviorRecord),
    Job,
}

/// Requests every missing `(passage, sentence, kind)` behavior and emits all
/// records in canonical order: passage order, then sentence order, then NER
/// before QRA.
///
/// `existing` records are reused instead of re-requested, except transport
/// rejections, which are retried. Existing records whose key is not part of
/// `passages` are emitted after the canonical sequence, in their original
/// order. Up to `teacher.max_in_flight()` requests run concurrently; `emit`
/// is only ever called from the calling thread.
pub fn synthesize_into<F>(
    passages: &[Passage],
    kinds: &[BehaviorKind],
    teacher: &Teacher,
    templates: &TeachingTemplates,
    existing: Vec<BehaviorRecord>,
    mut emit: F,
) -> Result<SynthesisSummary, SynthesisError>
where
    F: FnMut(&BehaviorRecord) -> io::Result<()>,
{
    if kinds.is_empty() {
        return Err(SynthesisError::NoKinds);
    }
    let kinds: Vec<BehaviorKind> = BehaviorKind::ALL
        .into_iter()
        .filter(|k| kinds.contains(k))
        .collect();

    let mut carried: HashMap<BehaviorKey, BehaviorRecord> = HashMap::new();
    let mut carried_order: Vec<BehaviorKey> = Vec::new();
    for r in existing {
        if r.status == Status::Rejected(RejectReason::Transport) {
            continue;
        }
        let key = r.key();
        if let Entry::Vacant(e) = carried.entry(key.clone()) {
            carried_order.push(key);
            e.insert(r);
        }
    }

    let mut slots: Vec<Slot> = Vec::new();
    let mut jobs: Vec<(usize, SentenceRef<'_>, BehaviorKind)> = Vec::new();
    let mut canonical: HashSet<BehaviorKey> = HashSet::new();
    let mut summary = SynthesisSummary::default();
    for p in passages {
        for s in &p.sentences {
            for &kind in &kinds {
                let key = BehaviorKey {
                    passage_id: p.id.clone(),
                    sentence_index: s.index,
                    kind,
                };
                if !canonical.insert(key.clone()) {
                    continue;
                }
                match carried.remove(&key) {
                    Some(r) => {
                        summary.skipped += 1;
                        slots.push(Slot::Existing(r));
                    }
                    None => {
                        let meta = SentenceRef {
                            passage_id: &p.id,
                            sentence_index: s.index,
                            sentence: &s.text,
                        };
                        slots.push(Slot::Job);
                        jobs.push((slots.len() - 1, meta, kind));
                    }
                }
            }
        }
    }
    summary.requested = jobs.len();

    let mut done: Vec<Option<BehaviorRecord>> = vec![None; slots.len()];
    let mut cursor = 0;
    let workers = teacher.max_in_flight().min(jobs.len());
    let next_job = AtomicUsize::new(0);
    let cancelled = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, BehaviorRecord)>();

    let write_result: io::Result<()> = std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let jobs = &jobs;
            let next_job = &next_job;
            let cancelled = &cancelled;
            scope.spawn(move || loop {
                if cancelled.load(Ordering::Relaxed) {
                    break;
                }
                let j = next_job.fetch_add(1, Ordering::Relaxed);
                let Some(&(slot, meta, kind)) = jobs.get(j) else {
                    break;
                };
                let record = teacher.read_sentence(templates, meta, kind);
                if tx.send((slot, record)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut flush =
            |done: &mut Vec<Option<BehaviorRecord>>, cursor: &mut usize| -> io::Result<()> {
                while *cursor < slots.len() {
                    match &slots[*cursor] {
                        Slot::Existing(r) => emit(r)?,
                        Slot::Job => match done[*cursor].take() {
                            Some(r) => {
                                summary.count(&r);
                                emit(&r)?;
                            }
                            None => return Ok(()),
                        },
                    }
                    *cursor += 1;
                }
                Ok(())
            };

        flush(&mut done, &mut cursor)?;
        for (slot, record) in rx {
            done[slot] = Some(record);
            if let Err(e) = flush(&mut done, &mut cursor) {
                cancelled.store(true, Ordering::Relaxed);
                return Err(e);
            }
        }
        Ok(())
    });
    write_result.map_err(SynthesisError::Emit)?;

    for key in carried_order {
        if let Some(r) = carried.remove(&key) {
            emit(&r).map_err(SynthesisError::Emit)?;
        }
    }
    Ok(summary)
}

/// File-backed [`synthesize_into`]. Records already in `sink` are reused;
/// the sink is rewritten through a sibling temporary file and renamed into
/// place once the run completes.
pub fn synthesize(
    passages: &[Passage],
    kinds: &[BehaviorKind],
    teacher: &Teacher,
    templates: &TeachingTemplates,
    sink: &Path,
) -> Result<SynthesisSummary, SynthesisError> {
    let existing = if sink.exists() {
        jsonl::read::<BehaviorRecord>(sink)?
    } else {
        Vec::new()
    };
    let sink_err = |source: io::Error| SynthesisError::Sink {
        path: sink.display().to_string(),
        source,
    };
    let tmp = temp_path(sink);
    let file = File::create(&tmp).map_err(sink_err)?;
    let mut w = BufWriter::new(file);
    let result = synthesize_into(passages, kinds, teacher, templates, existing, |r| {
        jsonl::write_line(&mut w, r)
    });
    let summary = match result {
        Ok(s) => s,
        Err(e) => {
            drop(w);
            let _ = fs::remove_file(&tmp);
            return Err(match e {
                SynthesisError::Emit(source) => sink_err(source),
                other => other,
            });
        }
    };
    w.flush().map_err(sink_err)?;
    drop(w);
    fs::rename(&tmp, sink).map_err(sink_err)?;
    Ok(summary)
}

fn temp_path(sink: &Path) -> PathBuf {
    let mut name = sink
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".partial");
    sink.with_file_name(name)
}
