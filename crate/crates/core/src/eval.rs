//! Multiple-choice evaluation by average per-token log-probability.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::exec::Exec;
use crate::lm::{avg_logprob, ScoreError, Scorer};
use crate::prompt::{render_task_prompt, PromptError, TaskTemplate};
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("instance `{id}`: {message}")]
    Instance { id: String, message: String },
    #[error("instance `{id}`: scoring failed")]
    Scoring { id: String, source: ScoreError },
    #[error("instance `{id}`")]
    Prompt { id: String, source: PromptError },
    #[error("invalid split: {0}")]
    Split(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<IndexMap<String, String>>,
    pub candidates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
}

impl TaskInstance {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        match (&self.prompt, &self.fields) {
            (Some(_), Some(_)) => return Err("give either `prompt` or `fields`, not both".into()),
            (None, None) => return Err("missing `prompt` or `fields`".into()),
            _ => {}
        }
        if self.candidates.len() < 2 {
            return Err(format!(
                "needs at least 2 candidates, has {}",
                self.candidates.len()
            ));
        }
        let distinct: HashSet<&String> = self.candidates.iter().collect();
        if distinct.len() != self.candidates.len() {
            return Err("duplicate candidates".into());
        }
        if let Some(g) = &self.gold {
            if !self.candidates.contains(g) {
                return Err(format!("gold `{g}` is not a candidate"));
            }
        }
        Ok(())
    }

    /// The prompt text, rendering `fields` through `template` when needed.
    pub fn prompt_text(&self, template: Option<&TaskTemplate>) -> Result<String, EvalError> {
        if let Some(p) = &self.prompt {
            return Ok(p.clone());
        }
        let fields = self.fields.as_ref().ok_or_else(|| EvalError::Instance {
            id: self.id.clone(),
            message: "no prompt or fields".into(),
        })?;
        let template = template.ok_or_else(|| EvalError::Instance {
            id: self.id.clone(),
            message: "has `fields` but no task template was given".into(),
        })?;
        render_task_prompt(template, fields)
            .map(|p| p.text)
            .map_err(|source| EvalError::Prompt {
                id: self.id.clone(),
                source,
            })
    }

    /// The raw input text: field values in file order joined by spaces, or
    /// the prompt itself.
    pub fn input_text(&self) -> String {
        match (&self.fields, &self.prompt) {
            (Some(f), _) => f
                .values()
                .map(|v| v.trim())
                .filter(|v| !v.is_empty())
                .collect::<Vec<_>>()
                .join(" "),
            (None, Some(p)) => p.clone(),
            (None, None) => String::new(),
        }
    }
}

/// A task file: instances plus the id derived from the file name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taskset {
    pub task_id: String,
    pub instances: Vec<TaskInstance>,
}

/// Reads a task JSONL file, validating every instance.
pub fn load_taskset(path: &Path) -> Result<Taskset, EvalError> {
    let io_err = |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut instances = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| EvalError::Line {
            line: i + 1,
            message,
        };
        let inst: TaskInstance = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        inst.validate().map_err(bad)?;
        if !ids.insert(inst.id.clone()) {
            return Err(bad(format!("duplicate id `{}`", inst.id)));
        }
        instances.push(inst);
    }
    let task_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("task")
        .to_string();
    Ok(Taskset { task_id, instances })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub scores: Vec<CandidateScore>,
    pub chosen: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
}

/// Index of the maximal score; the earliest index wins ties.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Scores each candidate by its mean token log-probability after the prompt
/// and picks the best. Candidates are scored with a leading space so that
/// subword backends see a word boundary after the prompt.
pub fn predict(
    instance: &TaskInstance,
    backend: &dyn Scorer,
    template: Option<&TaskTemplate>,
) -> Result<Prediction, EvalError> {
    let prompt = instance.prompt_text(template)?;
    let mut scores = Vec::with_capacity(instance.candidates.len());
    for c in &instance.candidates {
        let score = avg_logprob(backend, &prompt, &format!(" {c}")).map_err(|source| {
            EvalError::Scoring {
                id: instance.id.clone(),
                source,
            }
        })?;
        scores.push(CandidateScore {
            candidate: c.clone(),
            score,
        });
    }
    let raw: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let best = argmax_first(&raw).ok_or_else(|| EvalError::Instance {
        id: instance.id.clone(),
        message: "no candidates".into(),
    })?;
    let chosen = instance.candidates[best].clone();
    let correct = instance.gold.as_ref().map(|g| *g == chosen);
    Ok(Prediction {
        instance_id: instance.id.clone(),
        scores,
        chosen,
        correct,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// No task training data was available to the student.
    #[default]
    Blind,
    /// Task training inputs (without golds) fed the student's training data.
    Relaxed,
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalMode::Blind => "blind",
            EvalMode::Relaxed => "relaxed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_id: String,
    pub mode: EvalMode,
    pub backend_id: String,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub predictions: Vec<Prediction>,
}

impl EvalReport {
    pub fn markdown_row(&self) -> String {
        let acc = self
            .accuracy
            .map(|a| format!("{:.1}", a * 100.0))
            .unwrap_or_else(|| "n/a".into());
        format!(
            "| {} | {} | {} | {} | {} |",
            self.task_id, self.mode, self.backend_id, self.n, acc
        )
    }
}

/// Markdown table with one row per report.
pub fn markdown_summary(reports: &[EvalReport]) -> String {
    let mut s =
        String::from("| task | mode | backend | n | accuracy (%) |\n|---|---|---|---|---|\n");
    for r in reports {
        let _ = writeln!(s, "{}", r.markdown_row());
    }
    s
}

/// Predicts every instance (concurrently under [`Exec::Parallel`]) and
/// aggregates accuracy. Accuracy is reported only when every instance has a
/// gold answer and there is at least one instance.
pub fn evaluate(
    taskset: &Taskset,
    backend: &dyn Scorer,
    template: Option<&TaskTemplate>,
    mode: EvalMode,
    exec: Exec,
) -> Result<EvalReport, EvalError> {
    let predictions = exec
        .map(&taskset.instances, |inst| predict(inst, backend, template))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let n = predictions.len();
    let all_gold = n > 0 && predictions.iter().all(|p| p.correct.is_some());
    let correct = all_gold.then(|| {
        predictions
            .iter()
            .filter(|p| p.correct == Some(true))
            .count()
    });
    Ok(EvalReport {
        task_id: taskset.task_id.clone(),
        mode,
        backend_id: backend.id(),
        n,
        correct,
        accuracy: correct.map(|c| c as f64 / n as f64),
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSplit {
    pub train: Vec<TaskInstance>,
    pub tune: Vec<TaskInstance>,
    pub test: Vec<TaskInstance>,
}

/// Seeded shuffle followed by a contiguous train/tune/test split. Tune and
/// test get `floor(n * fraction)` instances; train gets the remainder.
pub fn split_taskset(
    instances: &[TaskInstance],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<TaskSplit, EvalError> {
    let (f_train, f_tune, f_test) = fractions;
    if [f_train, f_tune, f_test]
        .iter()
        .any(|f| !(f.is_finite() && *f > 0.0))
    {
        return Err(EvalError::Split("fractions must be positive".into()));
    }
    if f_train + f_tune + f_test > 1.0 + 1e-9 {
        return Err(EvalError::Split("fractions sum to more than 1".into()));
    }
    let n = instances.len();
    if n < 3 {
        return Err(EvalError::Split(format!(
            "need at least 3 instances, have {n}"
        )));
    }
    let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let n_tune = floor(f_tune);
    let n_test = floor(f_test);
    let n_train = n - n_tune - n_test;
    let mut shuffled = instances.to_vec();
    shuffled.shuffle(&mut seed::substream(seed, "split"));
    let test = shuffled.split_off(n_train + n_tune);
    let tune = shuffled.split_off(n_train);
    Ok(TaskSplit {
        train: shuffled,
        tune,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{LmConfig, NGramModel, TokenLogprob};
    use std::io::Write;

    struct Fixed(Vec<f64>);

    impl Scorer for Fixed {
        fn id(&self) -> String {
            "fixed".into()
        }
        fn continuation_logprobs(
            &self,
            _p: &str,
            c: &str,
        ) -> Result<Vec<TokenLogprob>, ScoreError> {
            let i = c.trim().parse::<usize>().unwrap();
            Ok(vec![TokenLogprob {
                token: c.into(),
                logprob: self.0[i],
            }])
        }
    }

    fn inst(id: &str, candidates: &[&str], gold: Option<&str>) -> TaskInstance {
        TaskInstance {
            id: id.into(),
            prompt: Some("p".into()),
            fields: None,
            candidates: candidates.iter().map(|c| c.to_string()).collect(),
            gold: gold.map(str::to_string),
        }
    }

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn loads_xnli_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "xnli.jsonl",
            r#"{"id":"1","fields":{"premise":"P","hypothesis":"H"},"candidates":["Yes","No","Maybe"],"gold":"No"}"#,
        );
        let t = load_taskset(&p).unwrap();
        assert_eq!(t.task_id, "xnli");
        assert_eq!(t.instances.len(), 1);
        let tpl = TaskTemplate::builtin("xnli").unwrap();
        assert!(t.instances[0]
            .prompt_text(Some(&tpl))
            .unwrap()
            .starts_with("P\nQuestion"));
        assert_eq!(t.instances[0].input_text(), "P H");
    }

    #[test]
    fn rejects_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.jsonl",
            r#"{"id":"1","prompt":"x","candidates":["Yes","Yes"]}"#,
        );
        assert!(matches!(
            load_taskset(&p),
            Err(EvalError::Line { line: 1, .. })
        ));
        let p = write(
            dir.path(),
            "b.jsonl",
            r#"{"id":"1","prompt":"x","candidates":["Yes"]}"#,
        );
        assert!(load_taskset(&p).is_err());
        let p = write(
            dir.path(),
            "c.jsonl",
            r#"{"id":"1","prompt":"x","candidates":["Yes","No"],"gold":"Perhaps"}"#,
        );
        assert!(load_taskset(&p).is_err());
        let body = "{\"id\":\"1\",\"prompt\":\"x\",\"candidates\":[\"a\",\"b\"]}\n{\"id\":\"1\",\"prompt\":\"y\",\"candidates\":[\"a\",\"b\"]}\n";
        let p = write(dir.path(), "d.jsonl", body);
        assert!(matches!(
            load_taskset(&p),
            Err(EvalError::Line { line: 2, .. })
        ));
    }

    #[test]
    fn empty_task_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.jsonl", "");
        let t = load_taskset(&p).unwrap();
        let m = NGramModel::train(["a b"], &LmConfig::default()).unwrap();
        let r = evaluate(&t, &m, None, EvalMode::Blind, Exec::Sequential).unwrap();
        assert_eq!(r.n, 0);
        assert_eq!(r.accuracy, None);
    }

    #[test]
    fn argmax_and_ties() {
        let b = Fixed(vec![-1.0, -2.0]);
        assert_eq!(
            predict(&inst("a", &["0", "1"], None), &b, None)
                .unwrap()
                .chosen,
            "0"
        );
        let b = Fixed(vec![-3.0, -2.0]);
        assert_eq!(
            predict(&inst("a", &["0", "1"], None), &b, None)
                .unwrap()
                .chosen,
            "1"
        );
        let b = Fixed(vec![-2.0, -2.0, -2.0]);
        assert_eq!(
            predict(&inst("a", &["1", "0", "2"], None), &b, None)
                .unwrap()
                .chosen,
            "1"
        );
        assert_eq!(argmax_first(&[]), None);
    }

    #[test]
    fn bigram_backend_prefers_certain_candidate() {
        let cfg = LmConfig {
            order: 2,
            k: 0.1,
            weights: Some(vec![0.0, 1.0]),
            lowercase: true,
        };
        let m = NGramModel::train(["a b", "a b", "a b c"], &cfg).unwrap();
        let i = TaskInstance {
            prompt: Some("a".into()),
            ..inst("x", &["c", "b"], Some("b"))
        };
        let p = predict(&i, &m, None).unwrap();
        assert_eq!(p.chosen, "b");
        assert_eq!(p.correct, Some(true));
    }

    #[test]
    fn accuracy_counts() {
        let b = Fixed(vec![-1.0, -2.0]);
        let mut instances = Vec::new();
        for i in 0..10 {
            let gold = if i < 7 { "0" } else { "1" };
            instances.push(inst(&i.to_string(), &["0", "1"], Some(gold)));
        }
        let t = Taskset {
            task_id: "t".into(),
            instances,
        };
        let r = evaluate(&t, &b, None, EvalMode::Blind, Exec::Parallel).unwrap();
        assert_eq!(r.accuracy, Some(0.7));
        let again = evaluate(&t, &b, None, EvalMode::Blind, Exec::Sequential).unwrap();
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn no_golds_no_accuracy() {
        let b = Fixed(vec![-1.0, -2.0]);
        let t = Taskset {
            task_id: "t".into(),
            instances: vec![inst("a", &["0", "1"], None)],
        };
        let r = evaluate(&t, &b, None, EvalMode::Relaxed, Exec::Sequential).unwrap();
        assert_eq!(r.accuracy, None);
        assert_eq!(r.predictions.len(), 1);
        assert!(!serde_json::to_string(&r).unwrap().contains("accuracy"));
    }

    #[test]
    fn fields_without_template_is_an_error() {
        let i = TaskInstance {
            prompt: None,
            fields: Some(
                [("sentence".to_string(), "x".to_string())]
                    .into_iter()
                    .collect(),
            ),
            ..inst("a", &["0", "1"], None)
        };
        assert!(predict(&i, &Fixed(vec![0.0, 0.0]), None).is_err());
    }

    #[test]
    fn split_sizes() {
        let many: Vec<_> = (0..100)
            .map(|i| inst(&i.to_string(), &["a", "b"], None))
            .collect();
        let s = split_taskset(&many, (0.8, 0.1, 0.1), 42).unwrap();
        assert_eq!((s.train.len(), s.tune.len(), s.test.len()), (80, 10, 10));
        let s2 = split_taskset(&many, (0.8, 0.1, 0.1), 42).unwrap();
        assert_eq!(s, s2);
        let ids: HashSet<_> = s
            .train
            .iter()
            .chain(&s.tune)
            .chain(&s.test)
            .map(|i| i.id.clone())
            .collect();
        assert_eq!(ids.len(), 100);
        let ten = &many[..10];
        let s = split_taskset(ten, (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!((s.train.len(), s.tune.len(), s.test.len()), (8, 1, 1));
        assert!(split_taskset(&many[..2], (0.8, 0.1, 0.1), 1).is_err());
        assert!(split_taskset(&many, (0.8, 0.2, 0.1), 1).is_err());
        assert!(split_taskset(&many, (0.8, 0.0, 0.1), 1).is_err());
    }
}
