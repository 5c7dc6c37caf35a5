//! Teacher/student consistency and data-size scaling.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::compose::TrainingDoc;
use crate::eval::{evaluate, EvalError, EvalMode, Taskset};
use crate::exec::Exec;
use crate::lm::{nll, sequence_logprobs, LmConfig, LmError, NGramModel, ScoreError, Scorer};
use crate::prompt::TaskTemplate;
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("text has no tokens")]
    EmptyText,
    #[error("no texts to compare")]
    NoTexts,
    #[error("sample size must be at least 1")]
    ZeroSample,
    #[error("invalid sizes: {0}")]
    Sizes(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// How per-token probabilities are averaged into one sequence probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// `exp(mean log p)`.
    #[default]
    Geometric,
    /// `mean p`.
    Arithmetic,
}

/// Length-normalized probability of `text`, in `(0, 1]`.
pub fn sequence_prob(
    backend: &dyn Scorer,
    text: &str,
    averaging: Averaging,
) -> Result<f64, AnalysisError> {
    let lps = sequence_logprobs(backend, text)?;
    if lps.is_empty() {
        return Err(AnalysisError::EmptyText);
    }
    let n = lps.len() as f64;
    Ok(match averaging {
        Averaging::Geometric => (lps.iter().map(|t| t.logprob).sum::<f64>() / n).exp(),
        Averaging::Arithmetic => lps.iter().map(|t| t.logprob.exp()).sum::<f64>() / n,
    })
}

/// `sum_i -p(text_i) * ln q(text_i)` with `p` from the teacher and `q` from
/// the student. Terms are computed under `exec` and summed in input order.
pub fn cross_entropy<S: AsRef<str> + Sync>(
    teacher: &dyn Scorer,
    student: &dyn Scorer,
    texts: &[S],
    averaging: Averaging,
    exec: Exec,
) -> Result<f64, AnalysisError> {
    if texts.is_empty() {
        return Err(AnalysisError::NoTexts);
    }
    let terms = exec.map(texts, |t| -> Result<f64, AnalysisError> {
        let p = sequence_prob(teacher, t.as_ref(), averaging)?;
        let q = sequence_prob(student, t.as_ref(), averaging)?;
        Ok(-p * q.ln())
    });
    let mut total = 0.0;
    for term in terms {
        total += term?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConsistency {
    pub task_id: String,
    pub sampled: usize,
    /// Cross entropy per student, in the order of [`ConsistencyReport::students`].
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub teacher_id: String,
    pub students: Vec<String>,
    pub seed: u64,
    pub sample_n: usize,
    pub averaging: Averaging,
    pub direction: String,
    pub tasks: Vec<TaskConsistency>,
    /// Mean over tasks, per student.
    pub average: Vec<f64>,
}

impl ConsistencyReport {
    /// Students as rows, tasks as columns, with a trailing average column.
    pub fn markdown(&self) -> String {
        let mut s = String::from("| Model |");
        for t in &self.tasks {
            let _ = write!(s, " {} |", t.task_id);
        }
        s.push_str(" Avg |\n|---|");
        for _ in &self.tasks {
            s.push_str("---|");
        }
        s.push_str("---|\n");
        for (i, student) in self.students.iter().enumerate() {
            let _ = write!(s, "| {student} |");
            for t in &self.tasks {
                let _ = write!(s, " {:.4} |", t.values[i]);
            }
            let _ = writeln!(s, " {:.4} |", self.average[i]);
        }
        s
    }
}

/// Indices of a seeded uniform sample without replacement, in ascending order.
pub fn sample_indices(n: usize, k: usize, seed: u64, stream: &str) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut picked = index::sample(&mut seed::substream(seed, stream), n, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Cross entropy of every student against the teacher on a seeded sample of
/// each task's instance inputs. Empty tasks are skipped.
pub fn consistency_report(
    teacher: &dyn Scorer,
    students: &[(String, &dyn Scorer)],
    tasksets: &[Taskset],
    sample_n: usize,
    seed: u64,
    averaging: Averaging,
    exec: Exec,
) -> Result<ConsistencyReport, AnalysisError> {
    if sample_n == 0 {
        return Err(AnalysisError::ZeroSample);
    }
    let mut tasks = Vec::new();
    for ts in tasksets {
        if ts.instances.is_empty() {
            log::warn!("task `{}` is empty; skipped", ts.task_id);
            continue;
        }
        let picked = sample_indices(
            ts.instances.len(),
            sample_n,
            seed,
            &format!("sample/{}", ts.task_id),
        );
        let texts: Vec<String> = picked
            .iter()
            .map(|&i| ts.instances[i].input_text())
            .collect();
        let values = students
            .iter()
            .map(|(_, s)| cross_entropy(teacher, *s, &texts, averaging, exec))
            .collect::<Result<Vec<_>, _>>()?;
        tasks.push(TaskConsistency {
            task_id: ts.task_id.clone(),
            sampled: texts.len(),
            values,
        });
    }
    let average = (0..students.len())
        .map(|i| {
            if tasks.is_empty() {
                0.0
            } else {
                tasks.iter().map(|t| t.values[i]).sum::<f64>() / tasks.len() as f64
            }
        })
        .collect();
    Ok(ConsistencyReport {
        teacher_id: teacher.id(),
        students: students.iter().map(|(name, _)| name.clone()).collect(),
        seed,
        sample_n,
        averaging,
        direction: "lower is closer to the teacher".into(),
        tasks,
        average,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub size: usize,
    /// Accuracy per task id; `None` when the task has no gold answers.
    pub accuracy: BTreeMap<String, Option<f64>>,
    /// Mean document nll over the largest training prefix.
    pub nll_largest_prefix: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRun {
    pub seed: u64,
    pub config_digest: String,
    pub tasks: Vec<String>,
    pub rows: Vec<ScalingRow>,
}

impl ScalingRun {
    pub fn csv(&self) -> String {
        let mut s = String::from("size");
        for t in &self.tasks {
            let _ = write!(s, ",{t}");
        }
        s.push('\n');
        for row in &self.rows {
            let _ = write!(s, "{}", row.size);
            for t in &self.tasks {
                match row.accuracy.get(t).copied().flatten() {
                    Some(a) => {
                        let _ = write!(s, ",{a}");
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// A taskset and the template for its `fields` instances, if any.
pub struct ScalingTask<'a> {
    pub taskset: &'a Taskset,
    pub template: Option<&'a TaskTemplate>,
}

/// Trains the n-gram student on growing prefixes of a seeded shuffle of
/// `docs` and evaluates every task at each size.
pub fn scaling_curve(
    docs: &[TrainingDoc],
    sizes: &[usize],
    config: &LmConfig,
    tasks: &[ScalingTask<'_>],
    seed: u64,
    exec: Exec,
) -> Result<ScalingRun, AnalysisError> {
    if sizes.is_empty() {
        return Err(AnalysisError::Sizes("no sizes given".into()));
    }
    if sizes[0] == 0 || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AnalysisError::Sizes(
            "sizes must be positive and strictly increasing".into(),
        ));
    }
    let largest = *sizes.last().expect("non-empty");
    if largest > docs.len() {
        return Err(AnalysisError::Sizes(format!(
            "size {largest} exceeds the {} available docs",
            docs.len()
        )));
    }
    let mut texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    texts.shuffle(&mut seed::substream(seed, "scaling"));
    let probe = &texts[..largest];

    let mut rows = Vec::new();
    for &size in sizes {
        let model = NGramModel::train(texts[..size].iter().copied(), config)?;
        let mut accuracy = BTreeMap::new();
        for task in tasks {
            let report = evaluate(task.taskset, &model, task.template, EvalMode::Blind, exec)?;
            accuracy.insert(task.taskset.task_id.clone(), report.accuracy);
        }
        rows.push(ScalingRow {
            size,
            accuracy,
            nll_largest_prefix: nll(&model, probe)?,
        });
    }
    let digest_input = serde_json::json!({
        "lm": config,
        "seed": seed,
        "sizes": sizes,
        "docs": crate::content_digest(texts.join("\n").as_bytes()),
    });
    Ok(ScalingRun {
        seed,
        config_digest: crate::content_digest(digest_input.to_string().as_bytes()),
        tasks: tasks.iter().map(|t| t.taskset.task_id.clone()).collect(),
        rows,
    })
}
