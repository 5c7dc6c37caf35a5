//! End-to-end run over the bundled fixtures.
//!
//! The teacher is an n-gram model of corpus A whose reading behaviors come
//! from the mock backend; `student_base` knows only corpus B, `student_brd`
//! adds the composed behavior dataset, and `student_ori` adds only the
//! original A passages as a control.

use anyhow::{bail, Context, Result};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use brd_core::analysis::{consistency_report, scaling_curve, Averaging, ScalingTask};
use brd_core::compose::{compose_dataset, compose_original, FilterSpec, MixSpec};
use brd_core::corpus::{load_corpus, load_passages, CorpusFormat, SegmenterConfig};
use brd_core::eval::{evaluate, load_taskset, markdown_summary, EvalMode, EvalReport, Taskset};
use brd_core::exec::Exec;
use brd_core::fixtures;
use brd_core::jsonl;
use brd_core::lm::LmConfig;
use brd_core::prompt::TaskTemplate;
use brd_core::teacher::{synthesize, BehaviorKind, Teacher, TeachingTemplates};
use brd_core::{BehaviorRecord, NGramModel, Scorer};

use crate::commands::{write_docs, write_file, write_json};

const MIN_ACCURACY_GAIN: f64 = 0.05;
const STUDENTS: [&str; 3] = ["student_base", "student_ori", "student_brd"];

pub fn run(out: Option<PathBuf>, seed: u64) -> Result<()> {
    let tmp;
    let dir = match out {
        Some(d) => {
            fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
            d
        }
        None => {
            tmp = tempfile::tempdir().context("creating a temporary directory")?;
            tmp.path().to_path_buf()
        }
    };
    let (transcript, failed) = pipeline(&dir, seed)?;
    write_file(&dir.join("reports/demo.md"), &transcript)?;
    print!("{transcript}");
    if failed > 0 {
        bail!("{failed} claim(s) did not hold");
    }
    Ok(())
}

fn read_texts(path: &Path) -> Result<Vec<String>> {
    load_corpus(path, CorpusFormat::Jsonl)?
        .map(|d| d.map(|d| d.text).map_err(Into::into))
        .collect()
}

fn concat<'a>(parts: &[&'a [String]]) -> Vec<&'a str> {
    parts
        .iter()
        .flat_map(|p| p.iter().map(String::as_str))
        .collect()
}

fn train(texts: &[&str], lm: &LmConfig, path: &Path) -> Result<NGramModel> {
    let model = NGramModel::train(texts.iter().copied(), lm)?;
    model.save(path)?;
    Ok(model)
}

fn pipeline(dir: &Path, seed: u64) -> Result<(String, usize)> {
    let mut t = String::new();
    writeln!(t, "# brd demo (seed {seed})\n")?;

    let data = dir.join("data");
    write_file(&data.join("corpus_a.jsonl"), fixtures::CORPUS_A)?;
    write_file(&data.join("corpus_b.jsonl"), fixtures::CORPUS_B)?;
    let mut tasksets: Vec<Taskset> = Vec::new();
    for (name, body) in fixtures::TASKS {
        let path = data.join("tasks").join(name);
        write_file(&path, body)?;
        tasksets.push(load_taskset(&path)?);
    }
    let templates: Vec<Option<TaskTemplate>> = tasksets
        .iter()
        .map(|ts| TaskTemplate::builtin(&ts.task_id).ok())
        .collect();

    // synthesize
    let passages = load_passages(
        &data.join("corpus_a.jsonl"),
        CorpusFormat::Jsonl,
        &SegmenterConfig::default(),
    )?;
    let sentences: usize = passages.iter().map(|p| p.sentences.len()).sum();
    let behaviors = dir.join("behaviors.jsonl");
    if behaviors.exists() {
        fs::remove_file(&behaviors)?;
    }
    let teacher = Teacher::mock();
    let summary = synthesize(
        &passages,
        &BehaviorKind::ALL,
        &teacher,
        &TeachingTemplates::default(),
        &behaviors,
    )?;
    let accepted: usize = summary.accepted.values().sum();
    let rejected: usize = summary.rejected.values().sum();
    writeln!(t, "## synthesize\n")?;
    writeln!(
        t,
        "{} passages, {sentences} sentences, {} requests: {accepted} accepted, {rejected} rejected\n",
        passages.len(),
        summary.requested
    )?;

    // compose
    let records: Vec<BehaviorRecord> = jsonl::read(&behaviors)?;
    let mix = MixSpec {
        seed,
        ..MixSpec::default()
    };
    let (docs, manifest) = compose_dataset(&passages, records, &mix, &FilterSpec::default())?;
    write_docs(&dir.join("dataset.jsonl"), &docs)?;
    write_json(&dir.join("manifest.json"), &manifest)?;
    writeln!(t, "## compose\n")?;
    let counts: Vec<String> = manifest
        .counts
        .iter()
        .map(|(k, c)| format!("{k} {}", c.emitted))
        .collect();
    writeln!(t, "{} docs ({})\n", manifest.total, counts.join(", "))?;

    // train
    let lm = LmConfig::default();
    let a_texts = read_texts(&data.join("corpus_a.jsonl"))?;
    let b_texts = read_texts(&data.join("corpus_b.jsonl"))?;
    let ori_texts = passages
        .iter()
        .map(|p| compose_original(p, &mix.delimiter).map(|d| d.text))
        .collect::<Result<Vec<_>, _>>()?;
    let doc_texts: Vec<String> = docs.iter().map(|d| d.text.clone()).collect();
    let models_dir = dir.join("models");
    fs::create_dir_all(&models_dir)?;
    let teacher_lm = train(&concat(&[&a_texts]), &lm, &models_dir.join("teacher.json"))?;
    let students = [
        train(
            &concat(&[&b_texts]),
            &lm,
            &models_dir.join("student_base.json"),
        )?,
        train(
            &concat(&[&b_texts, &ori_texts]),
            &lm,
            &models_dir.join("student_ori.json"),
        )?,
        train(
            &concat(&[&b_texts, &doc_texts]),
            &lm,
            &models_dir.join("student_brd.json"),
        )?,
    ];
    writeln!(t, "## train\n")?;
    writeln!(t, "| model | docs | vocabulary | digest |")?;
    writeln!(t, "|---|---:|---:|---|")?;
    let sizes = [
        a_texts.len(),
        b_texts.len(),
        b_texts.len() + ori_texts.len(),
        b_texts.len() + doc_texts.len(),
    ];
    let names = std::iter::once("teacher").chain(STUDENTS);
    for ((name, model), n) in names
        .zip(std::iter::once(&teacher_lm).chain(&students))
        .zip(sizes)
    {
        writeln!(
            t,
            "| {name} | {n} | {} | {} |",
            model.vocab().len(),
            &model.digest()[..12]
        )?;
    }
    writeln!(t)?;

    // eval
    let exec = Exec::default();
    let mut accuracy: Vec<Vec<f64>> = Vec::new();
    for (name, model) in STUDENTS.iter().zip(&students) {
        let mut reports: Vec<EvalReport> = Vec::new();
        for (ts, template) in tasksets.iter().zip(&templates) {
            let report = evaluate(ts, model, template.as_ref(), EvalMode::Blind, exec)?;
            write_json(
                &dir.join(format!("reports/eval/{name}/{}.json", ts.task_id)),
                &report,
            )?;
            reports.push(report);
        }
        write_file(
            &dir.join(format!("reports/eval/{name}/summary.md")),
            &markdown_summary(&reports),
        )?;
        accuracy.push(reports.iter().map(|r| r.accuracy.unwrap_or(0.0)).collect());
    }
    writeln!(t, "## eval (blind accuracy)\n")?;
    writeln!(t, "| task | {} |", STUDENTS.join(" | "))?;
    writeln!(t, "|---|{}", "---:|".repeat(STUDENTS.len()))?;
    for (i, ts) in tasksets.iter().enumerate() {
        let cells: Vec<String> = accuracy.iter().map(|a| format!("{:.3}", a[i])).collect();
        writeln!(t, "| {} | {} |", ts.task_id, cells.join(" | "))?;
    }
    let mean = |a: &[f64]| a.iter().sum::<f64>() / a.len() as f64;
    let means: Vec<f64> = accuracy.iter().map(|a| mean(a)).collect();
    let cells: Vec<String> = means.iter().map(|m| format!("{m:.3}")).collect();
    writeln!(t, "| mean | {} |\n", cells.join(" | "))?;

    // analyze
    let pairs: Vec<(String, &dyn Scorer)> = STUDENTS
        .iter()
        .zip(&students)
        .map(|(n, m)| (n.to_string(), m as &dyn Scorer))
        .collect();
    let consistency = consistency_report(
        &teacher_lm,
        &pairs,
        &tasksets,
        1000,
        seed,
        Averaging::Geometric,
        exec,
    )?;
    write_json(&dir.join("reports/consistency.json"), &consistency)?;
    let consistency_md = consistency.markdown();
    write_file(&dir.join("reports/consistency.md"), &consistency_md)?;
    writeln!(
        t,
        "## consistency (cross entropy to the teacher, {})\n",
        consistency.direction
    )?;
    writeln!(t, "{consistency_md}")?;

    let n = docs.len();
    let scaling_sizes = [n / 4, n / 2, n];
    let scaling_tasks: Vec<ScalingTask<'_>> = tasksets
        .iter()
        .zip(&templates)
        .map(|(taskset, template)| ScalingTask {
            taskset,
            template: template.as_ref(),
        })
        .collect();
    let scaling = scaling_curve(&docs, &scaling_sizes, &lm, &scaling_tasks, seed, exec)?;
    write_json(&dir.join("reports/scaling.json"), &scaling)?;
    write_file(&dir.join("reports/scaling.csv"), &scaling.csv())?;
    writeln!(t, "## scaling (dataset prefixes only)\n")?;
    writeln!(t, "```\n{}```\n", scaling.csv())?;

    // claims
    let ce = &consistency.average;
    let (base, brd) = (0, 2);
    let nll: Vec<f64> = scaling.rows.iter().map(|r| r.nll_largest_prefix).collect();
    let claims = [
        (
            ce[brd] < ce[base],
            format!(
                "student_brd is closer to the teacher: cross entropy {:.4} < {:.4}",
                ce[brd], ce[base]
            ),
        ),
        (
            means[brd] >= means[base] + MIN_ACCURACY_GAIN,
            format!(
                "behavior data improves probe accuracy: {:.3} >= {:.3} + {MIN_ACCURACY_GAIN}",
                means[brd], means[base]
            ),
        ),
        (
            nll.windows(2).all(|w| w[1] <= w[0]),
            format!(
                "more behavior data lowers nll on the largest prefix: {}",
                nll.iter()
                    .map(|x| format!("{x:.3}"))
                    .collect::<Vec<_>>()
                    .join(" -> ")
            ),
        ),
    ];
    writeln!(t, "## claims\n")?;
    let mut failed = 0;
    for (ok, text) in &claims {
        writeln!(t, "- [{}] {text}", if *ok { "ok" } else { "FAILED" })?;
        failed += usize::from(!ok);
    }
    writeln!(
        t,
        "\ncontrol: student_ori mean accuracy {:.3}, cross entropy {:.4}",
        means[1], ce[1]
    )?;
    Ok((t, failed))
}
