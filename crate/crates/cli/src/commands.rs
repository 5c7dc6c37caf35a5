use anyhow::{bail, Context, Result};
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use brd_core::analysis::{consistency_report, scaling_curve, Averaging, ScalingTask};
use brd_core::compose::{
    compose_brd2, compose_dataset, compose_task_gold, compose_task_pseudo, ComposeError, DocKind,
    Level, MixRatio,
};
use brd_core::corpus::{load_corpus, load_passages, CorpusFormat, Passage, SegmenterConfig};
use brd_core::eval::{evaluate, load_taskset, markdown_summary, split_taskset, EvalMode, Taskset};
use brd_core::exec::Exec;
use brd_core::jsonl;
use brd_core::lm::{nll, LmConfig, RemoteScorer, DEFAULT_LOGPROBS_PATH};
use brd_core::prompt::{load_task_templates, TaskTemplate, TeachingTemplate};
use brd_core::teacher::{synthesize, BehaviorKind, Teacher, TeacherConfig, TeachingTemplates};
use brd_core::{BehaviorRecord, NGramModel, Scorer, TrainingDoc};

use crate::config::PipelineConfig;
use crate::{
    AnalyzeArgs, Cli, Command, ComposeArgs, CorpusArgs, EvalArgs, LmArgs, ScorerArg, SplitArgs,
    SynthesizeArgs, TaskArgs, TaskDocsArg, TeacherArgs, TrainArgs,
};

/// Invalid invocation; maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn require<T>(value: Option<T>, what: &str) -> Result<T> {
    value.ok_or_else(|| usage(format!("missing {what}")))
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(|e| usage(format!("{e:#}")))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.mix.seed = config.seed;
    match cli.command {
        Command::Synthesize(args) => cmd_synthesize(args, &config),
        Command::Compose(args) => cmd_compose(args, &config),
        Command::Train(args) => cmd_train(args, &config),
        Command::Eval(args) => cmd_eval(args, &config),
        Command::Analyze(args) => cmd_analyze(args, &config),
        Command::Split(args) => cmd_split(args, &config),
        Command::Demo(args) => crate::demo::run(args.out, config.seed),
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, &text)
}

pub fn write_docs(path: &Path, docs: &[TrainingDoc]) -> Result<()> {
    ensure_parent(path)?;
    jsonl::write(path, docs).with_context(|| format!("writing {}", path.display()))
}

fn segmenter(args: &CorpusArgs, config: &PipelineConfig) -> Result<SegmenterConfig> {
    match args
        .abbreviations
        .as_ref()
        .or(config.paths.abbreviations.as_ref())
    {
        Some(p) => SegmenterConfig::from_file(p)
            .with_context(|| format!("reading abbreviations {}", p.display())),
        None => Ok(SegmenterConfig::default()),
    }
}

fn passages(args: &CorpusArgs, config: &PipelineConfig) -> Result<Vec<Passage>> {
    let path = require(
        args.corpus.clone().or_else(|| config.paths.corpus.clone()),
        "--corpus",
    )?;
    let format = args
        .format
        .map(CorpusFormat::from)
        .or(config.paths.corpus_format)
        .unwrap_or_else(|| CorpusFormat::from_path(&path));
    load_passages(&path, format, &segmenter(args, config)?)
        .with_context(|| format!("corpus {}", path.display()))
}

fn teacher_config(args: &TeacherArgs, base: &TeacherConfig) -> TeacherConfig {
    let mut c = base.clone();
    if let Some(b) = args.backend {
        c.backend = b.into();
    }
    if let Some(e) = &args.endpoint {
        c.endpoint = Some(e.clone());
    }
    if let Some(p) = &args.path {
        c.path = p.clone();
    }
    if let Some(m) = &args.model {
        c.model = Some(m.clone());
    }
    if let Some(t) = args.temperature {
        c.temperature = t;
    }
    if let Some(n) = args.max_tokens {
        c.max_tokens = n;
    }
    if let Some(n) = args.max_in_flight {
        c.max_in_flight = n;
    }
    if let Some(n) = args.retry_limit {
        c.retry_limit = n;
    }
    if let Some(ms) = args.backoff_ms {
        c.backoff_base_ms = ms;
    }
    if let Some(s) = args.timeout {
        c.timeout_s = s;
    }
    c
}

fn teacher(args: &TeacherArgs, config: &PipelineConfig) -> Result<Teacher> {
    Teacher::from_config(&teacher_config(args, &config.teacher)).map_err(|e| usage(e.to_string()))
}

fn teaching_templates(args: &TeacherArgs) -> Result<TeachingTemplates> {
    let mut templates = TeachingTemplates::default();
    for (path, kind) in [
        (&args.ner_template, BehaviorKind::Ner),
        (&args.qra_template, BehaviorKind::Qra),
    ] {
        if let Some(p) = path {
            let t =
                TeachingTemplate::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            if t.kind != kind {
                bail!(usage(format!(
                    "{} is a {} template, expected {kind}",
                    p.display(),
                    t.kind
                )));
            }
            match kind {
                BehaviorKind::Ner => templates.ner = t,
                BehaviorKind::Qra => templates.qra = t,
            }
        }
    }
    Ok(templates)
}

fn cmd_synthesize(args: SynthesizeArgs, config: &PipelineConfig) -> Result<()> {
    let out = require(
        args.out.clone().or_else(|| config.paths.behaviors.clone()),
        "--out",
    )?;
    let kinds = args.kinds.clone().unwrap_or_else(|| config.kinds.clone());
    let teacher = teacher(&args.teacher, config)?;
    let templates = teaching_templates(&args.teacher)?;
    let passages = passages(&args.corpus, config)?;
    ensure_parent(&out)?;
    let summary = synthesize(&passages, &kinds, &teacher, &templates, &out)?;
    if summary.requested == 0 {
        println!("skipped: all present ({} records)", summary.skipped);
    }
    let total = |m: &BTreeMap<BehaviorKind, usize>| m.values().sum::<usize>();
    println!(
        "requested {} skipped {} accepted {} rejected {}",
        summary.requested,
        summary.skipped,
        total(&summary.accepted),
        total(&summary.rejected)
    );
    for (reason, n) in &summary.rejected_by_reason {
        println!("  rejected:{reason} {n}");
    }
    let failures = summary.transport_failures();
    if failures > 0 {
        bail!("{failures} requests failed in transport; rerun to retry them");
    }
    Ok(())
}

fn parse_ratios(specs: &[String]) -> Result<BTreeMap<DocKind, MixRatio>> {
    let mut out = BTreeMap::new();
    for spec in specs {
        let (kind, ratio) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--ratio `{spec}` is not KIND=R")))?;
        let kind: DocKind = kind
            .trim()
            .parse()
            .map_err(|e| usage(format!("--ratio `{spec}`: {e}")))?;
        let ratio: MixRatio = ratio
            .trim()
            .parse()
            .map_err(|e| usage(format!("--ratio `{spec}`: {e}")))?;
        if out.insert(kind, ratio).is_some() {
            bail!(usage(format!("--ratio given twice for {kind}")));
        }
    }
    Ok(out)
}

fn compose_error(e: ComposeError) -> anyhow::Error {
    match e {
        ComposeError::Filter(_) | ComposeError::InvalidDelimiter(_) => usage(e.to_string()),
        other => other.into(),
    }
}

fn cmd_compose(args: ComposeArgs, config: &PipelineConfig) -> Result<()> {
    let out = require(
        args.out.clone().or_else(|| config.paths.dataset.clone()),
        "--out",
    )?;
    let delimiter = args
        .delimiter
        .clone()
        .unwrap_or_else(|| config.mix.delimiter.clone());
    if let (Some(tasks), Some(flavor)) = (&args.tasks, args.task_docs) {
        return compose_tasks(&args, tasks, flavor, &out, &delimiter, config);
    }

    let mut mix = config.mix.clone();
    if !args.ratios.is_empty() {
        mix.ratios = parse_ratios(&args.ratios)?;
    }
    if args.sentence_level {
        mix.level = Level::Sentence;
    }
    mix.delimiter = delimiter;
    let mut filters = config.filters.clone();
    filters.drop_ner |= args.drop_ner;
    filters.drop_qra |= args.drop_qra;
    filters.drop_sentiment |= args.drop_sentiment;
    if let Some(words) = &args.sentiment_words {
        filters.sentiment_words = words.clone();
    }
    filters.validate(&mix).map_err(compose_error)?;

    let behaviors = require(
        args.behaviors
            .clone()
            .or_else(|| config.paths.behaviors.clone()),
        "--behaviors",
    )?;
    let passages = passages(&args.corpus, config)?;
    let records: Vec<BehaviorRecord> = jsonl::read(&behaviors)?;
    let (docs, manifest) =
        compose_dataset(&passages, records, &mix, &filters).map_err(compose_error)?;

    let manifest_path = args
        .manifest
        .clone()
        .or_else(|| config.paths.manifest.clone())
        .unwrap_or_else(|| out.with_file_name("manifest.json"));
    write_docs(&out, &docs)?;
    write_json(&manifest_path, &manifest)?;
    println!(
        "composed {} docs ({} level, seed {})",
        manifest.total,
        level_name(manifest.level),
        manifest.seed
    );
    for (kind, c) in &manifest.counts {
        println!("  {kind}: {} of {} available", c.emitted, c.available);
    }
    for (kind, n) in manifest.skipped.iter().filter(|(_, n)| **n > 0) {
        println!("  {kind}: {n} units skipped");
    }
    Ok(())
}

fn level_name(level: Level) -> &'static str {
    match level {
        Level::Passage => "passage",
        Level::Sentence => "sentence",
    }
}

fn compose_tasks(
    args: &ComposeArgs,
    tasks: &Path,
    flavor: TaskDocsArg,
    out: &Path,
    delimiter: &str,
    config: &PipelineConfig,
) -> Result<()> {
    let ts = load_taskset(tasks).context("reading tasks")?;
    let template = resolve_template(
        &ts.task_id,
        args.template.as_deref(),
        config.paths.templates.as_deref(),
    )?;
    let (docs, skipped) = match flavor {
        TaskDocsArg::Gold => (compose_task_gold(&ts.instances, template.as_ref())?, 0),
        TaskDocsArg::Pseudo => {
            let teacher = teacher(&args.teacher, config)?;
            let (docs, s) = compose_task_pseudo(&ts.instances, &teacher, template.as_ref())?;
            (docs, s.skipped)
        }
        TaskDocsArg::Brd2 => {
            let teacher = teacher(&args.teacher, config)?;
            let templates = teaching_templates(&args.teacher)?;
            let seg = segmenter(&args.corpus, config)?;
            let (docs, s) = compose_brd2(
                &ts.instances,
                &teacher,
                &templates,
                &config.kinds,
                &seg,
                delimiter,
            )
            .map_err(compose_error)?;
            (docs, s.skipped)
        }
    };
    write_docs(out, &docs)?;
    println!(
        "composed {} task docs from `{}` ({} skipped)",
        docs.len(),
        ts.task_id,
        skipped
    );
    Ok(())
}

fn lm_config(args: &LmArgs, config: &PipelineConfig) -> Result<LmConfig> {
    let mut lm = config.lm.clone();
    if let Some(order) = args.order {
        if order != lm.order {
            lm.weights = None;
        }
        lm.order = order;
    }
    if let Some(k) = args.k {
        lm.k = k;
    }
    if let Some(w) = &args.weights {
        lm.weights = Some(w.clone());
    }
    lm.resolved_weights().map_err(|e| usage(e.to_string()))?;
    Ok(lm)
}

pub fn read_docs(path: &Path) -> Result<Vec<TrainingDoc>> {
    jsonl::read(path).with_context(|| format!("dataset {}", path.display()))
}

fn cmd_train(args: TrainArgs, config: &PipelineConfig) -> Result<()> {
    let lm = lm_config(&args.lm, config)?;
    let out = require(
        args.out.clone().or_else(|| config.paths.model.clone()),
        "--out",
    )?;
    let mut datasets = args.datasets.clone();
    if datasets.is_empty() && args.corpora.is_empty() {
        datasets.extend(config.paths.dataset.clone());
    }
    if datasets.is_empty() && args.corpora.is_empty() {
        bail!(usage("missing --dataset or --corpus"));
    }
    let mut texts = Vec::new();
    for d in &datasets {
        texts.extend(read_docs(d)?.into_iter().map(|doc| doc.text));
    }
    for c in &args.corpora {
        for doc in load_corpus(c, CorpusFormat::from_path(c))
            .with_context(|| format!("corpus {}", c.display()))?
        {
            texts.push(doc.with_context(|| format!("corpus {}", c.display()))?.text);
        }
    }
    if texts.is_empty() {
        bail!("no training documents");
    }
    let model = NGramModel::train(texts.iter().map(String::as_str), &lm)?;
    ensure_parent(&out)?;
    model.save(&out)?;
    println!(
        "trained order-{} model on {} docs, vocabulary {}",
        model.order(),
        texts.len(),
        model.vocab().len()
    );
    println!("digest {}", model.digest());
    println!("mean train nll {:.4}", nll(&model, &texts)?);
    Ok(())
}

fn is_url(s: &str) -> bool {
    s.starts_with("http://") || s.starts_with("https://")
}

/// A model file, or a remote scorer when `spec` is an http(s) URL.
pub fn open_scorer(spec: &str, timeout: Duration) -> Result<Box<dyn Scorer>> {
    if is_url(spec) {
        Ok(Box::new(RemoteScorer::new(
            spec,
            DEFAULT_LOGPROBS_PATH,
            timeout,
        )))
    } else {
        let model = NGramModel::load(Path::new(spec)).with_context(|| format!("model {spec}"))?;
        Ok(Box::new(model))
    }
}

fn task_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

fn load_tasks(paths: &[PathBuf]) -> Result<Vec<Taskset>> {
    let mut out: Vec<Taskset> = Vec::new();
    for path in paths {
        for file in task_files(path)? {
            let ts = load_taskset(&file).context("reading tasks")?;
            if out.iter().any(|t| t.task_id == ts.task_id) {
                bail!(usage(format!("task `{}` given twice", ts.task_id)));
            }
            out.push(ts);
        }
    }
    Ok(out)
}

/// Explicit template, then a directory entry matching `task_id`, then a
/// bundled template with that id.
fn resolve_template(
    task_id: &str,
    explicit: Option<&Path>,
    dir: Option<&Path>,
) -> Result<Option<TaskTemplate>> {
    if let Some(p) = explicit {
        return TaskTemplate::load(p)
            .map(Some)
            .map_err(|e| usage(format!("{}: {e}", p.display())));
    }
    if let Some(d) = dir {
        let mut all = load_task_templates(d).map_err(|e| usage(format!("{}: {e}", d.display())))?;
        if let Some(t) = all.remove(task_id) {
            return Ok(Some(t));
        }
    }
    Ok(TaskTemplate::builtin(task_id).ok())
}

struct LoadedTasks {
    tasksets: Vec<Taskset>,
    templates: Vec<Option<TaskTemplate>>,
    exec: Exec,
}

fn loaded_tasks(args: &TaskArgs, config: &PipelineConfig) -> Result<LoadedTasks> {
    let paths = if args.tasks.is_empty() {
        &config.paths.tasks
    } else {
        &args.tasks
    };
    if paths.is_empty() {
        bail!(usage("missing --tasks"));
    }
    let tasksets = load_tasks(paths)?;
    if tasksets.is_empty() {
        bail!(usage("no task files found"));
    }
    let dir = args
        .templates_dir
        .as_deref()
        .or(config.paths.templates.as_deref());
    let templates = tasksets
        .iter()
        .map(|ts| resolve_template(&ts.task_id, args.template.as_deref(), dir))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedTasks {
        tasksets,
        templates,
        exec: if args.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        },
    })
}

fn reports_dir(explicit: Option<PathBuf>, config: &PipelineConfig) -> Option<PathBuf> {
    explicit.or_else(|| config.paths.reports.clone())
}

/// Refuses relaxed evaluation when any evaluated instance id also appears in
/// the train split of the same task.
fn check_disjoint(train: &[Taskset], eval: &[Taskset]) -> Result<()> {
    for ts in eval {
        let Some(tr) = train.iter().find(|t| t.task_id == ts.task_id) else {
            continue;
        };
        let ids: HashSet<&str> = tr.instances.iter().map(|i| i.id.as_str()).collect();
        if let Some(clash) = ts.instances.iter().find(|i| ids.contains(i.id.as_str())) {
            bail!(usage(format!(
                "instance `{}` of task `{}` is also in the train split",
                clash.id, ts.task_id
            )));
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs, config: &PipelineConfig) -> Result<()> {
    let timeout = Duration::from_secs(config.teacher.timeout_s);
    let scorer: Box<dyn Scorer> = match args.backend {
        ScorerArg::Builtin => {
            let spec = args
                .model
                .clone()
                .or_else(|| config.paths.model.as_ref().map(|p| p.display().to_string()));
            open_scorer(&require(spec, "--model")?, timeout)?
        }
        ScorerArg::Remote => {
            let endpoint = require(args.endpoint.clone(), "--endpoint for the remote backend")?;
            Box::new(RemoteScorer::new(&endpoint, DEFAULT_LOGPROBS_PATH, timeout))
        }
    };
    let mode = EvalMode::from(args.mode);
    let tasks = loaded_tasks(&args.tasks, config)?;
    match (mode, &args.train_split) {
        (EvalMode::Relaxed, None) => bail!(usage("relaxed mode needs --train-split")),
        (EvalMode::Relaxed, Some(split)) => {
            check_disjoint(&load_tasks(std::slice::from_ref(split))?, &tasks.tasksets)?
        }
        (EvalMode::Blind, Some(_)) => log::warn!("--train-split is ignored in blind mode"),
        (EvalMode::Blind, None) => {}
    }

    let out_dir = reports_dir(args.out_dir.clone(), config);
    let mut reports = Vec::new();
    for (ts, template) in tasks.tasksets.iter().zip(&tasks.templates) {
        let report = evaluate(ts, scorer.as_ref(), template.as_ref(), mode, tasks.exec)?;
        if let Some(dir) = &out_dir {
            write_json(&dir.join(format!("{}.json", ts.task_id)), &report)?;
        }
        reports.push(report);
    }
    let summary = markdown_summary(&reports);
    if let Some(dir) = &out_dir {
        write_file(&dir.join("summary.md"), &summary)?;
    }
    print!("{summary}");
    Ok(())
}

fn parse_student(spec: &str) -> Result<(String, String)> {
    match spec.split_once('=') {
        Some((name, target)) if !name.trim().is_empty() && !target.trim().is_empty() => {
            Ok((name.trim().to_string(), target.trim().to_string()))
        }
        _ => Err(usage(format!("--student `{spec}` is not NAME=FILE|URL"))),
    }
}

fn cmd_analyze(args: AnalyzeArgs, config: &PipelineConfig) -> Result<()> {
    let out_dir = reports_dir(args.out_dir.clone(), config);
    let tasks = loaded_tasks(&args.tasks, config)?;
    if args.consistency {
        let timeout = Duration::from_secs(config.teacher.timeout_s);
        let teacher = open_scorer(&require(args.teacher.clone(), "--teacher")?, timeout)?;
        if args.students.is_empty() {
            bail!(usage("missing --student"));
        }
        let mut names = Vec::new();
        let mut scorers = Vec::new();
        for spec in &args.students {
            let (name, target) = parse_student(spec)?;
            if names.contains(&name) {
                bail!(usage(format!("student `{name}` given twice")));
            }
            names.push(name);
            scorers.push(open_scorer(&target, timeout)?);
        }
        let students: Vec<(String, &dyn Scorer)> = names
            .into_iter()
            .zip(scorers.iter().map(|s| s.as_ref()))
            .collect();
        let averaging = if args.arithmetic {
            Averaging::Arithmetic
        } else {
            Averaging::Geometric
        };
        let report = consistency_report(
            teacher.as_ref(),
            &students,
            &tasks.tasksets,
            args.sample_n,
            config.seed,
            averaging,
            tasks.exec,
        )?;
        let md = report.markdown();
        if let Some(dir) = &out_dir {
            write_json(&dir.join("consistency.json"), &report)?;
            write_file(&dir.join("consistency.md"), &md)?;
        }
        print!("{md}");
        println!("seed {}; {}", report.seed, report.direction);
    } else if let Some(sizes) = &args.scaling {
        let dataset = require(
            args.dataset
                .clone()
                .or_else(|| config.paths.dataset.clone()),
            "--dataset",
        )?;
        let docs = read_docs(&dataset)?;
        let lm = lm_config(&args.lm, config)?;
        let scaling_tasks: Vec<ScalingTask<'_>> = tasks
            .tasksets
            .iter()
            .zip(&tasks.templates)
            .map(|(taskset, template)| ScalingTask {
                taskset,
                template: template.as_ref(),
            })
            .collect();
        let run = scaling_curve(&docs, sizes, &lm, &scaling_tasks, config.seed, tasks.exec)
            .map_err(|e| match e {
                brd_core::analysis::AnalysisError::Sizes(_) => usage(e.to_string()),
                other => other.into(),
            })?;
        let csv = run.csv();
        if let Some(dir) = &out_dir {
            write_json(&dir.join("scaling.json"), &run)?;
            write_file(&dir.join("scaling.csv"), &csv)?;
        }
        print!("{csv}");
        println!("seed {}", run.seed);
    }
    Ok(())
}

fn cmd_split(args: SplitArgs, config: &PipelineConfig) -> Result<()> {
    let ts = load_taskset(&args.tasks).context("reading tasks")?;
    let f = &args.fractions;
    let split = split_taskset(&ts.instances, (f[0], f[1], f[2]), config.seed)
        .map_err(|e| usage(e.to_string()))?;
    let file = format!("{}.jsonl", ts.task_id);
    for (part, instances) in [
        ("train", &split.train),
        ("tune", &split.tune),
        ("test", &split.test),
    ] {
        let path = args.out_dir.join(part).join(&file);
        ensure_parent(&path)?;
        jsonl::write(&path, instances.iter())
            .with_context(|| format!("writing {}", path.display()))?;
        println!("{part}: {}", instances.len());
    }
    Ok(())
}
