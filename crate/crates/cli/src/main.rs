mod commands;
mod config;
mod demo;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use brd_core::corpus::CorpusFormat;
use brd_core::eval::EvalMode;
use brd_core::teacher::{BackendKind, BehaviorKind};

/// Reading-behavior distillation pipeline.
#[derive(Debug, Parser)]
#[command(name = "brd", version, about, propagate_version = true)]
pub struct Cli {
    /// Pipeline config file (JSON; `${VAR}` is replaced from the environment).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Run seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ask the teacher for NER and QRA behaviors of every corpus sentence.
    Synthesize(SynthesizeArgs),
    /// Build a training dataset from passages and behaviors (or from tasks).
    Compose(ComposeArgs),
    /// Train the n-gram student.
    Train(TrainArgs),
    /// Score multiple-choice tasks with a student.
    Eval(EvalArgs),
    /// Teacher/student consistency or data-size scaling.
    Analyze(AnalyzeArgs),
    /// Split a task file into train/tune/test parts.
    Split(SplitArgs),
    /// Run the whole pipeline on the bundled fixtures.
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Corpus file (JSONL with `id`/`text`, or plaintext with blank-line separated documents).
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Corpus format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Abbreviation list for the sentence splitter.
    #[arg(long, value_name = "FILE")]
    pub abbreviations: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum FormatArg {
    Jsonl,
    Plaintext,
}

impl From<FormatArg> for CorpusFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Jsonl => CorpusFormat::Jsonl,
            FormatArg::Plaintext => CorpusFormat::Plaintext,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TeacherArgs {
    /// Teacher backend.
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// Base URL of an OpenAI-compatible chat-completions server.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Request path appended to the endpoint.
    #[arg(long)]
    pub path: Option<String>,
    /// Model name sent to the remote teacher.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Token limit per response; longer responses are rejected.
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// Concurrent requests.
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Retries after the first attempt for retryable failures.
    #[arg(long)]
    pub retry_limit: Option<u32>,
    /// Backoff base in milliseconds (doubles per retry, capped at 30 s).
    #[arg(long)]
    pub backoff_ms: Option<u64>,
    /// Per-request timeout in seconds.
    #[arg(long)]
    pub timeout: Option<u64>,
    /// NER teaching template (JSON) replacing the built-in one.
    #[arg(long, value_name = "FILE")]
    pub ner_template: Option<PathBuf>,
    /// QRA teaching template (JSON) replacing the built-in one.
    #[arg(long, value_name = "FILE")]
    pub qra_template: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum BackendArg {
    Mock,
    Remote,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::Remote => BackendKind::Remote,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub teacher: TeacherArgs,
    /// Behavior JSONL sink; existing records are reused.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Behavior kinds to request.
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    pub kinds: Option<Vec<BehaviorKind>>,
}

fn parse_kind(s: &str) -> Result<BehaviorKind, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Behavior JSONL produced by `synthesize`.
    #[arg(long, value_name = "FILE")]
    pub behaviors: Option<PathBuf>,
    /// Dataset JSONL to write.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Manifest path (default: `manifest.json` next to the dataset).
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Mixing ratio such as `ORI=2` or `NER=1/2`; repeat per kind. Replaces the configured ratios.
    #[arg(long = "ratio", value_name = "KIND=R")]
    pub ratios: Vec<String>,
    /// One document per sentence instead of per passage.
    #[arg(long)]
    pub sentence_level: bool,
    /// Remove all NER behaviors.
    #[arg(long)]
    pub drop_ner: bool,
    /// Remove all QRA behaviors.
    #[arg(long)]
    pub drop_qra: bool,
    /// Remove QRA behaviors about attitude or answering with a sentiment word.
    #[arg(long)]
    pub drop_sentiment: bool,
    /// Sentiment words for `--drop-sentiment`.
    #[arg(long, value_delimiter = ',')]
    pub sentiment_words: Option<Vec<String>>,
    /// Delimiter token placed between sentences and responses.
    #[arg(long)]
    pub delimiter: Option<String>,
    /// Compose task documents from this task file instead of passages.
    #[arg(long, value_name = "FILE", requires = "task_docs")]
    pub tasks: Option<PathBuf>,
    /// Task document flavor.
    #[arg(long, value_enum, requires = "tasks")]
    pub task_docs: Option<TaskDocsArg>,
    /// Task template for instances given as `fields`.
    #[arg(long, value_name = "FILE")]
    pub template: Option<PathBuf>,
    #[command(flatten)]
    pub teacher: TeacherArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TaskDocsArg {
    /// Teacher-answered prompts.
    Pseudo,
    /// Gold-answered prompts.
    Gold,
    /// Behavior passages over the task inputs.
    Brd2,
}

#[derive(Debug, Clone, Args)]
pub struct LmArgs {
    /// n-gram order.
    #[arg(long)]
    pub order: Option<usize>,
    /// Add-k smoothing constant.
    #[arg(long)]
    pub k: Option<f64>,
    /// Interpolation weights, unigram first.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset JSONL (`kind`/`source_id`/`text`); repeatable.
    #[arg(long = "dataset", value_name = "FILE")]
    pub datasets: Vec<PathBuf>,
    /// Raw corpus whose document texts are added to the training set; repeatable.
    #[arg(long = "corpus", value_name = "FILE")]
    pub corpora: Vec<PathBuf>,
    /// Model file to write.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub lm: LmArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TaskArgs {
    /// Task JSONL files or directories of them; repeatable.
    #[arg(long = "tasks", value_name = "PATH")]
    pub tasks: Vec<PathBuf>,
    /// Task template applied to every task with `fields` instances.
    #[arg(long, value_name = "FILE", conflicts_with = "templates_dir")]
    pub template: Option<PathBuf>,
    /// Directory of task templates matched by task id.
    #[arg(long, value_name = "DIR")]
    pub templates_dir: Option<PathBuf>,
    /// Score instances on one thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Student model file, or a scorer URL (`http://...`).
    #[arg(long, value_name = "FILE|URL")]
    pub model: Option<String>,
    /// Scorer backend.
    #[arg(long, value_enum, default_value = "builtin")]
    pub backend: ScorerArg,
    /// Remote scorer base URL (with `--backend remote`).
    #[arg(long)]
    pub endpoint: Option<String>,
    #[command(flatten)]
    pub tasks: TaskArgs,
    #[arg(long, value_enum, default_value = "blind")]
    pub mode: ModeArg,
    /// Train split (file or directory) whose inputs fed the student; required in relaxed mode.
    #[arg(long, value_name = "PATH")]
    pub train_split: Option<PathBuf>,
    /// Report directory.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ScorerArg {
    Builtin,
    Remote,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ModeArg {
    Blind,
    Relaxed,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Blind => EvalMode::Blind,
            ModeArg::Relaxed => EvalMode::Relaxed,
        }
    }
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("analysis").required(true).args(["consistency", "scaling"])))]
pub struct AnalyzeArgs {
    /// Cross entropy of each student against the teacher.
    #[arg(long)]
    pub consistency: bool,
    /// Accuracy after training on growing dataset prefixes.
    #[arg(long, value_name = "SIZES", value_delimiter = ',')]
    pub scaling: Option<Vec<usize>>,
    /// Teacher model file or scorer URL.
    #[arg(long, value_name = "FILE|URL")]
    pub teacher: Option<String>,
    /// Student as `NAME=FILE|URL`; repeatable.
    #[arg(long = "student", value_name = "NAME=FILE|URL")]
    pub students: Vec<String>,
    /// Instances sampled per task.
    #[arg(long, default_value_t = 1000)]
    pub sample_n: usize,
    /// Average token probabilities arithmetically instead of geometrically.
    #[arg(long)]
    pub arithmetic: bool,
    /// Dataset for `--scaling`.
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    #[command(flatten)]
    pub lm: LmArgs,
    #[command(flatten)]
    pub tasks: TaskArgs,
    /// Report directory.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Task file to split.
    #[arg(long, value_name = "FILE")]
    pub tasks: PathBuf,
    /// Output directory; parts go to `train/`, `tune/` and `test/` under it.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Train, tune and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.8, 0.1, 0.1])]
    pub fractions: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Keep all artifacts in this directory instead of a temporary one.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
