//! Pipeline configuration file: JSON with `${VAR}` environment interpolation.

use anyhow::{bail, Context, Result};
use brd_core::compose::{FilterSpec, MixSpec};
use brd_core::corpus::CorpusFormat;
use brd_core::lm::LmConfig;
use brd_core::seed::DEFAULT_SEED;
use brd_core::teacher::{BehaviorKind, TeacherConfig};
use serde::Deserialize;
use serde_json::Value;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub corpus_format: Option<CorpusFormat>,
    pub abbreviations: Option<PathBuf>,
    pub behaviors: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub tasks: Vec<PathBuf>,
    pub templates: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub kinds: Vec<BehaviorKind>,
    pub paths: Paths,
    pub teacher: TeacherConfig,
    /// `mix.seed` is always replaced by the top-level seed.
    pub mix: MixSpec,
    pub filters: FilterSpec,
    pub lm: LmConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: DEFAULT_SEED,
            kinds: BehaviorKind::ALL.to_vec(),
            paths: Paths::default(),
            teacher: TeacherConfig::default(),
            mix: MixSpec::default(),
            filters: FilterSpec::default(),
            lm: LmConfig::default(),
        }
    }
}

/// Replaces every `${NAME}` in `text` with the value of environment variable
/// `NAME`. Unset variables are errors.
pub fn interpolate(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find('}')
            .with_context(|| format!("unterminated `${{` in `{text}`"))?;
        let name = &after[..end];
        if name.is_empty() {
            bail!("empty variable name in `{text}`");
        }
        let value =
            lookup(name).with_context(|| format!("environment variable `{name}` is not set"))?;
        out.push_str(&value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn interpolate_value(value: &mut Value, lookup: &dyn Fn(&str) -> Option<String>) -> Result<()> {
    match value {
        Value::String(s) => *s = interpolate(s, lookup)?,
        Value::Array(items) => {
            for v in items {
                interpolate_value(v, lookup)?;
            }
        }
        Value::Object(map) => {
            for v in map.values_mut() {
                interpolate_value(v, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn rebase(base: &Path, path: &mut Option<PathBuf>) {
    if let Some(p) = path {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

impl PipelineConfig {
    /// Parses a config document. String values are interpolated from the
    /// environment; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path, lookup: &dyn Fn(&str) -> Option<String>) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).context("config is not valid JSON")?;
        interpolate_value(&mut value, lookup)?;
        let mut config: PipelineConfig = serde_json::from_value(value).context("invalid config")?;
        let p = &mut config.paths;
        for path in [
            &mut p.corpus,
            &mut p.abbreviations,
            &mut p.behaviors,
            &mut p.dataset,
            &mut p.manifest,
            &mut p.model,
            &mut p.templates,
            &mut p.reports,
        ] {
            rebase(base, path);
        }
        for t in &mut p.tasks {
            if t.is_relative() {
                *t = base.join(&*t);
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let config = PipelineConfig::parse(&text, base, &|name| std::env::var(name).ok())
            .with_context(|| format!("config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    /// Task files and the template directory must exist.
    pub fn validate(&self) -> Result<()> {
        for p in self.paths.tasks.iter().chain(&self.paths.templates) {
            if !p.exists() {
                bail!("config references missing path {}", p.display());
            }
        }
        Ok(())
    }
}
