//! Experiment configuration: one TOML file with dotted-key overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Component, ConditionScheme, LatentSpec, MixtureSpec};
use crate::error::{ConfigError, Result};
use crate::evolution::{Experiment, GanData, GeneLayout, TrainConfig, TrainingBudget};
use crate::formulation::{by_name, PRESET_NAMES};
use crate::metrics::{
    CompositeSpec, MetricsConfig, FEATURE_DISTANCE, HQ_FRACTION, JS, JS_NORM, MODES_COVERED, SSIM,
};
use crate::search::{Algorithm, CmaEsParams, GaParams, SearchConfig};

/// Environment variable that replaces `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "TAYLORGAN_OUTPUT_DIR";

/// Metric names accepted under `fitness.scale`.
pub const METRIC_NAMES: [&str; 6] = [JS, JS_NORM, MODES_COVERED, HQ_FRACTION, SSIM, FEATURE_DISTANCE];

/// Target mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MixtureConfig {
    Ring { modes: usize, radius: f64, sigma: f64 },
    Grid { side: usize, spacing: f64, sigma: f64 },
    Custom { components: Vec<Component> },
}

impl Default for MixtureConfig {
    fn default() -> Self {
        MixtureConfig::Ring { modes: 8, radius: 2.0, sigma: 0.02 }
    }
}

impl MixtureConfig {
    pub fn build(&self) -> Result<MixtureSpec> {
        Ok(match self {
            MixtureConfig::Ring { modes, radius, sigma } => MixtureSpec::ring(*modes, *radius, *sigma)?,
            MixtureConfig::Grid { side, spacing, sigma } => MixtureSpec::grid(*side, *spacing, *sigma)?,
            MixtureConfig::Custom { components } => MixtureSpec::new(components.clone())?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub mixture: MixtureConfig,
    pub latent: LatentSpec,
    pub condition: ConditionScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub algorithm: Algorithm,
    /// Generations after the initial one.
    pub generations: usize,
    pub cmaes: CmaEsParams,
    pub ga: GaParams,
}

impl Default for SearchSection {
    fn default() -> Self {
        let s = SearchConfig::default();
        Self { algorithm: s.algorithm, generations: 30, cmaes: s.cmaes, ga: s.ga }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitnessConfig {
    pub scale: CompositeSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JournalConfig {
    /// File name inside the output directory.
    pub file: String,
    /// Record per-attempt wall time (the journal is then no longer
    /// byte-reproducible).
    pub wall_time: bool,
}

impl Default for JournalConfig {
    fn default() -> Self {
        Self { file: "journal.ndjson".into(), wall_time: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seeds: usize,
    pub baseline: String,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { seeds: 10, baseline: "non-saturating".into() }
    }
}

/// The whole experiment as read from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker threads; 0 means the available parallelism.
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Formulation used by single-run commands.
    pub preset: String,
    pub max_stagnant: usize,
    pub data: DataConfig,
    pub search: SearchSection,
    pub genes: GeneLayout,
    pub budget: TrainingBudget,
    pub train: TrainConfig,
    pub fitness: FitnessConfig,
    pub metrics: MetricsConfig,
    pub journal: JournalConfig,
    pub verify: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            output_dir: PathBuf::from("out"),
            preset: "non-saturating".into(),
            max_stagnant: 3,
            data: DataConfig::default(),
            search: SearchSection::default(),
            genes: GeneLayout::default(),
            budget: TrainingBudget::default(),
            train: TrainConfig::default(),
            fitness: FitnessConfig::default(),
            metrics: MetricsConfig::default(),
            journal: JournalConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parse TOML text, apply `key=value` overrides and validate. The
    /// top-level `seed` key is mandatory.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        if !table.contains_key("seed") {
            return Err(ConfigError::Invalid("`seed` must be set explicitly".into()).into());
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::parse(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ConfigError::Parse(e.to_string()).into())
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| -> Result<()> { Err(ConfigError::Invalid(m).into()) };
        for name in [&self.preset, &self.verify.baseline] {
            if !PRESET_NAMES.contains(&name.as_str()) {
                return invalid(format!("unknown preset `{name}`"));
            }
            if name == "taylor" {
                return invalid("preset `taylor` needs a genome; use a genome file instead".into());
            }
        }
        by_name(&self.verify.baseline, None)?;
        for metric in self.fitness.scale.scales().keys() {
            if !METRIC_NAMES.contains(&metric.as_str()) {
                return invalid(format!("unknown metric `{metric}` in fitness.scale"));
            }
        }
        self.budget.validate().map_err(ConfigError::Invalid)?;
        self.search.ga.validate()?;
        if let Some(l) = self.search.cmaes.lambda {
            if l < 2 {
                return invalid("search.cmaes.lambda must be at least 2".into());
            }
        }
        if !(self.search.cmaes.sigma0 > 0.0 && self.search.cmaes.sigma0.is_finite()) {
            return invalid("search.cmaes.sigma0 must be positive".into());
        }
        if self.train.hidden_width == 0 {
            return invalid("train.hidden_width must be positive".into());
        }
        if !(self.train.g_lr > 0.0 && self.train.d_lr_ratio > 0.0) {
            return invalid("learning rates must be positive".into());
        }
        if self.data.latent.dimension == 0 {
            return invalid("data.latent.dimension must be positive".into());
        }
        if self.verify.seeds == 0 {
            return invalid("verify.seeds must be positive".into());
        }
        if self.max_stagnant == 0 {
            return invalid("max_stagnant must be positive".into());
        }
        if self.journal.file.is_empty() || Path::new(&self.journal.file).components().count() != 1 {
            return invalid("journal.file must be a plain file name".into());
        }
        self.data.mixture.build()?;
        Ok(())
    }

    /// Worker count with 0 resolved to the available parallelism.
    pub fn resolved_workers(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        }
    }

    pub fn journal_path(&self) -> PathBuf {
        self.output_dir.join(&self.journal.file)
    }

    pub fn build(&self) -> Result<Experiment> {
        Ok(Experiment {
            data: GanData {
                mixture: self.data.mixture.build()?,
                latent: self.data.latent,
                condition: self.data.condition,
            },
            train: self.train.clone(),
            budget: self.budget.clone(),
            metrics: self.metrics.clone(),
            composite: self.fitness.scale.clone(),
            layout: self.genes,
            search: SearchConfig {
                algorithm: self.search.algorithm,
                cmaes: self.search.cmaes.clone(),
                ga: self.search.ga.clone(),
            },
            generations: self.search.generations,
            seed: self.seed,
            workers: self.resolved_workers(),
            wall_time: self.journal.wall_time,
            max_stagnant: self.max_stagnant,
        })
    }
}

/// Set `a.b.c=value`, creating tables on the way. The value is read as a
/// TOML value and falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Invalid(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Invalid(format!("bad override key `{key}`")).into());
    }
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for part in path {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("`{part}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Flatten a config into `dotted.key → value` strings (for reports).
pub fn flatten(cfg: &ExperimentConfig) -> Result<BTreeMap<String, String>> {
    fn walk(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, String>) {
        match v {
            toml::Value::Table(t) => {
                for (k, v) in t {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            other => {
                out.insert(prefix.to_string(), other.to_string());
            }
        }
    }
    let value = toml::Value::try_from(cfg).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut out = BTreeMap::new();
    walk("", &value, &mut out);
    Ok(out)
}
