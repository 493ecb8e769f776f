//! Candidate scores, their weighted combination and run-set comparison.

mod density;
mod image;
mod stats;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::MixtureSpec;
use crate::error::MetricError;
use crate::nn::Matrix;

pub use density::{density_images, js_discrete, js_divergence, mode_coverage, Coverage, Grid, MIN_JS_SAMPLES};
pub use image::{
    embedding_distance, feature_distance, ssim, Embedding, GrayImage, RandomProjection, SsimParams,
    DEFAULT_FEATURES,
};
pub use stats::{
    ln_gamma, mean, regularized_incomplete_beta, std_dev, student_t_cdf, variance, welch_t, WelchResult,
};

pub const JS: &str = "js";
pub const JS_NORM: &str = "js_norm";
pub const MODES_COVERED: &str = "modes_covered";
pub const HQ_FRACTION: &str = "hq_fraction";
pub const SSIM: &str = "ssim";
pub const FEATURE_DISTANCE: &str = "feature_distance";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

pub fn direction_of(metric: &str) -> Direction {
    match metric {
        JS | JS_NORM | FEATURE_DISTANCE => Direction::LowerBetter,
        _ => Direction::HigherBetter,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    /// `None` marks a failed metric.
    pub score: Option<f64>,
    pub direction: Direction,
}

/// Named metric scores.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricReport {
    entries: BTreeMap<String, MetricValue>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a score; non-finite scores are stored as failed.
    pub fn insert(&mut self, metric: &str, score: f64, direction: Direction) {
        let score = score.is_finite().then_some(score);
        self.entries.insert(metric.to_string(), MetricValue { score, direction });
    }

    pub fn insert_failed(&mut self, metric: &str, direction: Direction) {
        self.entries.insert(metric.to_string(), MetricValue { score: None, direction });
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.entries.get(metric).and_then(|v| v.score)
    }

    pub fn entries(&self) -> &BTreeMap<String, MetricValue> {
        &self.entries
    }

    pub fn has_failures(&self) -> bool {
        self.entries.values().any(|v| v.score.is_none())
    }

    /// Plain `metric → score` map (failed metrics map to `None`).
    pub fn scores(&self) -> BTreeMap<String, Option<f64>> {
        self.entries.iter().map(|(k, v)| (k.clone(), v.score)).collect()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), MetricValue { score: v.score.map(|s| s * alpha), ..*v }))
            .collect();
        Self { entries }
    }
}

/// Signed per-metric scale factors for the weighted sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct CompositeSpec {
    scales: BTreeMap<String, f64>,
}

impl CompositeSpec {
    pub fn new(scales: BTreeMap<String, f64>) -> Result<Self, MetricError> {
        if scales.values().any(|s| !s.is_finite()) {
            return Err(MetricError::Degenerate("non-finite composite scale".into()));
        }
        if scales.values().all(|&s| s == 0.0) {
            return Err(MetricError::Degenerate("composite needs a nonzero scale".into()));
        }
        Ok(Self { scales })
    }

    pub fn from_pairs(pairs: &[(&str, f64)]) -> Result<Self, MetricError> {
        Self::new(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }

    pub fn scales(&self) -> &BTreeMap<String, f64> {
        &self.scales
    }
}

impl Default for CompositeSpec {
    fn default() -> Self {
        Self::from_pairs(&[(JS_NORM, -1.0), (HQ_FRACTION, 1.0)]).expect("default scales are valid")
    }
}

impl TryFrom<BTreeMap<String, f64>> for CompositeSpec {
    type Error = MetricError;

    fn try_from(scales: BTreeMap<String, f64>) -> Result<Self, Self::Error> {
        Self::new(scales)
    }
}

impl From<CompositeSpec> for BTreeMap<String, f64> {
    fn from(spec: CompositeSpec) -> Self {
        spec.scales
    }
}

/// `Σ scale · score`. Fails if any metric in the report failed or a scaled
/// metric is missing.
pub fn composite(report: &MetricReport, spec: &CompositeSpec) -> Result<f64, MetricError> {
    if let Some((name, _)) = report.entries.iter().find(|(_, v)| v.score.is_none()) {
        return Err(MetricError::Failed(name.clone()));
    }
    let mut total = 0.0;
    for (name, &scale) in &spec.scales {
        if scale == 0.0 {
            continue;
        }
        let score = report.get(name).ok_or_else(|| MetricError::Failed(format!("{name} (missing)")))?;
        total += scale * score;
    }
    Ok(total)
}

/// Settings for scoring generator samples against a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub grid: usize,
    pub laplace_eps: f64,
    pub coverage_min: usize,
    pub image_size: usize,
    pub projection_seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { grid: 64, laplace_eps: 1e-9, coverage_min: 10, image_size: 32, projection_seed: 7 }
    }
}

/// Score generator samples against the target mixture. Metrics that cannot
/// be computed are recorded as failed rather than aborting the report.
pub fn score_samples(spec: &MixtureSpec, samples: &Matrix, cfg: &MetricsConfig) -> MetricReport {
    let mut report = MetricReport::new();
    match js_divergence(spec, samples, cfg.grid, cfg.laplace_eps) {
        Ok(js) => {
            report.insert(JS, js, Direction::LowerBetter);
            report.insert(JS_NORM, js / std::f64::consts::LN_2, Direction::LowerBetter);
        }
        Err(_) => {
            report.insert_failed(JS, Direction::LowerBetter);
            report.insert_failed(JS_NORM, Direction::LowerBetter);
        }
    }
    match mode_coverage(spec, samples, cfg.coverage_min) {
        Ok(c) => {
            report.insert(MODES_COVERED, c.covered as f64, Direction::HigherBetter);
            report.insert(HQ_FRACTION, c.hq_fraction, Direction::HigherBetter);
        }
        Err(_) => {
            report.insert_failed(MODES_COVERED, Direction::HigherBetter);
            report.insert_failed(HQ_FRACTION, Direction::HigherBetter);
        }
    }
    match density_images(spec, samples, cfg.image_size) {
        Ok((target, sampled)) => {
            match ssim(&target, &sampled, &SsimParams::default()) {
                Ok(s) => report.insert(SSIM, s, Direction::HigherBetter),
                Err(_) => report.insert_failed(SSIM, Direction::HigherBetter),
            }
            match feature_distance(target.data(), sampled.data(), cfg.projection_seed) {
                Ok(d) => report.insert(FEATURE_DISTANCE, d, Direction::LowerBetter),
                Err(_) => report.insert_failed(FEATURE_DISTANCE, Direction::LowerBetter),
            }
        }
        Err(_) => {
            report.insert_failed(SSIM, Direction::HigherBetter);
            report.insert_failed(FEATURE_DISTANCE, Direction::LowerBetter);
        }
    }
    report
}
