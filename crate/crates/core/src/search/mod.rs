//! Black-box maximizers over a bounded box behind one ask/tell interface.

mod bench;
mod cmaes;
mod ga;

use serde::{Deserialize, Serialize};

use crate::error::SearchError;

pub use bench::{run_benchmark, Benchmark, BenchmarkTrace};
pub use cmaes::{CmaEs, CmaEsParams};
pub use ga::{Ga, GaParams};

/// Axis-aligned box with a starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
    initial: Vec<f64>,
}

impl SearchSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, initial: Vec<f64>) -> Result<Self, SearchError> {
        let d = lower.len();
        if d == 0 {
            return Err(SearchError::InvalidSpace("dimension must be positive".into()));
        }
        if upper.len() != d || initial.len() != d {
            return Err(SearchError::InvalidSpace(format!(
                "bounds and initial point disagree on dimension ({d}, {}, {})",
                upper.len(),
                initial.len()
            )));
        }
        for i in 0..d {
            if !(lower[i].is_finite() && upper[i].is_finite() && lower[i] < upper[i]) {
                return Err(SearchError::InvalidSpace(format!("bad bounds in dimension {i}")));
            }
            if !(initial[i] >= lower[i] && initial[i] <= upper[i]) {
                return Err(SearchError::InvalidSpace(format!(
                    "initial point outside bounds in dimension {i}"
                )));
            }
        }
        Ok(Self { lower, upper, initial })
    }

    /// `[lo, hi]^d` starting at the origin (or at `lo` if 0 is outside).
    pub fn cube(dimension: usize, lo: f64, hi: f64) -> Result<Self, SearchError> {
        let start = 0.0f64.clamp(lo.min(hi), hi.max(lo));
        Self::new(vec![lo; dimension], vec![hi; dimension], vec![start; dimension])
    }

    pub fn with_initial(self, initial: Vec<f64>) -> Result<Self, SearchError> {
        Self::new(self.lower, self.upper, initial)
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dimension()
            && x.iter().enumerate().all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

/// Outcome of a `tell`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TellOutcome {
    Updated,
    /// Every candidate failed; the search distribution was left untouched.
    Stagnant,
}

/// Maximizer driven by ask/tell. Non-finite fitness marks a failed
/// evaluation and ranks below every finite value.
pub trait Optimizer: Send {
    fn name(&self) -> &'static str;

    fn space(&self) -> &SearchSpace;

    /// Candidates for the current generation.
    fn ask(&mut self) -> Result<Vec<Vec<f64>>, SearchError>;

    /// Report fitness for the candidates of the last `ask`, in order.
    fn tell(&mut self, candidates: &[Vec<f64>], fitness: &[f64]) -> Result<TellOutcome, SearchError>;

    /// Best-ever evaluated candidate.
    fn best(&self) -> Result<(Vec<f64>, f64), SearchError>;

    /// Completed tells.
    fn generation(&self) -> usize;

    fn is_stagnant(&self) -> bool;
}

/// Best-ever bookkeeping shared by the optimizers.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct BestEver {
    best: Option<(Vec<f64>, f64)>,
}

impl BestEver {
    pub fn offer(&mut self, x: &[f64], f: f64) {
        if !f.is_finite() {
            return;
        }
        if self.best.as_ref().is_none_or(|(_, b)| f > *b) {
            self.best = Some((x.to_vec(), f));
        }
    }

    pub fn get(&self) -> Result<(Vec<f64>, f64), SearchError> {
        self.best.clone().ok_or(SearchError::NoEvaluations)
    }
}

/// Ranking key where failures sort last.
pub(crate) fn rank_key(f: f64) -> f64 {
    if f.is_finite() {
        f
    } else {
        f64::NEG_INFINITY
    }
}

pub(crate) fn check_tell(
    pending: Option<&Vec<Vec<f64>>>,
    candidates: &[Vec<f64>],
    fitness: &[f64],
    dimension: usize,
) -> Result<(), SearchError> {
    let pending = pending.ok_or(SearchError::NoPendingAsk)?;
    if candidates.len() != pending.len() {
        return Err(SearchError::LengthMismatch { expected: pending.len(), got: candidates.len() });
    }
    if fitness.len() != candidates.len() {
        return Err(SearchError::LengthMismatch { expected: candidates.len(), got: fitness.len() });
    }
    if let Some(c) = candidates.iter().find(|c| c.len() != dimension) {
        return Err(SearchError::LengthMismatch { expected: dimension, got: c.len() });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Cmaes,
    Ga,
}

impl std::str::FromStr for Algorithm {
    type Err = SearchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cmaes" => Ok(Self::Cmaes),
            "ga" => Ok(Self::Ga),
            other => Err(SearchError::InvalidSpace(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Optimizer choice and constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub algorithm: Algorithm,
    pub cmaes: CmaEsParams,
    pub ga: GaParams,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { algorithm: Algorithm::Cmaes, cmaes: CmaEsParams::default(), ga: GaParams::default() }
    }
}

impl SearchConfig {
    pub fn build(&self, space: SearchSpace, seed: u64) -> Result<Box<dyn Optimizer>, SearchError> {
        Ok(match self.algorithm {
            Algorithm::Cmaes => Box::new(CmaEs::new(space, self.cmaes.clone(), seed)?),
            Algorithm::Ga => Box::new(Ga::new(space, self.ga.clone(), seed)?),
        })
    }

    /// Candidates per generation for a space of dimension `d`.
    pub fn population(&self, d: usize) -> usize {
        match self.algorithm {
            Algorithm::Cmaes => self.cmaes.lambda_for(d),
            Algorithm::Ga => self.ga.population,
        }
    }
}
