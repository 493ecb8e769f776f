//! (μ/μ_W, λ)-CMA-ES with cumulative step-size adaptation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_tell, rank_key, BestEver, Optimizer, SearchSpace, TellOutcome};
use crate::error::SearchError;

/// Resampling attempts before an out-of-box candidate is clamped.
pub const MAX_RESAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaEsParams {
    /// Initial step size.
    pub sigma0: f64,
    /// Population size; `None` selects `4 + floor(3 ln d)`.
    pub lambda: Option<usize>,
}

impl Default for CmaEsParams {
    fn default() -> Self {
        Self { sigma0: 2.0, lambda: None }
    }
}

impl CmaEsParams {
    pub fn lambda_for(&self, d: usize) -> usize {
        self.lambda.unwrap_or_else(|| default_lambda(d))
    }
}

pub fn default_lambda(d: usize) -> usize {
    4 + (3.0 * (d as f64).ln()).floor() as usize
}

#[derive(Debug, Clone)]
pub struct CmaEs {
    space: SearchSpace,
    rng: ChaCha8Rng,
    lambda: usize,
    weights: Vec<f64>,
    mueff: f64,
    cc: f64,
    cs: f64,
    c1: f64,
    cmu: f64,
    damps: f64,
    chi_n: f64,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    basis: DMatrix<f64>,
    scales: DVector<f64>,
    ps: DVector<f64>,
    pc: DVector<f64>,
    generation: usize,
    pending: Option<Vec<Vec<f64>>>,
    best: BestEver,
    stagnant: bool,
}

impl CmaEs {
    pub fn new(space: SearchSpace, params: CmaEsParams, seed: u64) -> Result<Self, SearchError> {
        let n = space.dimension();
        let lambda = params.lambda_for(n);
        if lambda < 2 {
            return Err(SearchError::InvalidSpace("population size must be at least 2".into()));
        }
        if !(params.sigma0.is_finite() && params.sigma0 > 0.0) {
            return Err(SearchError::InvalidSpace("sigma0 must be positive".into()));
        }
        let mu = lambda / 2;
        let raw: Vec<f64> =
            (1..=mu).map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let nf = n as f64;
        let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
        let cs = (mueff + 2.0) / (nf + mueff + 5.0);
        let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
        let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
        let damps = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        let mean = DVector::from_column_slice(space.initial());
        Ok(Self {
            space,
            rng: ChaCha8Rng::seed_from_u64(seed),
            lambda,
            weights,
            mueff,
            cc,
            cs,
            c1,
            cmu,
            damps,
            chi_n,
            mean,
            sigma: params.sigma0,
            cov: DMatrix::identity(n, n),
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            ps: DVector::zeros(n),
            pc: DVector::zeros(n),
            generation: 0,
            pending: None,
            best: BestEver::default(),
            stagnant: false,
        })
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn mu(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mueff(&self) -> f64 {
        self.mueff
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    fn sample_one(&mut self) -> Vec<f64> {
        let n = self.space.dimension();
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut self.rng));
        let y = &self.basis * z.component_mul(&self.scales);
        (&self.mean + y * self.sigma).as_slice().to_vec()
    }

    /// Symmetrize `cov`, factor it and repair non-positive eigenvalues.
    fn decompose(&mut self) -> Result<(), SearchError> {
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        if sym.iter().any(|v| !v.is_finite()) {
            return Err(SearchError::Fault("covariance became non-finite".into()));
        }
        let eig = SymmetricEigen::new(sym);
        let max = eig.eigenvalues.max();
        if !(max.is_finite() && max > 0.0) {
            return Err(SearchError::Fault("covariance lost positive definiteness".into()));
        }
        let floor = max * 1e-14;
        let values = eig.eigenvalues.map(|v| v.max(floor));
        self.cov = &eig.eigenvectors * DMatrix::from_diagonal(&values) * eig.eigenvectors.transpose();
        self.scales = values.map(f64::sqrt);
        self.basis = eig.eigenvectors;
        Ok(())
    }
}

impl Optimizer for CmaEs {
    fn name(&self) -> &'static str {
        "cmaes"
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn ask(&mut self) -> Result<Vec<Vec<f64>>, SearchError> {
        let mut out = Vec::with_capacity(self.lambda);
        for _ in 0..self.lambda {
            let mut x = self.sample_one();
            let mut tries = 0;
            while !self.space.contains(&x) && tries < MAX_RESAMPLES {
                x = self.sample_one();
                tries += 1;
            }
            self.space.clamp(&mut x);
            out.push(x);
        }
        self.pending = Some(out.clone());
        Ok(out)
    }

    fn tell(&mut self, candidates: &[Vec<f64>], fitness: &[f64]) -> Result<TellOutcome, SearchError> {
        check_tell(self.pending.as_ref(), candidates, fitness, self.space.dimension())?;
        self.pending = None;
        for (x, &f) in candidates.iter().zip(fitness) {
            self.best.offer(x, f);
        }
        self.generation += 1;

        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| rank_key(fitness[b]).total_cmp(&rank_key(fitness[a])));
        let selected: Vec<usize> =
            order.into_iter().take(self.mu()).filter(|&i| fitness[i].is_finite()).collect();
        if selected.is_empty() {
            self.stagnant = true;
            return Ok(TellOutcome::Stagnant);
        }
        self.stagnant = false;
        let wsum: f64 = self.weights[..selected.len()].iter().sum();
        let w: Vec<f64> = self.weights[..selected.len()].iter().map(|v| v / wsum).collect();

        let n = self.space.dimension();
        let old = self.mean.clone();
        let steps: Vec<DVector<f64>> = selected
            .iter()
            .map(|&i| (DVector::from_column_slice(&candidates[i]) - &old) / self.sigma)
            .collect();
        let mut yw = DVector::zeros(n);
        for (wi, y) in w.iter().zip(&steps) {
            yw += y * *wi;
        }
        self.mean = &old + &yw * self.sigma;

        // C^{-1/2} y_w = B D^{-1} Bᵀ y_w
        let inv_sqrt = &self.basis * (self.basis.transpose() * &yw).component_div(&self.scales);
        self.ps = &self.ps * (1.0 - self.cs) + inv_sqrt * (self.cs * (2.0 - self.cs) * self.mueff).sqrt();
        let ps_norm = self.ps.norm();
        let decay = 1.0 - (1.0 - self.cs).powi(2 * self.generation as i32);
        let hsig = ps_norm / decay.sqrt() / self.chi_n < 1.4 + 2.0 / (n as f64 + 1.0);
        let h = if hsig { 1.0 } else { 0.0 };
        self.pc = &self.pc * (1.0 - self.cc) + &yw * (h * (self.cc * (2.0 - self.cc) * self.mueff).sqrt());

        let mut rank_mu = DMatrix::zeros(n, n);
        for (wi, y) in w.iter().zip(&steps) {
            rank_mu += y * y.transpose() * *wi;
        }
        let keep = 1.0 - self.c1 - self.cmu + (1.0 - h) * self.c1 * self.cc * (2.0 - self.cc);
        self.cov = &self.cov * keep + &self.pc * self.pc.transpose() * self.c1 + rank_mu * self.cmu;

        self.sigma *= ((self.cs / self.damps) * (ps_norm / self.chi_n - 1.0)).exp();
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(SearchError::Fault(format!("step size became {}", self.sigma)));
        }
        self.decompose()?;
        Ok(TellOutcome::Updated)
    }

    fn best(&self) -> Result<(Vec<f64>, f64), SearchError> {
        self.best.get()
    }

    fn generation(&self) -> usize {
        self.generation
    }

    fn is_stagnant(&self) -> bool {
        self.stagnant
    }
}
