//! Generational real-valued genetic algorithm: tournament selection, blend
//! crossover, Gaussian mutation and elitism.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_tell, rank_key, BestEver, Optimizer, SearchSpace, TellOutcome};
use crate::error::SearchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaParams {
    pub population: usize,
    pub tournament: usize,
    pub crossover_rate: f64,
    /// Blend crossover extension on each side of the parents' interval.
    pub blend_alpha: f64,
    /// Mutation standard deviation as a fraction of each gene's box width.
    pub mutation_scale: f64,
    /// Per-gene mutation probability; `None` selects `1/d`.
    pub mutation_rate: Option<f64>,
    pub elitism: usize,
    /// Spread of the initial population around the initial point, as a
    /// fraction of box width.
    pub init_spread: f64,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population: 20,
            tournament: 3,
            crossover_rate: 0.9,
            blend_alpha: 0.5,
            mutation_scale: 0.05,
            mutation_rate: None,
            elitism: 1,
            init_spread: 0.1,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::InvalidSpace(m.to_string()));
        if self.population < 2 {
            return bad("population must be at least 2");
        }
        if self.tournament == 0 {
            return bad("tournament size must be positive");
        }
        if self.elitism >= self.population {
            return bad("elitism must be smaller than the population");
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return bad("crossover rate must be in [0, 1]");
        }
        if let Some(r) = self.mutation_rate {
            if !(0.0..=1.0).contains(&r) {
                return bad("mutation rate must be in [0, 1]");
            }
        }
        if !(self.blend_alpha >= 0.0 && self.mutation_scale >= 0.0 && self.init_spread >= 0.0) {
            return bad("blend alpha, mutation scale and initial spread must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Ga {
    space: SearchSpace,
    params: GaParams,
    rng: ChaCha8Rng,
    population: Vec<Vec<f64>>,
    fitness: Vec<f64>,
    generation: usize,
    pending: Option<Vec<Vec<f64>>>,
    best: BestEver,
    stagnant: bool,
}

impl Ga {
    pub fn new(space: SearchSpace, params: GaParams, seed: u64) -> Result<Self, SearchError> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut population = vec![space.initial().to_vec()];
        for _ in 1..params.population {
            let mut x: Vec<f64> = space
                .initial()
                .iter()
                .enumerate()
                .map(|(i, &c)| gaussian(&mut rng, c, params.init_spread * space.width(i)))
                .collect();
            space.clamp(&mut x);
            population.push(x);
        }
        Ok(Self {
            space,
            params,
            rng,
            population,
            fitness: Vec::new(),
            generation: 0,
            pending: None,
            best: BestEver::default(),
            stagnant: false,
        })
    }

    pub fn population(&self) -> &[Vec<f64>] {
        &self.population
    }

    /// Fitness of the last told generation (failures as `−∞`).
    pub fn fitness(&self) -> &[f64] {
        &self.fitness
    }

    fn tournament(&mut self, fitness: &[f64]) -> usize {
        let n = fitness.len();
        let mut best = self.rng.random_range(0..n);
        for _ in 1..self.params.tournament {
            let c = self.rng.random_range(0..n);
            if fitness[c] > fitness[best] {
                best = c;
            }
        }
        best
    }

    fn offspring(&mut self, parents: &[Vec<f64>], fitness: &[f64]) -> Vec<f64> {
        let a = self.tournament(fitness);
        let mut child = parents[a].clone();
        if self.rng.random::<f64>() < self.params.crossover_rate {
            let b = self.tournament(fitness);
            for (i, c) in child.iter_mut().enumerate() {
                let (lo, hi) = (parents[a][i].min(parents[b][i]), parents[a][i].max(parents[b][i]));
                let ext = self.params.blend_alpha * (hi - lo);
                *c = lo - ext + self.rng.random::<f64>() * (hi - lo + 2.0 * ext);
            }
        }
        let d = child.len();
        let rate = self.params.mutation_rate.unwrap_or(1.0 / d as f64);
        for (i, c) in child.iter_mut().enumerate() {
            if self.rng.random::<f64>() < rate {
                *c = gaussian(&mut self.rng, *c, self.params.mutation_scale * self.space.width(i));
            }
        }
        self.space.clamp(&mut child);
        child
    }
}

fn gaussian(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        Normal::new(mean, sd).expect("positive sd").sample(rng)
    } else {
        mean
    }
}

impl Optimizer for Ga {
    fn name(&self) -> &'static str {
        "ga"
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn ask(&mut self) -> Result<Vec<Vec<f64>>, SearchError> {
        self.pending = Some(self.population.clone());
        Ok(self.population.clone())
    }

    fn tell(&mut self, candidates: &[Vec<f64>], fitness: &[f64]) -> Result<TellOutcome, SearchError> {
        check_tell(self.pending.as_ref(), candidates, fitness, self.space.dimension())?;
        self.pending = None;
        for (x, &f) in candidates.iter().zip(fitness) {
            self.best.offer(x, f);
        }
        self.generation += 1;
        if fitness.iter().all(|f| !f.is_finite()) {
            self.stagnant = true;
            return Ok(TellOutcome::Stagnant);
        }
        self.stagnant = false;
        let keys: Vec<f64> = fitness.iter().map(|&f| rank_key(f)).collect();
        let mut order: Vec<usize> = (0..keys.len()).collect();
        order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]));
        let mut next: Vec<Vec<f64>> =
            order.iter().take(self.params.elitism).map(|&i| candidates[i].clone()).collect();
        while next.len() < self.params.population {
            let child = self.offspring(candidates, &keys);
            next.push(child);
        }
        self.population = next;
        self.fitness = keys;
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
