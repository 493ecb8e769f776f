//! Loss-function evolution: genome decoding, candidate evaluation with
//! retries, the generational ask/evaluate/tell loop and final verification.

mod journal;
mod seed;
mod train;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormulationError, Result, SearchError};
use crate::formulation::{by_name, from_genome, TripartiteLoss, TAYLOR_GENES};
use crate::metrics::{composite, mean, score_samples, std_dev, welch_t, CompositeSpec, MetricsConfig, WelchResult};
use crate::nn::Matrix;
use crate::search::{SearchConfig, SearchSpace, TellOutcome};

pub use journal::{best_record, read_journal, CandidateRecord, ErrorRecord, Journal, JournalLine, Status};
pub use seed::{candidate_seed, derive_seed, STREAM_CANDIDATE, STREAM_SEARCH, STREAM_TRAIN, STREAM_VERIFY};
pub use train::{generate, train_gan, GanData, Hyper, LossPoint, Schedule, TrainConfig, TrainFailure, Trained};

/// Box for the Taylor genes.
pub const TAYLOR_BOUND: f64 = 10.0;
/// Box for the log10 learning-rate gene.
pub const LR_GENE_RANGE: (f64, f64) = (-5.0, -1.0);
/// Box for the auxiliary-loss weight gene.
pub const AUX_GENE_RANGE: (f64, f64) = (0.0, 20.0);

/// Which optional genes follow the 12 Taylor genes (learning rate first).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneLayout {
    pub learning_rate: bool,
    pub aux_weight: bool,
}

impl GeneLayout {
    pub fn dimension(&self) -> usize {
        TAYLOR_GENES + self.learning_rate as usize + self.aux_weight as usize
    }

    /// Search box; Taylor genes start at zero, the learning-rate gene at
    /// `log10(default_lr)` and the auxiliary weight at zero.
    pub fn space(&self, default_lr: f64) -> std::result::Result<SearchSpace, SearchError> {
        let mut lo = vec![-TAYLOR_BOUND; TAYLOR_GENES];
        let mut hi = vec![TAYLOR_BOUND; TAYLOR_GENES];
        let mut init = vec![0.0; TAYLOR_GENES];
        if self.learning_rate {
            lo.push(LR_GENE_RANGE.0);
            hi.push(LR_GENE_RANGE.1);
            init.push(default_lr.log10().clamp(LR_GENE_RANGE.0, LR_GENE_RANGE.1));
        }
        if self.aux_weight {
            lo.push(AUX_GENE_RANGE.0);
            hi.push(AUX_GENE_RANGE.1);
            init.push(AUX_GENE_RANGE.0);
        }
        SearchSpace::new(lo, hi, init)
    }

    /// Loss and hyperparameters encoded by `genome`.
    pub fn decode(
        &self,
        genome: &[f64],
        train: &TrainConfig,
    ) -> std::result::Result<(TripartiteLoss, Hyper), FormulationError> {
        if genome.len() != self.dimension() {
            return Err(FormulationError::GenomeLength { expected: self.dimension(), got: genome.len() });
        }
        let loss = from_genome(&genome[..TAYLOR_GENES])?;
        let mut hyper = Hyper { g_lr: train.g_lr, aux_weight: 0.0 };
        let mut i = TAYLOR_GENES;
        if self.learning_rate {
            hyper.g_lr = 10f64.powf(genome[i]);
            i += 1;
        }
        if self.aux_weight {
            hyper.aux_weight = genome[i];
        }
        if let Some(bad) = genome.iter().position(|g| !g.is_finite()) {
            return Err(FormulationError::NonFiniteGene(bad));
        }
        Ok((loss, hyper))
    }
}

/// Step counts and the retry policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingBudget {
    /// Generator updates during candidate evaluation.
    pub eval_steps: usize,
    /// Generator updates for verification and standalone training.
    pub full_steps: usize,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    pub batch: usize,
    /// Generator samples drawn for scoring.
    pub eval_samples: usize,
    /// Extra attempts after a failed one.
    pub max_retries: u32,
    /// Fitness below this counts as a failed attempt. Written as `"none"`
    /// when disabled, since TOML has no null.
    #[serde(with = "optional_floor")]
    pub failure_floor: Option<f64>,
    /// Wall-clock cap per generation, in seconds.
    pub generation_timeout_s: Option<f64>,
}

mod optional_floor {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Floor {
        Value(f64),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str("none"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Floor>::deserialize(d)? {
            None => Ok(None),
            Some(Floor::Value(x)) => Ok(Some(x)),
            Some(Floor::Word(w)) if w == "none" => Ok(None),
            Some(Floor::Word(w)) => Err(serde::de::Error::custom(format!("expected a number or \"none\", got \"{w}\""))),
        }
    }
}

impl Default for TrainingBudget {
    fn default() -> Self {
        Self {
            eval_steps: 2000,
            full_steps: 20_000,
            d_steps: 1,
            batch: 256,
            eval_samples: 5000,
            max_retries: 2,
            failure_floor: Some(-0.995),
            generation_timeout_s: None,
        }
    }
}

impl TrainingBudget {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.eval_steps == 0 || self.full_steps == 0 {
            return Err("step counts must be positive".into());
        }
        if self.eval_steps > self.full_steps {
            return Err("evaluation steps must not exceed full-training steps".into());
        }
        if self.d_steps == 0 || self.batch == 0 {
            return Err("discriminator steps and batch size must be positive".into());
        }
        if self.eval_samples < crate::metrics::MIN_JS_SAMPLES {
            return Err(format!("eval_samples must be at least {}", crate::metrics::MIN_JS_SAMPLES));
        }
        if self.max_retries > 2 {
            return Err("at most 2 retries are allowed".into());
        }
        if let Some(t) = self.generation_timeout_s {
            if !(t > 0.0 && t.is_finite()) {
                return Err("generation timeout must be positive".into());
            }
        }
        Ok(())
    }

    pub fn schedule(&self, steps: usize) -> Schedule {
        Schedule { steps, batch: self.batch, d_steps: self.d_steps }
    }
}

/// Everything needed to evaluate, evolve and verify loss functions.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub data: GanData,
    pub train: TrainConfig,
    pub budget: TrainingBudget,
    pub metrics: MetricsConfig,
    pub composite: CompositeSpec,
    pub layout: GeneLayout,
    pub search: SearchConfig,
    /// Generations after the initial one.
    pub generations: usize,
    pub seed: u64,
    pub workers: usize,
    /// Record per-attempt wall time in the journal (breaks byte identity).
    pub wall_time: bool,
    /// Consecutive all-failed generations before the run aborts.
    pub max_stagnant: usize,
}

/// A scored training run.
#[derive(Debug, Clone)]
pub struct Scored {
    pub metrics: crate::metrics::MetricReport,
    pub fitness: f64,
    pub trained: Trained,
    pub samples: Matrix,
}

impl Experiment {
    /// Train `loss` for `steps` generator updates and score the result.
    pub fn train_and_score(
        &self,
        loss: &TripartiteLoss,
        hyper: &Hyper,
        steps: usize,
        seed: u64,
        deadline: Option<Instant>,
    ) -> std::result::Result<Scored, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trained = train_gan(
            loss,
            hyper,
            &self.data,
            &self.train,
            &self.budget.schedule(steps),
            &mut rng,
            deadline,
        )
        .map_err(|e| e.to_string())?;
        let samples = generate(&trained.generator, &self.data, self.budget.eval_samples, &mut rng)
            .map_err(|e| e.to_string())?;
        if samples.data().iter().any(|v| !v.is_finite()) {
            return Err("generator produced non-finite samples".into());
        }
        let metrics = score_samples(&self.data.mixture, &samples, &self.metrics);
        let fitness = composite(&metrics, &self.composite).map_err(|e| e.to_string())?;
        if let Some(floor) = self.budget.failure_floor {
            if fitness < floor {
                return Err(format!("fitness {fitness} below failure floor {floor}"));
            }
        }
        Ok(Scored { metrics, fitness, trained, samples })
    }

    /// All attempts for one candidate, in order; the last one is final.
    pub fn evaluate_candidate(
        &self,
        genome: &[f64],
        gen: usize,
        idx: usize,
        deadline: Option<Instant>,
    ) -> Vec<CandidateRecord> {
        let base = |attempt: u32, seed: u64| CandidateRecord {
            gen,
            idx,
            attempt,
            genome: genome.to_vec(),
            seed,
            status: Status::Failed,
            reason: None,
            metrics: None,
            fitness: None,
            ms: None,
        };
        let decoded = self.layout.decode(genome, &self.train);
        let (loss, hyper) = match decoded {
            Ok(d) => d,
            Err(e) => {
                let mut r = base(0, candidate_seed(self.seed, gen, idx, 0));
                r.reason = Some(e.to_string());
                return vec![r];
            }
        };
        let mut out = Vec::new();
        for attempt in 0..=self.budget.max_retries {
            let seed = candidate_seed(self.seed, gen, idx, attempt);
            let mut record = base(attempt, seed);
            let start = Instant::now();
            let result = self.train_and_score(&loss, &hyper, self.budget.eval_steps, seed, deadline);
            if self.wall_time {
                record.ms = Some(start.elapsed().as_millis() as u64);
            }
            match result {
                Ok(scored) => {
                    record.status = if attempt == 0 { Status::Ok } else { Status::Retried(attempt) };
                    record.metrics = Some(scored.metrics.scores());
                    record.fitness = Some(scored.fitness);
                    out.push(record);
                    break;
                }
                Err(reason) => {
                    record.reason = Some(reason);
                    out.push(record);
                    if deadline.is_some_and(|d| Instant::now() >= d) {
                        break;
                    }
                }
            }
        }
        out
    }

    fn deadline(&self) -> Option<Instant> {
        self.budget.generation_timeout_s.map(|s| Instant::now() + Duration::from_secs_f64(s))
    }
}

/// Per-generation statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub gen: usize,
    pub best: Option<f64>,
    pub mean: Option<f64>,
    pub best_ever: Option<f64>,
    pub failed: usize,
    pub retried: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionOutcome {
    pub best_genome: Vec<f64>,
    pub best_fitness: f64,
    pub best_gen: usize,
    pub best_idx: usize,
    pub summaries: Vec<GenerationSummary>,
}

impl EvolutionOutcome {
    pub fn best_ever_trace(&self) -> Vec<f64> {
        self.summaries.iter().map(|s| s.best_ever.unwrap_or(f64::NEG_INFINITY)).collect()
    }
}

/// Evaluates a batch of candidates on a bounded pool; results come back in
/// candidate order whatever the completion order.
struct Pool {
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Pool {
    fn new(workers: usize) -> Result<Self> {
        #[cfg(feature = "parallel")]
        {
            let pool = if workers > 1 {
                Some(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(workers)
                        .build()
                        .map_err(|e| Error::Aborted(format!("cannot start worker pool: {e}")))?,
                )
            } else {
                None
            };
            Ok(Self { pool })
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = workers;
            Ok(Self {})
        }
    }

    fn map<T, U, F>(&self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(usize, &T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect());
        }
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

fn final_fitness(records: &[CandidateRecord]) -> f64 {
    records
        .last()
        .filter(|r| r.succeeded())
        .and_then(|r| r.fitness)
        .unwrap_or(f64::NEG_INFINITY)
}

/// Run the generational loop: generation 0 plus `exp.generations` more.
/// Every attempt is appended to `journal` as its generation completes.
pub fn run_evolution(
    exp: &Experiment,
    journal: &mut Journal,
    mut progress: impl FnMut(&GenerationSummary),
) -> Result<EvolutionOutcome> {
    evolve_from(exp, journal, &[], &mut progress)
}

/// Continue a run whose earlier generations are recorded in `path`. The
/// optimizer is replayed from the journaled fitness values, so the resumed
/// journal matches an uninterrupted run.
pub fn resume_evolution(
    exp: &Experiment,
    path: &std::path::Path,
    mut progress: impl FnMut(&GenerationSummary),
) -> Result<(EvolutionOutcome, Journal)> {
    let lines = read_journal(path)?;
    let pop = exp.search.population(exp.layout.dimension());
    let is_final = |r: &CandidateRecord| r.succeeded() || r.attempt >= exp.budget.max_retries;
    let mut complete: Vec<Vec<Vec<CandidateRecord>>> = Vec::new();
    let mut current: Vec<Vec<CandidateRecord>> = vec![Vec::new(); pop];
    let mut complete_lines = 0;
    let close = |current: &mut Vec<Vec<CandidateRecord>>, complete: &mut Vec<_>| {
        complete.push(std::mem::replace(current, vec![Vec::new(); pop]));
    };
    let mut consumed = 0;
    for (n, line) in lines.iter().enumerate() {
        let JournalLine::Candidate(r) = line else { break };
        // a record of the next generation closes the current one, even if a
        // deadline cut some candidate's retries short
        if r.gen == complete.len() + 1 && current.iter().all(|grp| !grp.is_empty()) {
            close(&mut current, &mut complete);
            complete_lines = n;
        }
        if r.gen != complete.len() || r.idx >= pop {
            return Err(Error::Aborted(format!(
                "journal record (gen {}, idx {}) does not match the configured run",
                r.gen, r.idx
            )));
        }
        current[r.idx].push(r.clone());
        consumed = n + 1;
    }
    // the trailing generation is complete once every candidate has a final record
    if current.iter().all(|grp| grp.last().is_some_and(is_final)) {
        close(&mut current, &mut complete);
        complete_lines = consumed;
    }
    let mut journal = Journal::reopen(path, complete_lines)?;
    let outcome = evolve_from(exp, &mut journal, &complete, &mut progress)?;
    Ok((outcome, journal))
}

fn evolve_from(
    exp: &Experiment,
    journal: &mut Journal,
    replay: &[Vec<Vec<CandidateRecord>>],
    progress: &mut dyn FnMut(&GenerationSummary),
) -> Result<EvolutionOutcome> {
    exp.budget.validate().map_err(Error::Aborted)?;
    let space = exp.layout.space(exp.train.g_lr)?;
    let mut opt = exp.search.build(space, derive_seed(exp.seed, &[STREAM_SEARCH]))?;
    let pool = Pool::new(exp.workers)?;
    let mut best: Option<(Vec<f64>, f64, usize, usize)> = None;
    let mut summaries = Vec::new();
    let mut stagnant = 0;

    for gen in 0..=exp.generations {
        let candidates = match opt.ask() {
            Ok(c) => c,
            Err(e) => return abort(journal, gen, e.to_string()),
        };
        let results: Vec<Vec<CandidateRecord>> = match replay.get(gen) {
            Some(recorded) => {
                let matches = recorded.len() == candidates.len()
                    && recorded.iter().zip(&candidates).all(|(r, c)| {
                        r.first().is_some_and(|r| {
                            r.genome.len() == c.len()
                                && r.genome.iter().zip(c).all(|(a, b)| a.to_bits() == b.to_bits())
                        })
                    });
                if !matches {
                    return Err(Error::Aborted(format!(
                        "journal generation {gen} does not match the configured search"
                    )));
                }
                recorded.clone()
            }
            None => {
                let deadline = exp.deadline();
                let results = pool.map(&candidates, |idx, g| exp.evaluate_candidate(g, gen, idx, deadline));
                let lines: Vec<JournalLine> =
                    results.iter().flatten().cloned().map(JournalLine::Candidate).collect();
                journal.append(&lines)?;
                results
            }
        };

        let fitness: Vec<f64> = results.iter().map(|r| final_fitness(r)).collect();
        for (idx, &f) in fitness.iter().enumerate() {
            if f.is_finite() && best.as_ref().is_none_or(|b| f > b.1) {
                best = Some((candidates[idx].clone(), f, gen, idx));
            }
        }
        let ok: Vec<f64> = fitness.iter().copied().filter(|f| f.is_finite()).collect();
        let summary = GenerationSummary {
            gen,
            best: ok.iter().copied().reduce(f64::max),
            mean: (!ok.is_empty()).then(|| mean(&ok)),
            best_ever: best.as_ref().map(|b| b.1),
            failed: fitness.len() - ok.len(),
            retried: results
                .iter()
                .filter(|r| matches!(r.last().map(|l| l.status), Some(Status::Retried(_))))
                .count(),
        };
        progress(&summary);
        summaries.push(summary);

        match opt.tell(&candidates, &fitness) {
            Ok(TellOutcome::Updated) => stagnant = 0,
            Ok(TellOutcome::Stagnant) => {
                stagnant += 1;
                if stagnant >= exp.max_stagnant {
                    return abort(journal, gen, format!("{stagnant} consecutive generations failed entirely"));
                }
            }
            Err(e) => return abort(journal, gen, e.to_string()),
        }
    }

    let (best_genome, best_fitness, best_gen, best_idx) =
        best.ok_or_else(|| Error::Aborted("no candidate was evaluated successfully".into()))?;
    Ok(EvolutionOutcome { best_genome, best_fitness, best_gen, best_idx, summaries })
}

fn abort<T>(journal: &mut Journal, gen: usize, error: String) -> Result<T> {
    journal.append(&[JournalLine::Error(ErrorRecord { gen, error: error.clone() })])?;
    Err(Error::Aborted(error))
}

/// One verification training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub status: Status,
    pub metrics: Option<BTreeMap<String, Option<f64>>>,
    pub fitness: Option<f64>,
}

/// A labelled set of runs with per-metric means and standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSet {
    pub label: String,
    pub runs: Vec<RunResult>,
}

impl RunSet {
    pub fn fitness(&self) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.fitness).filter(|f| f.is_finite()).collect()
    }

    /// Finite values of `metric` over successful runs.
    pub fn metric(&self, metric: &str) -> Vec<f64> {
        self.runs
            .iter()
            .filter_map(|r| r.metrics.as_ref()?.get(metric).copied().flatten())
            .collect()
    }

    pub fn metric_names(&self) -> Vec<String> {
        let mut names: Vec<String> =
            self.runs.iter().filter_map(|r| r.metrics.as_ref()).flat_map(|m| m.keys().cloned()).collect();
        names.sort();
        names.dedup();
        names
    }

    /// `metric → (mean, std)` including `fitness`.
    pub fn summary(&self) -> BTreeMap<String, (f64, f64)> {
        let mut out = BTreeMap::new();
        let mut add = |name: String, v: Vec<f64>| {
            if !v.is_empty() {
                out.insert(name, (mean(&v), std_dev(&v)));
            }
        };
        add("fitness".into(), self.fitness());
        for name in self.metric_names() {
            let v = self.metric(&name);
            add(name, v);
        }
        out
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.status == Status::Failed).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub baseline: RunSet,
    pub candidate: RunSet,
    /// One-tailed test that the candidate's composite fitness is higher.
    pub welch: WelchResult,
}

/// What to verify against what.
#[derive(Debug, Clone, PartialEq)]
pub enum Contender {
    Preset(String),
    Genome(Vec<f64>),
}

impl Contender {
    pub fn label(&self) -> String {
        match self {
            Contender::Preset(p) => p.clone(),
            Contender::Genome(_) => "evolved".into(),
        }
    }

    /// Loss and hyperparameters this contender trains with.
    pub fn resolve(&self, exp: &Experiment) -> Result<(TripartiteLoss, Hyper)> {
        match self {
            Contender::Preset(name) => {
                Ok((by_name(name, None)?, Hyper { g_lr: exp.train.g_lr, aux_weight: 0.0 }))
            }
            Contender::Genome(g) => Ok(exp.layout.decode(g, &exp.train)?),
        }
    }
}

/// Train `contender` `runs` times for `steps` updates and collect the
/// scores. Runs that fail to train are retried with fresh seeds; the failure
/// floor does not apply, so poor runs stay in the set. `side` separates the
/// seed streams of different run sets.
pub fn run_set(exp: &Experiment, contender: &Contender, side: u64, runs: usize, steps: usize) -> Result<RunSet> {
    let (loss, hyper) = contender.resolve(exp)?;
    let mut exp = exp.clone();
    exp.budget.failure_floor = None;
    let exp = &exp;
    let pool = Pool::new(exp.workers)?;
    let idx: Vec<usize> = (0..runs).collect();
    let results = pool.map(&idx, |_, &run| {
        let mut last_seed = 0;
        for attempt in 0..=exp.budget.max_retries {
            let seed = derive_seed(exp.seed, &[STREAM_VERIFY, side, run as u64, attempt as u64]);
            last_seed = seed;
            if let Ok(s) = exp.train_and_score(&loss, &hyper, steps, seed, None) {
                let status = if attempt == 0 { Status::Ok } else { Status::Retried(attempt) };
                return RunResult { seed, status, metrics: Some(s.metrics.scores()), fitness: Some(s.fitness) };
            }
        }
        RunResult { seed: last_seed, status: Status::Failed, metrics: None, fitness: None }
    });
    Ok(RunSet { label: contender.label(), runs: results })
}

/// Full-budget comparison of `candidate` against `baseline` over `seeds`
/// runs each, with a one-tailed Welch test on composite fitness.
pub fn verify_best(exp: &Experiment, candidate: &Contender, baseline: &Contender, seeds: usize) -> Result<VerifyReport> {
    let steps = exp.budget.full_steps;
    let baseline = run_set(exp, baseline, 0, seeds, steps)?;
    let candidate = run_set(exp, candidate, 1, seeds, steps)?;
    let welch = welch_t(&baseline.fitness(), &candidate.fitness())?;
    Ok(VerifyReport { baseline, candidate, welch })
}
