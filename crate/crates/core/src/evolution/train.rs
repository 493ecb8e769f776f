//! Adversarial training of a small generator/discriminator pair.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ConditionScheme, LatentSpec, MixtureSpec};
use crate::error::NetError;
use crate::formulation::{gradient_penalty_with_grads, GradientPenaltyConfig, Role, TripartiteLoss};
use crate::nn::{Activation, Matrix, Mlp, OptimizerConfig, OptimizerState, PowerIteration, UpdateRule};

/// Network shapes and optimizer settings shared by every training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub rule: UpdateRule,
    /// Generator learning rate (overridden by a learning-rate gene).
    pub g_lr: f64,
    /// Discriminator learning rate as a multiple of the generator's.
    pub d_lr_ratio: f64,
    /// Gradient-penalty weight; `None` disables the penalty.
    pub gradient_penalty: Option<f64>,
    pub spectral_norm: bool,
    pub power_iterations: usize,
    /// Record losses every this many steps (0 disables).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_width: 32,
            hidden_layers: 2,
            activation: Activation::LeakyRelu,
            rule: UpdateRule::adam(),
            g_lr: 2e-4,
            d_lr_ratio: 4.0,
            gradient_penalty: None,
            spectral_norm: false,
            power_iterations: 1,
            log_every: 0,
        }
    }
}

/// Target distribution and generator input specification.
#[derive(Debug, Clone, PartialEq)]
pub struct GanData {
    pub mixture: MixtureSpec,
    pub latent: LatentSpec,
    pub condition: ConditionScheme,
}

impl GanData {
    pub fn condition_width(&self) -> usize {
        self.condition.width(self.mixture.len())
    }

    pub fn generator_sizes(&self, cfg: &TrainConfig) -> Vec<usize> {
        let mut s = vec![self.latent.dimension + self.condition_width()];
        s.extend(std::iter::repeat_n(cfg.hidden_width, cfg.hidden_layers));
        s.push(2);
        s
    }

    pub fn discriminator_sizes(&self, cfg: &TrainConfig) -> Vec<usize> {
        let mut s = vec![2 + self.condition_width()];
        s.extend(std::iter::repeat_n(cfg.hidden_width, cfg.hidden_layers));
        s.push(1);
        s
    }

    /// Real points with their condition rows.
    fn real_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Matrix, Matrix, Vec<usize>) {
        let (x, labels) = self.mixture.sample(n, rng);
        let c = self.condition.encode(&labels, self.mixture.len());
        (x, c, labels)
    }

    fn generator_input<R: Rng + ?Sized>(&self, c: &Matrix, rng: &mut R) -> Matrix {
        self.latent.sample(c.rows(), rng).hcat(c)
    }
}

/// Per-run hyperparameters that a genome may override.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub g_lr: f64,
    /// Weight of the paired L1 reconstruction loss on the generator.
    pub aux_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub steps: usize,
    pub batch: usize,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub generator: Mlp,
    pub discriminator: Mlp,
    pub log: Vec<LossPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainFailure {
    NonFinite { step: usize },
    Timeout { step: usize },
    Setup(String),
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainFailure::NonFinite { step } => write!(f, "non-finite parameters at step {step}"),
            TrainFailure::Timeout { step } => write!(f, "generation time limit hit at step {step}"),
            TrainFailure::Setup(m) => write!(f, "invalid training setup: {m}"),
        }
    }
}

fn setup_err(e: impl std::fmt::Display) -> TrainFailure {
    TrainFailure::Setup(e.to_string())
}

fn column(values: Vec<f64>) -> Matrix {
    Matrix::from_vec(values.len(), 1, values)
}

/// Train G and D under `loss` for `schedule.steps` generator updates.
pub fn train_gan<R: Rng + ?Sized>(
    loss: &TripartiteLoss,
    hyper: &Hyper,
    data: &GanData,
    cfg: &TrainConfig,
    schedule: &Schedule,
    rng: &mut R,
    deadline: Option<Instant>,
) -> Result<Trained, TrainFailure> {
    if schedule.batch == 0 || schedule.d_steps == 0 {
        return Err(TrainFailure::Setup("batch size and discriminator steps must be positive".into()));
    }
    let g_opt = OptimizerConfig::new(cfg.rule, hyper.g_lr);
    let d_opt = OptimizerConfig::new(cfg.rule, hyper.g_lr * cfg.d_lr_ratio);
    g_opt.validate().map_err(setup_err)?;
    d_opt.validate().map_err(setup_err)?;
    let gp = cfg.gradient_penalty.map(GradientPenaltyConfig::new).transpose().map_err(setup_err)?;

    let mut g = Mlp::new(&data.generator_sizes(cfg), cfg.activation, rng).map_err(setup_err)?;
    let mut d = Mlp::new(&data.discriminator_sizes(cfg), cfg.activation, rng).map_err(setup_err)?;
    let mut g_state = OptimizerState::new(g.param_count());
    let mut d_state = OptimizerState::new(d.param_count());
    let mut power = PowerIteration::default();
    if cfg.spectral_norm {
        d.spectral_normalize(cfg.power_iterations, &mut power);
    }
    let mut log = Vec::new();
    let n = schedule.batch;
    let nonfinite = |step| move |_: NetError| TrainFailure::NonFinite { step };

    for step in 0..schedule.steps {
        if let Some(limit) = deadline {
            if step % 16 == 0 && Instant::now() >= limit {
                return Err(TrainFailure::Timeout { step });
            }
        }
        let mut d_loss = 0.0;
        for _ in 0..schedule.d_steps {
            let (x, c, _) = data.real_batch(n, rng);
            let fake = g.predict(&data.generator_input(&c, rng)).map_err(setup_err)?;
            let real_in = x.hcat(&c);
            let fake_in = fake.hcat(&c);
            let real_tape = d.forward(&real_in).map_err(setup_err)?;
            let fake_tape = d.forward(&fake_in).map_err(setup_err)?;
            let (lr_val, lr_grad) = loss.batch(Role::DiscriminatorReal, real_tape.output().data());
            let (lf_val, lf_grad) = loss.batch(Role::DiscriminatorFake, fake_tape.output().data());
            let (mut grads, _) = d.backward(&real_tape, &column(lr_grad)).map_err(setup_err)?;
            let (fg, _) = d.backward(&fake_tape, &column(lf_grad)).map_err(setup_err)?;
            grads.add_assign(&fg);
            d_loss = lr_val + lf_val;
            if let Some(gp) = &gp {
                let (pen, pg) =
                    gradient_penalty_with_grads(&d, &real_in, &fake_in, 2, gp, rng).map_err(setup_err)?;
                grads.add_assign(&pg);
                d_loss += pen;
            }
            d.step(&grads, &mut d_state, &d_opt).map_err(nonfinite(step))?;
            if cfg.spectral_norm {
                d.spectral_normalize(cfg.power_iterations, &mut power);
            }
        }

        let (x, c, _) = data.real_batch(n, rng);
        let g_tape = g.forward(&data.generator_input(&c, rng)).map_err(setup_err)?;
        let fake = g_tape.output().clone();
        let d_tape = d.forward(&fake.hcat(&c)).map_err(setup_err)?;
        let (g_loss, g_grad) = loss.batch(Role::GeneratorFake, d_tape.output().data());
        let dx = d.backward_input(&d_tape, &column(g_grad)).map_err(setup_err)?;
        let mut upstream = dx.take_cols(2);
        let mut g_total = g_loss;
        if hyper.aux_weight != 0.0 {
            let scale = hyper.aux_weight / (2 * n) as f64;
            let mut l1 = 0.0;
            for (u, (f, t)) in upstream.data_mut().iter_mut().zip(fake.data().iter().zip(x.data())) {
                let diff = f - t;
                l1 += diff.abs();
                *u += scale * diff.signum();
            }
            g_total += hyper.aux_weight * l1 / (2 * n) as f64;
        }
        let (gg, _) = g.backward(&g_tape, &upstream).map_err(setup_err)?;
        g.step(&gg, &mut g_state, &g_opt).map_err(nonfinite(step))?;

        if !(d_loss.is_finite() && g_total.is_finite()) {
            return Err(TrainFailure::NonFinite { step });
        }
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == schedule.steps) {
            log.push(LossPoint { step, d_loss, g_loss: g_total });
        }
    }
    Ok(Trained { generator: g, discriminator: d, log })
}

/// `n` generator samples; conditional generators receive labels drawn from
/// the mixture weights.
pub fn generate<R: Rng + ?Sized>(
    generator: &Mlp,
    data: &GanData,
    n: usize,
    rng: &mut R,
) -> Result<Matrix, NetError> {
    let (_, c, _) = data.real_batch(n, rng);
    generator.predict(&data.generator_input(&c, rng))
}
