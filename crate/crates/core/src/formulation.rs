//! GAN formulations expressed as tripartite losses.
//!
//! A [`TripartiteLoss`] holds the discriminator loss on real scores, the
//! discriminator loss on generated scores, and the generator loss on
//! generated scores. Discriminators always emit raw scores; the
//! formulation's [`Link`] maps them into the domain its components expect.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::FormulationError;
use crate::nn::{Gradients, Matrix, Mlp};
use crate::taylor::UnivariateCubicLoss;

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Number of genes describing the three cubic losses.
pub const TAYLOR_GENES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Raw,
    Sigmoid,
}

impl Link {
    #[inline]
    pub fn apply(self, s: f64) -> f64 {
        match self {
            Link::Raw => s,
            Link::Sigmoid => sigmoid(s),
        }
    }

    #[inline]
    pub fn derivative(self, s: f64) -> f64 {
        match self {
            Link::Raw => 1.0,
            Link::Sigmoid => {
                let p = sigmoid(s);
                p * (1.0 - p)
            }
        }
    }
}

#[inline]
fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// One component of a tripartite loss, as a function of the linked score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarLoss {
    /// `−log p`
    NegLog,
    /// `−log(1 − p)`
    NegLogComplement,
    /// `log(1 − p)`
    LogComplement,
    /// `slope · u`
    Linear { slope: f64 },
    /// `½ (u − label)²`
    HalfSquare { label: f64 },
    Cubic(UnivariateCubicLoss),
}

impl ScalarLoss {
    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        match *self {
            ScalarLoss::NegLog => -clamp_prob(u).ln(),
            ScalarLoss::NegLogComplement => -(1.0 - clamp_prob(u)).ln(),
            ScalarLoss::LogComplement => (1.0 - clamp_prob(u)).ln(),
            ScalarLoss::Linear { slope } => slope * u,
            ScalarLoss::HalfSquare { label } => 0.5 * (u - label) * (u - label),
            ScalarLoss::Cubic(c) => c.value(u),
        }
    }

    /// Derivative with respect to `u`; log components are differentiated
    /// at the clamped probability.
    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            ScalarLoss::NegLog => -1.0 / clamp_prob(u),
            ScalarLoss::NegLogComplement => 1.0 / (1.0 - clamp_prob(u)),
            ScalarLoss::LogComplement => -1.0 / (1.0 - clamp_prob(u)),
            ScalarLoss::Linear { slope } => slope,
            ScalarLoss::HalfSquare { label } => u - label,
            ScalarLoss::Cubic(c) => c.derivative(u),
        }
    }
}

/// Which component of a tripartite loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    DiscriminatorReal,
    DiscriminatorFake,
    GeneratorFake,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripartiteLoss {
    pub name: String,
    pub d_real: ScalarLoss,
    pub d_fake: ScalarLoss,
    pub g_fake: ScalarLoss,
    pub link: Link,
}

/// LSGAN targets: `a` for generated data, `b` for real data, `c` what the
/// generator wants generated data scored as.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsganLabels {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for LsganLabels {
    fn default() -> Self {
        LsganLabels { a: 0.0, b: 1.0, c: 1.0 }
    }
}

impl LsganLabels {
    /// The `(−1, −1, 0)` setting.
    pub fn fast_convergence() -> Self {
        LsganLabels { a: -1.0, b: -1.0, c: 0.0 }
    }
}

pub fn minimax() -> TripartiteLoss {
    TripartiteLoss {
        name: "minimax".into(),
        d_real: ScalarLoss::NegLog,
        d_fake: ScalarLoss::NegLogComplement,
        g_fake: ScalarLoss::LogComplement,
        link: Link::Sigmoid,
    }
}

pub fn non_saturating() -> TripartiteLoss {
    TripartiteLoss {
        name: "non-saturating".into(),
        d_real: ScalarLoss::NegLog,
        d_fake: ScalarLoss::NegLogComplement,
        g_fake: ScalarLoss::NegLog,
        link: Link::Sigmoid,
    }
}

pub fn wasserstein() -> TripartiteLoss {
    TripartiteLoss {
        name: "wgan".into(),
        d_real: ScalarLoss::Linear { slope: -1.0 },
        d_fake: ScalarLoss::Linear { slope: 1.0 },
        g_fake: ScalarLoss::Linear { slope: -1.0 },
        link: Link::Raw,
    }
}

pub fn lsgan(labels: LsganLabels) -> TripartiteLoss {
    TripartiteLoss {
        name: "lsgan".into(),
        d_real: ScalarLoss::HalfSquare { label: labels.b },
        d_fake: ScalarLoss::HalfSquare { label: labels.a },
        g_fake: ScalarLoss::HalfSquare { label: labels.c },
        link: Link::Raw,
    }
}

/// Interprets 12 genes as three cubic losses, each laid out as
/// `(center, c1, c2, c3)`, in the order d_real, d_fake, g_fake.
pub fn from_genome(genome: &[f64]) -> Result<TripartiteLoss, FormulationError> {
    if genome.len() != TAYLOR_GENES {
        return Err(FormulationError::GenomeLength {
            expected: TAYLOR_GENES,
            got: genome.len(),
        });
    }
    if let Some(i) = genome.iter().position(|g| !g.is_finite()) {
        return Err(FormulationError::NonFiniteGene(i));
    }
    let cubic = |i: usize| ScalarLoss::Cubic(UnivariateCubicLoss::from_slice(&genome[4 * i..4 * i + 4]));
    Ok(TripartiteLoss {
        name: "taylor".into(),
        d_real: cubic(0),
        d_fake: cubic(1),
        g_fake: cubic(2),
        link: Link::Raw,
    })
}

/// Genome of the loss triple evolved for the facade image-translation
/// task, with coefficients as printed (4 decimal places).
pub const FACADES_PRESET_GENOME: [f64; TAYLOR_GENES] = [
    8.3399, 5.6484, 9.4935, 8.2695, //
    8.6177, 6.7549, 2.4328, 8.0006, //
    5.2232, 0.0000, 5.2849, 0.0000,
];

pub fn taylor_facades_preset() -> TripartiteLoss {
    let mut loss = from_genome(&FACADES_PRESET_GENOME).expect("preset genome is valid");
    loss.name = "taylor-facades-preset".into();
    loss
}

/// Names accepted by [`by_name`].
pub const PRESET_NAMES: [&str; 6] = [
    "minimax",
    "non-saturating",
    "wgan",
    "lsgan",
    "taylor",
    "taylor-facades-preset",
];

/// Resolves a preset name. `taylor` requires a 12-entry genome; `lsgan`
/// uses the default labels.
pub fn by_name(name: &str, genome: Option<&[f64]>) -> Result<TripartiteLoss, FormulationError> {
    match name {
        "minimax" => Ok(minimax()),
        "non-saturating" => Ok(non_saturating()),
        "wgan" => Ok(wasserstein()),
        "lsgan" => Ok(lsgan(LsganLabels::default())),
        "taylor" => from_genome(genome.unwrap_or(&[])),
        "taylor-facades-preset" => Ok(taylor_facades_preset()),
        other => Err(FormulationError::UnknownPreset(other.to_string())),
    }
}

impl TripartiteLoss {
    pub fn component(&self, role: Role) -> &ScalarLoss {
        match role {
            Role::DiscriminatorReal => &self.d_real,
            Role::DiscriminatorFake => &self.d_fake,
            Role::GeneratorFake => &self.g_fake,
        }
    }

    /// Component value at a raw discriminator score.
    #[inline]
    pub fn value_at_score(&self, role: Role, s: f64) -> f64 {
        self.component(role).value(self.link.apply(s))
    }

    /// Derivative of the component with respect to the raw score.
    #[inline]
    pub fn grad_at_score(&self, role: Role, s: f64) -> f64 {
        self.component(role).derivative(self.link.apply(s)) * self.link.derivative(s)
    }

    /// The genome this loss was built from, when it is a cubic triple.
    pub fn to_genome(&self) -> Option<Vec<f64>> {
        match (self.d_real, self.d_fake, self.g_fake) {
            (ScalarLoss::Cubic(a), ScalarLoss::Cubic(b), ScalarLoss::Cubic(c)) => Some(
                a.to_array()
                    .into_iter()
                    .chain(b.to_array())
                    .chain(c.to_array())
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Mean loss over a batch of raw scores and its gradient with respect to
    /// each score.
    pub fn batch(&self, role: Role, scores: &[f64]) -> (f64, Vec<f64>) {
        let n = scores.len().max(1) as f64;
        let mut total = 0.0;
        let grads = scores
            .iter()
            .map(|&s| {
                total += self.value_at_score(role, s);
                self.grad_at_score(role, s) / n
            })
            .collect();
        (total / n, grads)
    }

    /// Discriminator loss: mean `d_real` over real scores plus mean `d_fake`
    /// over generated scores.
    pub fn discriminator_loss(&self, real_scores: &[f64], fake_scores: &[f64]) -> f64 {
        self.batch(Role::DiscriminatorReal, real_scores).0
            + self.batch(Role::DiscriminatorFake, fake_scores).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// One point per (real, fake) pair, uniform on the segment between them.
    #[default]
    UniformOnSegment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientPenaltyConfig {
    pub lambda: f64,
    #[serde(default)]
    pub interpolation: Interpolation,
}

impl GradientPenaltyConfig {
    pub fn new(lambda: f64) -> Result<Self, FormulationError> {
        if !(lambda >= 0.0) {
            return Err(FormulationError::NegativeLambda(lambda));
        }
        Ok(GradientPenaltyConfig {
            lambda,
            interpolation: Interpolation::UniformOnSegment,
        })
    }
}

/// `λ · mean_r (‖∇ D(x̂_r)‖₂ − 1)²` with `x̂_r = t·real_r + (1 − t)·fake_r`,
/// `t ~ U(0, 1)`. Rows are paired by index.
pub fn gradient_penalty<R: Rng + ?Sized>(
    d: &Mlp,
    reals: &Matrix,
    fakes: &Matrix,
    cfg: &GradientPenaltyConfig,
    rng: &mut R,
) -> Result<f64, FormulationError> {
    Ok(penalty_and_grads(d, reals, fakes, reals.cols(), cfg, rng, false)?.0)
}

/// Penalty value plus its gradient with respect to the discriminator's
/// parameters. Only the first `data_cols` input columns enter the norm;
/// trailing columns (conditions) are interpolated but not penalized.
pub fn gradient_penalty_with_grads<R: Rng + ?Sized>(
    d: &Mlp,
    reals: &Matrix,
    fakes: &Matrix,
    data_cols: usize,
    cfg: &GradientPenaltyConfig,
    rng: &mut R,
) -> Result<(f64, Gradients), FormulationError> {
    let (v, g) = penalty_and_grads(d, reals, fakes, data_cols, cfg, rng, true)?;
    Ok((v, g.expect("requested")))
}

fn penalty_and_grads<R: Rng + ?Sized>(
    d: &Mlp,
    reals: &Matrix,
    fakes: &Matrix,
    data_cols: usize,
    cfg: &GradientPenaltyConfig,
    rng: &mut R,
    want_grads: bool,
) -> Result<(f64, Option<Gradients>), FormulationError> {
    if reals.rows() == 0
        || fakes.rows() == 0
        || reals.cols() != fakes.cols()
        || reals.cols() != d.input_width()
        || data_cols > reals.cols()
    {
        return Err(FormulationError::BatchShape);
    }
    if !(cfg.lambda >= 0.0) {
        return Err(FormulationError::NegativeLambda(cfg.lambda));
    }
    let n = reals.rows().min(fakes.rows());
    let cols = reals.cols();
    let mut hat = Matrix::zeros(n, cols);
    for r in 0..n {
        let t: f64 = rng.random();
        let (a, b) = (reals.row(r), fakes.row(r));
        for (h, (x, y)) in hat.row_mut(r).iter_mut().zip(a.iter().zip(b)) {
            *h = t * x + (1.0 - t) * y;
        }
    }
    if cfg.lambda == 0.0 {
        return Ok((0.0, want_grads.then(|| Gradients::zeros_like(d))));
    }
    let tape = d.forward(&hat).map_err(|_| FormulationError::BatchShape)?;
    let grads_x = d.input_gradients(&tape).map_err(|_| FormulationError::BatchShape)?;
    let mut total = 0.0;
    let mut v0 = Matrix::zeros(n, cols);
    let scale = cfg.lambda / n as f64;
    for r in 0..n {
        let g = &grads_x.row(r)[..data_cols];
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        total += (norm - 1.0) * (norm - 1.0);
        if norm > 0.0 {
            let coef = scale * 2.0 * (norm - 1.0) / norm;
            for (v, gi) in v0.row_mut(r)[..data_cols].iter_mut().zip(g) {
                *v = coef * gi;
            }
        }
    }
    let value = scale * total;
    let grads = if want_grads {
        Some(
            d.input_gradient_backward(&tape, &v0)
                .map_err(|_| FormulationError::BatchShape)?,
        )
    } else {
        None
    };
    Ok((value, grads))
}
