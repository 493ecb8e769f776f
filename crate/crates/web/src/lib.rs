//! Browser bindings: loss curves, mixture samples and a small training demo.
//!
//! Each export has a plain-Rust counterpart returning `Result<_, String>` so
//! the logic can be tested natively.

// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

use taylorgan::data::{ConditionScheme, LatentSpec, MixtureSpec};
use taylorgan::evolution::{Experiment, GanData, GeneLayout, Hyper, TrainConfig, TrainingBudget};
use taylorgan::formulation::{by_name, Role, TripartiteLoss};
use taylorgan::metrics::{CompositeSpec, MetricsConfig};
use taylorgan::search::SearchConfig;

/// Longest training the demo accepts.
pub const MAX_DEMO_STEPS: usize = 5000;

fn parse_loss(preset: &str, genome: &str) -> Result<TripartiteLoss, String> {
    let genes: Vec<f64> = genome
        .split([',', ' ', '\n', '\t'])
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("`{s}` is not a number")))
        .collect::<Result<_, _>>()?;
    let genes = (preset == "taylor").then_some(genes.as_slice());
    by_name(preset, genes).map_err(|e| e.to_string())
}

fn mixture(kind: &str, modes: usize, scale: f64, sigma: f64) -> Result<MixtureSpec, String> {
    match kind {
        "ring" => MixtureSpec::ring(modes, scale, sigma),
        "grid" => MixtureSpec::grid(modes, scale, sigma),
        other => return Err(format!("unknown mixture `{other}`")),
    }
    .map_err(|e| e.to_string())
}

/// JSON object with the score grid and the three loss components and their
/// derivatives.
pub fn loss_curve_json(preset: &str, genome: &str, from: f64, to: f64, points: usize) -> Result<String, String> {
    if !(from < to) || !(2..=10_000).contains(&points) {
        return Err("need from < to and 2 to 10000 points".into());
    }
    let loss = parse_loss(preset, genome)?;
    let grid: Vec<f64> = (0..points).map(|i| from + (to - from) * i as f64 / (points - 1) as f64).collect();
    let curve = |role: Role| grid.iter().map(|&s| loss.value_at_score(role, s)).collect::<Vec<_>>();
    let slope = |role: Role| grid.iter().map(|&s| loss.grad_at_score(role, s)).collect::<Vec<_>>();
    Ok(json!({
        "name": loss.name,
        "score": grid,
        "d_real": curve(Role::DiscriminatorReal),
        "d_fake": curve(Role::DiscriminatorFake),
        "g_fake": curve(Role::GeneratorFake),
        "d_real_grad": slope(Role::DiscriminatorReal),
        "d_fake_grad": slope(Role::DiscriminatorFake),
        "g_fake_grad": slope(Role::GeneratorFake),
    })
    .to_string())
}

/// Flat `[x0, y0, x1, y1, …]` samples from a ring or grid mixture.
pub fn mixture_samples_flat(kind: &str, modes: usize, scale: f64, sigma: f64, n: usize, seed: u32) -> Result<Vec<f64>, String> {
    let spec = mixture(kind, modes, scale, sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    Ok(spec.sample(n.min(100_000), &mut rng).0.into_data())
}

/// Train a small GAN on ring(8, 2, 0.02) and return generated samples,
/// target samples and metric scores as JSON.
pub fn train_demo_json(preset: &str, genome: &str, steps: usize, seed: u32) -> Result<String, String> {
    if steps == 0 || steps > MAX_DEMO_STEPS {
        return Err(format!("steps must be between 1 and {MAX_DEMO_STEPS}"));
    }
    let loss = parse_loss(preset, genome)?;
    let exp = Experiment {
        data: GanData {
            mixture: MixtureSpec::ring(8, 2.0, 0.02).map_err(|e| e.to_string())?,
            latent: LatentSpec::default(),
            condition: ConditionScheme::None,
        },
        train: TrainConfig::default(),
        budget: TrainingBudget {
            eval_steps: steps,
            full_steps: steps,
            batch: 128,
            eval_samples: 2000,
            failure_floor: None,
            ..TrainingBudget::default()
        },
        metrics: MetricsConfig::default(),
        composite: CompositeSpec::default(),
        layout: GeneLayout::default(),
        search: SearchConfig::default(),
        generations: 0,
        seed: seed as u64,
        workers: 1,
        wall_time: false,
        max_stagnant: 1,
    };
    let hyper = Hyper { g_lr: exp.train.g_lr, aux_weight: 0.0 };
    let scored = exp.train_and_score(&loss, &hyper, steps, seed as u64, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64 ^ 0x5eed);
    let (target, _) = exp.data.mixture.sample(2000, &mut rng);
    Ok(json!({
        "name": loss.name,
        "steps": steps,
        "fitness": scored.fitness,
        "metrics": scored.metrics.scores(),
        "samples": scored.samples.data(),
        "target": target.data(),
    })
    .to_string())
}

#[wasm_bindgen(js_name = lossCurve)]
pub fn loss_curve(preset: &str, genome: &str, from: f64, to: f64, points: usize) -> Result<String, JsError> {
    loss_curve_json(preset, genome, from, to, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = mixtureSamples)]
pub fn mixture_samples(kind: &str, modes: usize, scale: f64, sigma: f64, n: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    mixture_samples_flat(kind, modes, scale, sigma, n, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = trainDemo)]
pub fn train_demo(preset: &str, genome: &str, steps: usize, seed: u32) -> Result<String, JsError> {
    train_demo_json(preset, genome, steps, seed).map_err(|e| JsError::new(&e))
}
