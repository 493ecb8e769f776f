//! Standard test functions, negated for maximization.

use serde::{Deserialize, Serialize};

use super::Optimizer;
use crate::error::SearchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Sphere,
    Rosenbrock,
    Rastrigin,
}

impl Benchmark {
    pub const ALL: [Benchmark; 3] = [Benchmark::Sphere, Benchmark::Rosenbrock, Benchmark::Rastrigin];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Sphere => "sphere",
            Benchmark::Rosenbrock => "rosenbrock",
            Benchmark::Rastrigin => "rastrigin",
        }
    }

    /// Negated objective; the optimum is 0 for all three.
    pub fn value(self, x: &[f64]) -> f64 {
        let v: f64 = match self {
            Benchmark::Sphere => x.iter().map(|v| v * v).sum(),
            Benchmark::Rosenbrock => x
                .windows(2)
                .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
                .sum(),
            Benchmark::Rastrigin => {
                10.0 * x.len() as f64
                    + x.iter()
                        .map(|v| v * v - 10.0 * (2.0 * std::f64::consts::PI * v).cos())
                        .sum::<f64>()
            }
        };
        -v
    }
}

impl std::str::FromStr for Benchmark {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown benchmark `{s}`"))
    }
}

/// Best-ever fitness after each generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTrace {
    pub best: Vec<f64>,
    pub evaluations: usize,
}

pub fn run_benchmark(
    opt: &mut dyn Optimizer,
    bench: Benchmark,
    generations: usize,
) -> Result<BenchmarkTrace, SearchError> {
    let mut trace = BenchmarkTrace { best: Vec::with_capacity(generations), evaluations: 0 };
    for _ in 0..generations {
        let xs = opt.ask()?;
        let f: Vec<f64> = xs.iter().map(|x| bench.value(x)).collect();
        trace.evaluations += xs.len();
        opt.tell(&xs, &f)?;
        trace.best.push(opt.best()?.1);
    }
    Ok(trace)
}
