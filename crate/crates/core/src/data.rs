//! Synthetic 2-D Gaussian mixtures with exact densities.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mean: [f64; 2],
    pub sigma: f64,
    pub weight: f64,
}

/// Isotropic Gaussian mixture in the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Component>", into = "Vec<Component>")]
pub struct MixtureSpec {
    components: Vec<Component>,
    // cumulative weights for sampling
    cumulative: Vec<f64>,
}

impl TryFrom<Vec<Component>> for MixtureSpec {
    type Error = DataError;

    fn try_from(c: Vec<Component>) -> Result<Self, DataError> {
        MixtureSpec::new(c)
    }
}

impl From<MixtureSpec> for Vec<Component> {
    fn from(m: MixtureSpec) -> Self {
        m.components
    }
}

impl MixtureSpec {
    /// Weights are normalized to sum to one. Zero weights are allowed as
    /// long as at least one component has positive weight.
    pub fn new(mut components: Vec<Component>) -> Result<Self, DataError> {
        if components.is_empty() {
            return Err(DataError::InvalidMixture("no components".into()));
        }
        for c in &components {
            if !(c.sigma > 0.0) || !c.sigma.is_finite() {
                return Err(DataError::InvalidMixture(format!("sigma {}", c.sigma)));
            }
            if !(c.weight >= 0.0) || !c.weight.is_finite() {
                return Err(DataError::InvalidMixture(format!("weight {}", c.weight)));
            }
            if !c.mean.iter().all(|m| m.is_finite()) {
                return Err(DataError::InvalidMixture("non-finite mean".into()));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if !(total > 0.0) {
            return Err(DataError::InvalidMixture("weights sum to zero".into()));
        }
        for c in &mut components {
            c.weight /= total;
        }
        let mut acc = 0.0;
        let cumulative = components
            .iter()
            .map(|c| {
                acc += c.weight;
                acc
            })
            .collect();
        Ok(MixtureSpec {
            components,
            cumulative,
        })
    }

    /// `n_modes` equal-weight modes evenly spaced on a circle.
    pub fn ring(n_modes: usize, radius: f64, sigma: f64) -> Result<Self, DataError> {
        if n_modes == 0 {
            return Err(DataError::InvalidMixture("ring needs a mode".into()));
        }
        let components = (0..n_modes)
            .map(|i| {
                let angle = 2.0 * PI * i as f64 / n_modes as f64;
                Component {
                    mean: [radius * angle.cos(), radius * angle.sin()],
                    sigma,
                    weight: 1.0,
                }
            })
            .collect();
        Self::new(components)
    }

    /// `side × side` equal-weight modes on a square lattice centred at the
    /// origin.
    pub fn grid(side: usize, spacing: f64, sigma: f64) -> Result<Self, DataError> {
        if side == 0 {
            return Err(DataError::InvalidMixture("grid needs a mode".into()));
        }
        let offset = (side as f64 - 1.0) / 2.0;
        let mut components = Vec::with_capacity(side * side);
        for i in 0..side {
            for j in 0..side {
                components.push(Component {
                    mean: [
                        (i as f64 - offset) * spacing,
                        (j as f64 - offset) * spacing,
                    ],
                    sigma,
                    weight: 1.0,
                });
            }
        }
        Self::new(components)
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn max_sigma(&self) -> f64 {
        self.components.iter().map(|c| c.sigma).fold(0.0, f64::max)
    }

    /// Axis-aligned box covering every mode mean ± `pad` (as
    /// `[xmin, xmax, ymin, ymax]`).
    pub fn bounding_box(&self, pad: f64) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        for c in &self.components {
            b[0] = b[0].min(c.mean[0] - pad);
            b[1] = b[1].max(c.mean[0] + pad);
            b[2] = b[2].min(c.mean[1] - pad);
            b[3] = b[3].max(c.mean[1] + pad);
        }
        b
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.components.len() - 1)
            .min(self.components.len() - 1)
    }

    /// `n` i.i.d. points (one per row) and the index of the generating
    /// component of each.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Matrix, Vec<usize>) {
        let mut points = Matrix::zeros(n, 2);
        let mut labels = Vec::with_capacity(n);
        for r in 0..n {
            let mut k = self.pick(rng);
            // never pick a zero-weight component
            while self.components[k].weight == 0.0 {
                k = self.pick(rng);
            }
            let c = &self.components[k];
            let zx: f64 = StandardNormal.sample(rng);
            let zy: f64 = StandardNormal.sample(rng);
            let row = points.row_mut(r);
            row[0] = c.mean[0] + c.sigma * zx;
            row[1] = c.mean[1] + c.sigma * zy;
            labels.push(k);
        }
        (points, labels)
    }

    pub fn density(&self, point: [f64; 2]) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let dx = point[0] - c.mean[0];
                let dy = point[1] - c.mean[1];
                let s2 = c.sigma * c.sigma;
                c.weight * (-(dx * dx + dy * dy) / (2.0 * s2)).exp() / (2.0 * PI * s2)
            })
            .sum()
    }

    /// Exact probability mass of the rectangle `[x0, x1] × [y0, y1]`.
    pub fn cell_mass(&self, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let px = normal_cdf((x1 - c.mean[0]) / c.sigma) - normal_cdf((x0 - c.mean[0]) / c.sigma);
                let py = normal_cdf((y1 - c.mean[1]) / c.sigma) - normal_cdf((y0 - c.mean[1]) / c.sigma);
                c.weight * px * py
            })
            .sum()
    }
}

pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentDistribution {
    StandardNormal,
    /// Uniform on `(−1, 1)` per coordinate.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub dimension: usize,
    pub distribution: LatentDistribution,
}

impl Default for LatentSpec {
    fn default() -> Self {
        LatentSpec {
            dimension: 2,
            distribution: LatentDistribution::StandardNormal,
        }
    }
}

impl LatentSpec {
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Matrix {
        let data = (0..n * self.dimension)
            .map(|_| match self.distribution {
                LatentDistribution::StandardNormal => StandardNormal.sample(rng),
                LatentDistribution::Uniform => rng.random_range(-1.0..1.0),
            })
            .collect();
        Matrix::from_vec(n, self.dimension, data)
    }
}

/// How component labels are turned into condition vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConditionScheme {
    #[default]
    None,
    OneHot,
}

impl ConditionScheme {
    pub fn width(self, components: usize) -> usize {
        match self {
            ConditionScheme::None => 0,
            ConditionScheme::OneHot => components,
        }
    }

    /// Condition rows for the given labels; zero columns for `None`.
    pub fn encode(self, labels: &[usize], components: usize) -> Matrix {
        let w = self.width(components);
        let mut m = Matrix::zeros(labels.len(), w);
        if w > 0 {
            for (r, &l) in labels.iter().enumerate() {
                m.row_mut(r)[l] = 1.0;
            }
        }
        m
    }
}

/// Recovers labels from one-hot rows (index of the largest entry).
pub fn decode_one_hot(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            m.row(r)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_component_sample_mean() {
        let spec = MixtureSpec::ring(1, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (pts, labels) = spec.sample(100_000, &mut rng);
        let n = pts.rows() as f64;
        let mx: f64 = (0..pts.rows()).map(|r| pts.get(r, 0)).sum::<f64>() / n;
        let my: f64 = (0..pts.rows()).map(|r| pts.get(r, 1)).sum::<f64>() / n;
        assert!(mx.abs() < 0.02 && my.abs() < 0.02, "{mx} {my}");
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn zero_weight_component_never_sampled() {
        let c = |x: f64, w: f64| Component { mean: [x, 0.0], sigma: 0.1, weight: w };
        let spec = MixtureSpec::new(vec![c(0.0, 1.0), c(5.0, 0.0)]).unwrap();
        let (_, labels) = spec.sample(5000, &mut ChaCha8Rng::seed_from_u64(2));
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn sampling_is_seeded() {
        let spec = MixtureSpec::ring(8, 2.0, 0.02).unwrap();
        let a = spec.sample(100, &mut ChaCha8Rng::seed_from_u64(3));
        let b = spec.sample(100, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn standard_density_at_origin() {
        let spec = MixtureSpec::ring(1, 0.0, 1.0).unwrap();
        assert!((spec.density([0.0, 0.0]) - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!((spec.density([0.0, 0.0]) - 0.15915).abs() < 1e-5);
    }

    #[test]
    fn density_integrates_to_one() {
        let spec = MixtureSpec::ring(8, 2.0, 0.3).unwrap();
        let [x0, x1, y0, y1] = spec.bounding_box(6.0 * 0.3);
        let n = 400;
        let (hx, hy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let p = [x0 + (i as f64 + 0.5) * hx, y0 + (j as f64 + 0.5) * hy];
                let d = spec.density(p);
                assert!(d >= 0.0);
                total += d * hx * hy;
            }
        }
        assert!((total - 1.0).abs() < 0.01, "integral {total}");
    }

    #[test]
    fn ring_density_is_rotation_symmetric() {
        let spec = MixtureSpec::ring(8, 2.0, 0.2).unwrap();
        let p = [1.3, 0.4];
        let rot = |p: [f64; 2], a: f64| [p[0] * a.cos() - p[1] * a.sin(), p[0] * a.sin() + p[1] * a.cos()];
        let q = rot(p, PI / 4.0);
        assert!((spec.density(p) - spec.density(q)).abs() < 1e-12);
        // reflection across the x axis
        assert!((spec.density(p) - spec.density([p[0], -p[1]])).abs() < 1e-12);
    }

    #[test]
    fn constructors() {
        let ring = MixtureSpec::ring(8, 2.0, 0.02).unwrap();
        assert_eq!(ring.len(), 8);
        for c in ring.components() {
            let r = (c.mean[0].powi(2) + c.mean[1].powi(2)).sqrt();
            assert!((r - 2.0).abs() < 1e-12);
            assert!((c.weight - 0.125).abs() < 1e-15);
        }
        assert_eq!(MixtureSpec::grid(5, 1.0, 0.05).unwrap().len(), 25);
        let single = MixtureSpec::ring(1, 0.0, 0.5).unwrap();
        assert_eq!(single.components()[0].mean, [0.0, 0.0]);
        assert!(MixtureSpec::ring(0, 1.0, 1.0).is_err());
        assert!(MixtureSpec::ring(3, 1.0, 0.0).is_err());
        assert!(MixtureSpec::new(vec![]).is_err());
    }

    #[test]
    fn cell_mass_matches_density_quadrature() {
        let spec = MixtureSpec::ring(3, 1.0, 0.4).unwrap();
        let (x0, x1, y0, y1) = (0.2, 0.9, -0.5, 0.3);
        let n = 200;
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = x0 + (i as f64 + 0.5) * (x1 - x0) / n as f64;
                let y = y0 + (j as f64 + 0.5) * (y1 - y0) / n as f64;
                q += spec.density([x, y]);
            }
        }
        q *= (x1 - x0) * (y1 - y0) / (n * n) as f64;
        assert!((q - spec.cell_mass(x0, x1, y0, y1)).abs() < 1e-5);
    }

    #[test]
    fn histogram_matches_density() {
        let spec = MixtureSpec::ring(8, 2.0, 0.2).unwrap();
        let (pts, _) = spec.sample(1_000_000, &mut ChaCha8Rng::seed_from_u64(11));
        let [x0, x1, y0, y1] = spec.bounding_box(4.0 * 0.2);
        let n = 50;
        let mut counts = vec![0.0; n * n];
        let mut outside = 0.0;
        for r in 0..pts.rows() {
            let (x, y) = (pts.get(r, 0), pts.get(r, 1));
            let i = ((x - x0) / (x1 - x0) * n as f64).floor();
            let j = ((y - y0) / (y1 - y0) * n as f64).floor();
            if i >= 0.0 && j >= 0.0 && (i as usize) < n && (j as usize) < n {
                counts[i as usize * n + j as usize] += 1.0;
            } else {
                outside += 1.0;
            }
        }
        let total = pts.rows() as f64;
        let (hx, hy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
        let mut tv = 0.0;
        let mut inside_mass = 0.0;
        for i in 0..n {
            for j in 0..n {
                let m = spec.cell_mass(
                    x0 + i as f64 * hx,
                    x0 + (i + 1) as f64 * hx,
                    y0 + j as f64 * hy,
                    y0 + (j + 1) as f64 * hy,
                );
                inside_mass += m;
                tv += (m - counts[i * n + j] / total).abs();
            }
        }
        tv += ((1.0 - inside_mass) - outside / total).abs();
        assert!(0.5 * tv < 0.02, "TV = {}", 0.5 * tv);
    }

    #[test]
    fn latent_sampling() {
        let spec = LatentSpec { dimension: 3, distribution: LatentDistribution::Uniform };
        let z = spec.sample(200, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!((z.rows(), z.cols()), (200, 3));
        assert!(z.data().iter().all(|v| (-1.0..1.0).contains(v)));
    }

    proptest! {
        #[test]
        fn one_hot_round_trip(labels in prop::collection::vec(0usize..7, 1..50)) {
            let m = ConditionScheme::OneHot.encode(&labels, 7);
            for r in 0..m.rows() {
                prop_assert_eq!(m.row(r).iter().sum::<f64>(), 1.0);
            }
            prop_assert_eq!(decode_one_hot(&m), labels);
        }
    }

    #[test]
    fn serde_round_trip() {
        let spec = MixtureSpec::grid(2, 1.5, 0.1).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        let back: MixtureSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
