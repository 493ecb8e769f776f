//! Sample-based scores against a known mixture density.

use serde::{Deserialize, Serialize};

use crate::data::MixtureSpec;
use crate::error::MetricError;
use crate::nn::Matrix;

use super::image::GrayImage;

pub const MIN_JS_SAMPLES: usize = 1000;

/// Regular grid over a rectangle, plus an implicit overflow bin for
/// everything outside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub bounds: [f64; 4],
    pub cells: usize,
}

impl Grid {
    /// The grid covering every mode of `spec` with `4 · max σ` of margin.
    pub fn for_mixture(spec: &MixtureSpec, cells: usize) -> Self {
        Self { bounds: spec.bounding_box(4.0 * spec.max_sigma()), cells }
    }

    fn step(&self) -> (f64, f64) {
        let [x0, x1, y0, y1] = self.bounds;
        ((x1 - x0) / self.cells as f64, (y1 - y0) / self.cells as f64)
    }

    /// Row-major cell index, or `None` for points outside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let [x0, x1, y0, y1] = self.bounds;
        if !(x >= x0 && x <= x1 && y >= y0 && y <= y1) {
            return None;
        }
        let (dx, dy) = self.step();
        let i = (((x - x0) / dx) as usize).min(self.cells - 1);
        let j = (((y - y0) / dy) as usize).min(self.cells - 1);
        Some(j * self.cells + i)
    }

    /// Exact probability of each cell under `spec`, followed by the
    /// overflow mass as the last entry.
    pub fn masses(&self, spec: &MixtureSpec) -> Vec<f64> {
        let [x0, _, y0, _] = self.bounds;
        let (dx, dy) = self.step();
        let n = self.cells;
        let mut out = Vec::with_capacity(n * n + 1);
        for j in 0..n {
            let (ya, yb) = (y0 + j as f64 * dy, y0 + (j + 1) as f64 * dy);
            for i in 0..n {
                let (xa, xb) = (x0 + i as f64 * dx, x0 + (i + 1) as f64 * dx);
                out.push(spec.cell_mass(xa, xb, ya, yb));
            }
        }
        let inside: f64 = out.iter().sum();
        out.push((1.0 - inside).max(0.0));
        out
    }

    /// Empirical frequencies of `samples` per cell, overflow last.
    pub fn histogram(&self, samples: &Matrix) -> Vec<f64> {
        let bins = self.cells * self.cells;
        let mut counts = vec![0.0; bins + 1];
        for r in 0..samples.rows() {
            let p = samples.row(r);
            match self.cell_of(p[0], p[1]) {
                Some(c) => counts[c] += 1.0,
                None => counts[bins] += 1.0,
            }
        }
        let n = samples.rows() as f64;
        counts.iter_mut().for_each(|c| *c /= n);
        counts
    }
}

fn check_samples(samples: &Matrix, needed: usize) -> Result<(), MetricError> {
    if samples.cols() != 2 {
        return Err(MetricError::Dimension(format!(
            "expected 2-D samples, got {} columns",
            samples.cols()
        )));
    }
    if samples.rows() < needed {
        return Err(MetricError::TooFewSamples { needed, got: samples.rows() });
    }
    if samples.data().iter().any(|v| !v.is_finite()) {
        return Err(MetricError::Failed("non-finite samples".into()));
    }
    Ok(())
}

/// Jensen-Shannon divergence (natural log) between two discrete
/// distributions after additive smoothing by `eps`.
pub fn js_discrete(p: &[f64], q: &[f64], eps: f64) -> f64 {
    let b = p.len() as f64;
    let pn = 1.0 + eps * b;
    let qn = 1.0 + eps * q.len() as f64;
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let pi = (pi + eps) / pn;
        let qi = (qi + eps) / qn;
        let mi = 0.5 * (pi + qi);
        acc += 0.5 * pi * (pi / mi).ln() + 0.5 * qi * (qi / mi).ln();
    }
    acc.max(0.0)
}

/// Jensen-Shannon divergence between `spec` and a histogram estimate of
/// `samples` on a `cells × cells` grid.
pub fn js_divergence(
    spec: &MixtureSpec,
    samples: &Matrix,
    cells: usize,
    eps: f64,
) -> Result<f64, MetricError> {
    check_samples(samples, MIN_JS_SAMPLES)?;
    let grid = Grid::for_mixture(spec, cells);
    Ok(js_discrete(&grid.masses(spec), &grid.histogram(samples), eps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Samples attributed to each mode.
    pub per_mode: Vec<usize>,
    /// Modes with at least `coverage_min` attributed samples.
    pub covered: usize,
    /// Fraction of samples within 3σ of some mode.
    pub hq_fraction: f64,
}

/// Attribute each sample to the nearest mode (distance measured in units
/// of that mode's σ) when it lies within 3σ of it.
pub fn mode_coverage(
    spec: &MixtureSpec,
    samples: &Matrix,
    coverage_min: usize,
) -> Result<Coverage, MetricError> {
    check_samples(samples, 1)?;
    let comps = spec.components();
    let mut per_mode = vec![0usize; comps.len()];
    let mut hq = 0usize;
    for r in 0..samples.rows() {
        let p = samples.row(r);
        let mut best: Option<(usize, f64)> = None;
        for (m, c) in comps.iter().enumerate() {
            let dx = p[0] - c.mean[0];
            let dy = p[1] - c.mean[1];
            let z = (dx * dx + dy * dy).sqrt() / c.sigma;
            if z <= 3.0 && best.is_none_or(|(_, bz)| z < bz) {
                best = Some((m, z));
            }
        }
        if let Some((m, _)) = best {
            per_mode[m] += 1;
            hq += 1;
        }
    }
    let covered = per_mode.iter().filter(|&&c| c >= coverage_min).count();
    Ok(Coverage { per_mode, covered, hq_fraction: hq as f64 / samples.rows() as f64 })
}

/// Target and sample density images on a `size × size` grid, both scaled by
/// the target's peak cell and clipped to `[0, 1]`.
pub fn density_images(
    spec: &MixtureSpec,
    samples: &Matrix,
    size: usize,
) -> Result<(GrayImage, GrayImage), MetricError> {
    check_samples(samples, 1)?;
    let grid = Grid::for_mixture(spec, size);
    let mut target = grid.masses(spec);
    let mut sampled = grid.histogram(samples);
    target.pop();
    sampled.pop();
    let peak = target.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(MetricError::Degenerate("target density image is empty".into()));
    }
    let norm = |v: Vec<f64>| v.into_iter().map(|x| (x / peak).min(1.0)).collect::<Vec<_>>();
    Ok((
        GrayImage::new(size, size, norm(target))?,
        GrayImage::new(size, size, norm(sampled))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Component;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn self_divergence_is_small() {
        let spec = MixtureSpec::ring(8, 2.0, 0.02).unwrap();
        let (s, _) = spec.sample(100_000, &mut rng(1));
        let js = js_divergence(&spec, &s, 64, 1e-9).unwrap();
        assert!(js < 0.02, "{js}");
        let grid = MixtureSpec::grid(5, 1.0, 0.05).unwrap();
        let (s, _) = grid.sample(100_000, &mut rng(2));
        assert!(js_divergence(&grid, &s, 64, 1e-9).unwrap() < 0.02);
    }

    #[test]
    fn far_point_reaches_log_two() {
        let spec = MixtureSpec::ring(8, 2.0, 0.02).unwrap();
        let s = Matrix::from_vec(2000, 2, vec![1e3; 4000]);
        let js = js_divergence(&spec, &s, 64, 1e-9).unwrap();
        assert!((js - std::f64::consts::LN_2).abs() < 1e-3, "{js}");
    }

    #[test]
    fn swapping_roles_is_nearly_symmetric() {
        let a = MixtureSpec::new(vec![
            Component { mean: [0.0, 0.0], sigma: 0.5, weight: 1.0 },
            Component { mean: [1.5, 0.5], sigma: 0.3, weight: 1.0 },
        ])
        .unwrap();
        let b = MixtureSpec::new(vec![
            Component { mean: [0.3, 0.0], sigma: 0.5, weight: 1.0 },
            Component { mean: [1.0, 1.0], sigma: 0.3, weight: 1.0 },
        ])
        .unwrap();
        let (sa, _) = a.sample(100_000, &mut rng(3));
        let (sb, _) = b.sample(100_000, &mut rng(4));
        // each estimate needs a common grid, so widen both to the union box
        let union = MixtureSpec::new(
            a.components().iter().chain(b.components()).cloned().collect(),
        )
        .unwrap();
        let grid = Grid::for_mixture(&union, 64);
        let ab = js_discrete(&grid.masses(&a), &grid.histogram(&sb), 1e-9);
        let ba = js_discrete(&grid.masses(&b), &grid.histogram(&sa), 1e-9);
        assert!(ab > 0.01);
        assert!((ab - ba).abs() < 0.01, "{ab} vs {ba}");
    }

    #[test]
    fn decreases_toward_target() {
        let spec = MixtureSpec::ring(8, 2.0, 0.05).unwrap();
        let (s, _) = spec.sample(20_000, &mut rng(5));
        let mut last = f64::INFINITY;
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let mut moved = s.clone();
            // blend each sample toward its mode-collapsed image at the origin
            moved.scale(t);
            let js = js_divergence(&spec, &moved, 64, 1e-9).unwrap();
            assert!(js <= std::f64::consts::LN_2 + 1e-9);
            assert!(js < last, "t={t}: {js} !< {last}");
            last = js;
        }
    }

    #[test]
    fn rejects_bad_input() {
        let spec = MixtureSpec::ring(4, 1.0, 0.1).unwrap();
        assert!(matches!(
            js_divergence(&spec, &Matrix::zeros(0, 2), 64, 1e-9),
            Err(MetricError::TooFewSamples { .. })
        ));
        assert!(matches!(
            js_divergence(&spec, &Matrix::zeros(2000, 3), 64, 1e-9),
            Err(MetricError::Dimension(_))
        ));
        let mut s = Matrix::zeros(2000, 2);
        s.data_mut()[7] = f64::NAN;
        assert!(js_divergence(&spec, &s, 64, 1e-9).is_err());
    }

    #[test]
    fn coverage_of_exact_means() {
        let spec = MixtureSpec::ring(8, 2.0, 0.02).unwrap();
        let rows: Vec<Vec<f64>> = spec.components().iter().map(|c| c.mean.to_vec()).collect();
        let c = mode_coverage(&spec, &Matrix::from_rows(&rows), 1).unwrap();
        assert_eq!(c.covered, 8);
        assert_eq!(c.hq_fraction, 1.0);
    }

    #[test]
    fn coverage_of_collapsed_samples() {
        let spec = MixtureSpec::ring(8, 2.0, 0.02).unwrap();
        let m = spec.components()[3].mean;
        let s = Matrix::from_vec(50, 2, m.iter().cycle().take(100).cloned().collect());
        let c = mode_coverage(&spec, &s, 10).unwrap();
        assert_eq!(c.covered, 1);
        assert_eq!(c.per_mode[3], 50);
        assert_eq!(c.per_mode.iter().sum::<usize>(), 50);
    }

    #[test]
    fn coverage_of_true_samples() {
        let spec = MixtureSpec::ring(8, 2.0, 0.02).unwrap();
        let (s, _) = spec.sample(100_000, &mut rng(6));
        let c = mode_coverage(&spec, &s, 10).unwrap();
        assert_eq!(c.covered, 8);
        assert!(c.hq_fraction > 0.98, "{}", c.hq_fraction);
        // 2-D Gaussian mass within 3σ is 1 − e^{−4.5}
        assert!((c.hq_fraction - (1.0 - (-4.5f64).exp())).abs() < 0.002);
    }

    #[test]
    fn density_images_agree_for_true_samples() {
        let spec = MixtureSpec::ring(8, 2.0, 0.05).unwrap();
        let (s, _) = spec.sample(200_000, &mut rng(7));
        let (t, e) = density_images(&spec, &s, 32).unwrap();
        let max_t = t.data().iter().cloned().fold(0.0, f64::max);
        assert_eq!(max_t, 1.0);
        let diff: f64 = t.data().iter().zip(e.data()).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff / (32.0 * 32.0) < 0.01);
    }
}
