//! Image similarity: windowed SSIM and a random-projection feature distance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::MetricError;

/// Row-major grayscale image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, MetricError> {
        if data.len() != width * height {
            return Err(MetricError::Dimension(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of pixel values.
    pub range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, range: 1.0 }
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = g.iter().sum();
    g.into_iter().map(|v| v / total).collect()
}

/// Mean SSIM over every fully contained window position.
pub fn ssim(a: &GrayImage, b: &GrayImage, params: &SsimParams) -> Result<f64, MetricError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricError::Dimension(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let w = params.window;
    if w == 0 || a.width < w || a.height < w {
        return Err(MetricError::Dimension(format!(
            "image {}x{} smaller than the {w}x{w} window",
            a.width, a.height
        )));
    }
    let g = gaussian_window(w, params.sigma);
    let c1 = (params.k1 * params.range).powi(2);
    let c2 = (params.k2 * params.range).powi(2);
    let (nx, ny) = (a.width - w + 1, a.height - w + 1);
    let mut total = 0.0;
    for oy in 0..ny {
        for ox in 0..nx {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..w {
                for dx in 0..w {
                    let k = g[dy] * g[dx];
                    let va = a.get(ox + dx, oy + dy);
                    let vb = b.get(ox + dx, oy + dy);
                    ma += k * va;
                    mb += k * vb;
                    saa += k * va * va;
                    sbb += k * vb * vb;
                    sab += k * va * vb;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            let num = (2.0 * (ma * mb) + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += num / den;
        }
    }
    Ok(total / (nx * ny) as f64)
}

/// Maps a flat input to a feature vector.
pub trait Embedding {
    fn embed(&self, input: &[f64]) -> Vec<f64>;
}

/// Fixed Gaussian random projection to `features` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomProjection {
    inputs: usize,
    features: usize,
    weights: Vec<f64>,
}

impl RandomProjection {
    pub fn new(inputs: usize, features: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (features as f64).sqrt();
        let weights = (0..inputs * features)
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        Self { inputs, features, weights }
    }

    pub fn features(&self) -> usize {
        self.features
    }
}

impl Embedding for RandomProjection {
    fn embed(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.inputs, "projection input width");
        (0..self.features)
            .map(|f| {
                let row = &self.weights[f * self.inputs..(f + 1) * self.inputs];
                row.iter().zip(input).map(|(w, x)| w * x).sum()
            })
            .collect()
    }
}

/// L1 distance between embeddings.
pub fn embedding_distance(embedding: &dyn Embedding, a: &[f64], b: &[f64]) -> f64 {
    let ea = embedding.embed(a);
    let eb = embedding.embed(b);
    ea.iter().zip(&eb).map(|(x, y)| (x - y).abs()).sum()
}

pub const DEFAULT_FEATURES: usize = 64;

/// L1 distance between 64-feature random projections seeded by `seed`.
pub fn feature_distance(a: &[f64], b: &[f64], seed: u64) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::Dimension(format!("{} vs {} inputs", a.len(), b.len())));
    }
    let p = RandomProjection::new(a.len(), DEFAULT_FEATURES, seed);
    Ok(embedding_distance(&p, a, b))
}
