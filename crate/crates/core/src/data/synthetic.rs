//! A two-modality classification benchmark with controllable difficulty.
//!
//! Every class owns a latent prototype and a radial wave with a class-specific
//! frequency centred on the image, so class identity survives flips and
//! quarter turns. A sample of class `k` perturbs the prototype and maps it
//! through a fixed random per-modality mixing matrix to one wave amplitude per
//! channel, then adds per-channel offsets, a smooth random field and pixel
//! noise. Each sample exists in exactly one modality.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::Tensor;

const VALUE_RANGE: (f32, f32) = (0.0, 1.0);
/// Control points per side of the smooth nuisance field.
const FIELD_GRID: usize = 5;
/// Maps rendered intensities into the unit range around mid-gray.
const RENDER_GAIN: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    pub name: String,
    pub channels: usize,
    /// Square spatial extent.
    pub size: usize,
    pub num_samples: usize,
    /// Scale of the per-sample channel offsets and smooth field.
    pub nuisance: f64,
    /// Standard deviation of i.i.d. pixel noise.
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBenchConfig {
    pub num_classes: usize,
    pub latent_dim: usize,
    /// Standard deviation of the per-sample perturbation of the prototype.
    pub class_spread: f64,
    /// Probability that a recorded label is replaced by another class.
    pub label_noise: f64,
    /// Radial frequency of the first and last class, in cycles per
    /// half-width; the others are spaced evenly in between.
    pub frequency_range: [f64; 2],
    pub source: ModalitySpec,
    pub target: ModalitySpec,
    pub seed: u64,
}

impl Default for SyntheticBenchConfig {
    fn default() -> Self {
        Self {
            num_classes: 6,
            latent_dim: 8,
            class_spread: 0.6,
            label_noise: 0.0,
            frequency_range: [1.5, 4.5],
            source: ModalitySpec {
                name: "optical".into(),
                channels: 8,
                size: 32,
                num_samples: 960,
                nuisance: 0.5,
                noise: 0.3,
            },
            target: ModalitySpec {
                name: "radar".into(),
                channels: 2,
                size: 32,
                num_samples: 1440,
                nuisance: 0.5,
                noise: 0.5,
            },
            seed: 0,
        }
    }
}

impl SyntheticBenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Geometry(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::Geometry("latent_dim must be at least 1".into()));
        }
        for (what, v) in [("class_spread", self.class_spread), ("label_noise", self.label_noise)] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{what} must be non-negative, got {v}")));
            }
        }
        let [lo, hi] = self.frequency_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!(
                "frequency_range must satisfy 0 < lo <= hi, got {:?}",
                self.frequency_range
            )));
        }
        if self.label_noise > 1.0 {
            return Err(Error::Config(format!(
                "label_noise must be at most 1, got {}",
                self.label_noise
            )));
        }
        for m in [&self.source, &self.target] {
            if m.channels == 0 || m.size < 2 {
                return Err(Error::Geometry(format!(
                    "modality {} needs channels >= 1 and size >= 2, got {}x{}",
                    m.name, m.channels, m.size
                )));
            }
            if m.num_samples < self.num_classes {
                return Err(Error::Geometry(format!(
                    "modality {} has fewer samples than classes",
                    m.name
                )));
            }
            if !(m.nuisance >= 0.0 && m.noise >= 0.0) {
                return Err(Error::Config(format!(
                    "modality {} has negative nuisance or noise",
                    m.name
                )));
            }
        }
        if self.source.name == self.target.name {
            return Err(Error::Config("source and target modality names must differ".into()));
        }
        Ok(())
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Radial cosine of class `k`: frequency (cycles per half-width) and phase.
fn class_wave(size: usize, cycles: f64, phase: f64) -> Vec<f64> {
    let centre = (size as f64 - 1.0) / 2.0;
    let half = size as f64 / 2.0;
    (0..size * size)
        .map(|p| {
            let (y, x) = ((p / size) as f64, (p % size) as f64);
            let rho = ((y - centre).powi(2) + (x - centre).powi(2)).sqrt() / half;
            (std::f64::consts::TAU * cycles * rho + phase).cos()
        })
        .collect()
}

/// Bilinear upsampling of a `FIELD_GRID x FIELD_GRID` grid to `size x size`.
fn smooth_field(grid: &[f64], size: usize) -> Vec<f64> {
    let last = (FIELD_GRID - 1) as f64;
    let scale = last / (size as f64 - 1.0);
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let gy = y as f64 * scale;
        let y0 = (gy.floor() as usize).min(FIELD_GRID - 2);
        let ty = gy - y0 as f64;
        for x in 0..size {
            let gx = x as f64 * scale;
            let x0 = (gx.floor() as usize).min(FIELD_GRID - 2);
            let tx = gx - x0 as f64;
            let at = |r: usize, c: usize| grid[r * FIELD_GRID + c];
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bottom = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Per-class wave parameters shared by both modalities.
struct ClassPattern {
    prototype: Vec<f64>,
    cycles: f64,
    phase: f64,
}

fn render_modality(
    cfg: &SyntheticBenchConfig,
    spec: &ModalitySpec,
    tag: u64,
    classes_patterns: &[ClassPattern],
) -> Result<Dataset> {
    let d = cfg.latent_dim;
    let c = spec.channels;
    let plane = spec.size * spec.size;
    let mut mix_rng = stream_rng(cfg.seed, &[2, tag]);
    let norm = (d as f64).sqrt();
    let mixing: Vec<f64> = (0..c * d).map(|_| normal(&mut mix_rng) / norm).collect();
    let waves: Vec<Vec<f64>> = classes_patterns
        .iter()
        .map(|cp| class_wave(spec.size, cp.cycles, cp.phase))
        .collect();

    let mut rng = stream_rng(cfg.seed, &[3, tag]);
    let mut classes: Vec<usize> = (0..spec.num_samples).map(|i| i % cfg.num_classes).collect();
    classes.shuffle(&mut rng);

    let mut data = Vec::with_capacity(spec.num_samples * c * plane);
    let mut labels = Vec::with_capacity(spec.num_samples);
    let mut latent = vec![0.0; d];
    let mut grid = vec![0.0; FIELD_GRID * FIELD_GRID];
    for &k in &classes {
        for (z, p) in latent.iter_mut().zip(&classes_patterns[k].prototype) {
            *z = p + cfg.class_spread * normal(&mut rng);
        }
        for ch in 0..c {
            let amplitude: f64 = (0..d).map(|j| mixing[ch * d + j] * latent[j]).sum();
            let offset = spec.nuisance * normal(&mut rng);
            grid.iter_mut()
                .for_each(|g| *g = spec.nuisance * normal(&mut rng));
            let field = smooth_field(&grid, spec.size);
            for p in 0..plane {
                let noise = if spec.noise > 0.0 {
                    spec.noise * normal(&mut rng)
                } else {
                    0.0
                };
                let signal = amplitude * waves[k][p];
                let v = 0.5 + RENDER_GAIN * (signal + offset + field[p] + noise);
                data.push((v as f32).clamp(VALUE_RANGE.0, VALUE_RANGE.1));
            }
        }
        let recorded = if cfg.label_noise > 0.0 && rng.random_bool(cfg.label_noise) {
            (k + rng.random_range(1..cfg.num_classes)) % cfg.num_classes
        } else {
            k
        };
        labels.push(recorded);
    }
    let images = Tensor::new(vec![spec.num_samples, c, spec.size, spec.size], data)?;
    Dataset::new(spec.name.clone(), cfg.num_classes, VALUE_RANGE, images, labels)
}

/// Generates the `(source, target)` pair.
pub fn generate_synthetic_benchmark(cfg: &SyntheticBenchConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut proto_rng = stream_rng(cfg.seed, &[1]);
    let [lo, hi] = cfg.frequency_range;
    let patterns: Vec<ClassPattern> = (0..cfg.num_classes)
        .map(|k| ClassPattern {
            prototype: (0..cfg.latent_dim).map(|_| normal(&mut proto_rng)).collect(),
            cycles: lo + (hi - lo) * k as f64 / (cfg.num_classes - 1) as f64,
            phase: proto_rng.random_range(0.0..std::f64::consts::TAU),
        })
        .collect();
    let source = render_modality(cfg, &cfg.source, 0, &patterns)?;
    let target = render_modality(cfg, &cfg.target, 1, &patterns)?;
    Ok((source, target))
}
