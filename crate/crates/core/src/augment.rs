//! Strong augmentation for unlabelled target samples: horizontal flip,
//! vertical flip, rotation by a multiple of 90 degrees and colour jitter, each
//! applied independently with probability `p`. The weak view is the identity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    pub rotate: bool,
    pub color_jitter: bool,
    /// Occurrence probability of each transform.
    pub probability: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Maximum hue shift as a fraction of the full hue circle.
    pub hue: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip: true,
            vflip: true,
            rotate: true,
            color_jitter: true,
            probability: 0.5,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config(format!(
                "augment.probability must lie in [0,1], got {}",
                self.probability
            )));
        }
        for (name, v) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("augment.{name} must lie in [0,1], got {v}")));
            }
        }
        if !(0.0..=0.5).contains(&self.hue) {
            return Err(Error::Config(format!("augment.hue must lie in [0,0.5], got {}", self.hue)));
        }
        Ok(())
    }

    /// Every transform disabled.
    pub fn identity() -> Self {
        Self {
            hflip: false,
            vflip: false,
            rotate: false,
            color_jitter: false,
            ..Self::default()
        }
    }
}

/// Jitter factors drawn for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterFactors {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    /// Hue rotation as a fraction of the full circle.
    pub hue: f32,
}

impl JitterFactors {
    pub const NEUTRAL: JitterFactors = JitterFactors {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue: 0.0,
    };
}

/// Realised random choices for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPlan {
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise quarter turns.
    pub quarter_turns: u8,
    pub jitter: Option<JitterFactors>,
}

impl AugmentPlan {
    pub const IDENTITY: AugmentPlan = AugmentPlan {
        hflip: false,
        vflip: false,
        quarter_turns: 0,
        jitter: None,
    };

    /// Draws the four coin flips (and their parameters) in a fixed order.
    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let p = cfg.probability;
        let hflip = cfg.hflip && rng.random_bool(p);
        let vflip = cfg.vflip && rng.random_bool(p);
        let quarter_turns = if cfg.rotate && rng.random_bool(p) {
            rng.random_range(0..4u8)
        } else {
            0
        };
        let jitter = (cfg.color_jitter && rng.random_bool(p)).then(|| {
            let mut around_one = |r: f64| {
                if r > 0.0 {
                    rng.random_range(1.0 - r..=1.0 + r) as f32
                } else {
                    1.0
                }
            };
            let brightness = around_one(cfg.brightness);
            let contrast = around_one(cfg.contrast);
            let saturation = around_one(cfg.saturation);
            let hue = if cfg.hue > 0.0 {
                rng.random_range(-cfg.hue..=cfg.hue) as f32
            } else {
                0.0
            };
            JitterFactors {
                brightness,
                contrast,
                saturation,
                hue,
            }
        });
        Self {
            hflip,
            vflip,
            quarter_turns,
            jitter,
        }
    }

    /// Applies the plan to one `[c,h,w]` image whose values live in `range`.
    pub fn apply(&self, x: &Tensor<f32>, range: (f32, f32)) -> Result<Tensor<f32>> {
        let mut out = x.clone();
        if self.hflip {
            out = hflip(&out)?;
        }
        if self.vflip {
            out = vflip(&out)?;
        }
        if self.quarter_turns > 0 {
            out = rot90k(&out, self.quarter_turns as usize)?;
        }
        if let Some(f) = self.jitter {
            out = color_jitter(&out, f, range)?;
        }
        Ok(out)
    }
}

fn chw(x: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match x.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::Geometry(format!("augmentation expects [c,h,w], got {s:?}"))),
    }
}

fn remap(x: &Tensor<f32>, index: impl Fn(usize, usize) -> (usize, usize)) -> Result<Tensor<f32>> {
    let (c, h, w) = chw(x)?;
    let src = x.data();
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let (sy, sx) = index(y, xx);
                out.push(plane[sy * w + sx]);
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

pub fn hflip(x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (_, _, w) = chw(x)?;
    remap(x, |y, xx| (y, w - 1 - xx))
}

pub fn vflip(x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (_, h, _) = chw(x)?;
    remap(x, |y, xx| (h - 1 - y, xx))
}

/// Counter-clockwise rotation by `k` quarter turns of a square image.
pub fn rot90k(x: &Tensor<f32>, k: usize) -> Result<Tensor<f32>> {
    let (_, h, w) = chw(x)?;
    if h != w {
        return Err(Error::Geometry(format!("rotation needs a square image, got {h}x{w}")));
    }
    let n = h;
    let mut out = x.clone();
    for _ in 0..k % 4 {
        out = remap(&out, |y, xx| (xx, n - 1 - y))?;
    }
    Ok(out)
}

/// Brightness, contrast, then (3-channel only) saturation and hue, clamping
/// to `range` after each step.
pub fn color_jitter(x: &Tensor<f32>, f: JitterFactors, range: (f32, f32)) -> Result<Tensor<f32>> {
    let (c, h, w) = chw(x)?;
    let (lo, hi) = range;
    let clamp = |v: f32| v.clamp(lo, hi);
    let plane = h * w;
    let mut data = x.data().to_vec();
    if f.brightness != 1.0 {
        data.iter_mut().for_each(|v| *v = clamp(*v * f.brightness));
    }
    if f.contrast != 1.0 {
        for ch in data.chunks_exact_mut(plane) {
            let mean = ch.iter().map(|&v| v as f64).sum::<f64>() as f32 / plane as f32;
            ch.iter_mut().for_each(|v| *v = clamp(mean + (*v - mean) * f.contrast));
        }
    }
    if c == 3 && f.saturation != 1.0 {
        for p in 0..plane {
            let gray = 0.299 * data[p] + 0.587 * data[plane + p] + 0.114 * data[2 * plane + p];
            for ch in 0..3 {
                let v = &mut data[ch * plane + p];
                *v = clamp(gray + (*v - gray) * f.saturation);
            }
        }
    }
    if c == 3 && f.hue != 0.0 {
        let m = hue_rotation(f.hue);
        for p in 0..plane {
            let rgb = [data[p], data[plane + p], data[2 * plane + p]];
            for (ch, row) in m.iter().enumerate() {
                data[ch * plane + p] = clamp(row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2]);
            }
        }
    }
    Tensor::new(vec![c, h, w], data)
}

/// RGB mixing matrix that rotates chroma in YIQ space by `turns * 2 pi`.
fn hue_rotation(turns: f32) -> [[f32; 3]; 3] {
    const TO_YIQ: [[f64; 3]; 3] = [
        [0.299, 0.587, 0.114],
        [0.595_716, -0.274_453, -0.321_263],
        [0.211_456, -0.522_591, 0.311_135],
    ];
    const FROM_YIQ: [[f64; 3]; 3] = [
        [1.0, 0.956_3, 0.621_0],
        [1.0, -0.272_1, -0.647_4],
        [1.0, -1.107_0, 1.704_6],
    ];
    let theta = turns as f64 * std::f64::consts::TAU;
    let (s, c) = theta.sin_cos();
    let rot = [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]];
    let mul = |a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]| {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        out
    };
    let m = mul(&FROM_YIQ, &mul(&rot, &TO_YIQ));
    m.map(|row| row.map(|v| v as f32))
}

/// Samples a plan and applies it to one `[c,h,w]` image.
pub fn augment<R: Rng + ?Sized>(
    x: &Tensor<f32>,
    cfg: &AugmentConfig,
    range: (f32, f32),
    rng: &mut R,
) -> Result<Tensor<f32>> {
    let (_, h, w) = chw(x)?;
    if cfg.rotate && h != w {
        return Err(Error::Geometry(format!(
            "rotation is enabled but the image is {h}x{w}"
        )));
    }
    AugmentPlan::sample(cfg, rng).apply(x, range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(h: usize, w: usize, data: &[f32]) -> Tensor<f32> {
        Tensor::from_slice(&[1, h, w], data).unwrap()
    }

    #[test]
    fn flips_and_rotation_on_2x2() {
        let x = img(2, 2, &[1., 2., 3., 4.]);
        assert_eq!(hflip(&x).unwrap().data(), &[2., 1., 4., 3.]);
        assert_eq!(vflip(&x).unwrap().data(), &[3., 4., 1., 2.]);
        assert_eq!(rot90k(&x, 1).unwrap().data(), &[2., 4., 1., 3.]);
        assert_eq!(rot90k(&x, 0).unwrap(), x);
    }

    #[test]
    fn rot90_matches_permutation_table() {
        // out[y][x] = in[x][n-1-y] for a counter-clockwise quarter turn.
        let table = [(0usize, 1usize), (1, 1), (0, 0), (1, 0)];
        let x = img(2, 2, &[1., 2., 3., 4.]);
        let r = rot90k(&x, 1).unwrap();
        for (i, &(sy, sx)) in table.iter().enumerate() {
            assert_eq!(r.data()[i], x.data()[sy * 2 + sx]);
        }
    }

    #[test]
    fn group_identities() {
        let x = Tensor::from_slice(&[2, 3, 3], &(0..18).map(|v| v as f32).collect::<Vec<_>>())
            .unwrap();
        assert_eq!(hflip(&hflip(&x).unwrap()).unwrap(), x);
        assert_eq!(vflip(&vflip(&x).unwrap()).unwrap(), x);
        assert_eq!(rot90k(&x, 4).unwrap(), x);
    }

    #[test]
    fn non_square_rotation_rejected() {
        let x = img(2, 3, &[0.; 6]);
        assert!(rot90k(&x, 1).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(augment(&x, &AugmentConfig::default(), (0.0, 1.0), &mut rng).is_err());
        let cfg = AugmentConfig {
            rotate: false,
            ..AugmentConfig::default()
        };
        assert!(augment(&x, &cfg, (0.0, 1.0), &mut rng).is_ok());
    }

    #[test]
    fn jitter_cases() {
        let x = img(1, 2, &[0.1, 0.2]);
        let same = color_jitter(&x, JitterFactors::NEUTRAL, (0.0, 1.0)).unwrap();
        assert_eq!(same, x);
        let bright = JitterFactors {
            brightness: 2.0,
            ..JitterFactors::NEUTRAL
        };
        let y = color_jitter(&x, bright, (0.0, 1.0)).unwrap();
        assert!(y.max_abs_diff(&img(1, 2, &[0.2, 0.4])) < 1e-7);
        let flat = JitterFactors {
            contrast: 0.0,
            ..JitterFactors::NEUTRAL
        };
        let y = color_jitter(&x, flat, (0.0, 1.0)).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.15).abs() < 1e-7));
    }

    #[test]
    fn hue_rotation_keeps_gray() {
        let gray = Tensor::full(&[3, 2, 2], 0.4f32);
        let f = JitterFactors {
            hue: 0.1,
            saturation: 1.3,
            ..JitterFactors::NEUTRAL
        };
        let y = color_jitter(&gray, f, (0.0, 1.0)).unwrap();
        assert!(y.max_abs_diff(&gray) < 1e-3);
    }

    #[test]
    fn all_coins_skip_is_identity() {
        let cfg = AugmentConfig {
            probability: 0.0,
            ..AugmentConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_slice(&[2, 2, 2], &[0.1, 0.5, 0.3, 0.9, 0.2, 0.4, 0.6, 0.8]).unwrap();
        assert_eq!(augment(&x, &cfg, (0.0, 1.0), &mut rng).unwrap(), x);
        assert_eq!(AugmentPlan::IDENTITY.apply(&x, (0.0, 1.0)).unwrap(), x);
    }
}
