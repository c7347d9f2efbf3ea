//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod gradients;
pub mod oracles;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use shedd::tensor::Tensor;

/// `Ok(detail)` when a check passes, `Err(detail)` otherwise.
pub type Verdict = Result<String, String>;

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Values with magnitude in `[lo, hi)` and random sign.
pub fn signed_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let mut t = uniform(rng, shape, lo, hi);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// A random permutation of `0.1 * (0..n)`, shifted to be centred; entries
/// differ pairwise by at least 0.1.
pub fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| 0.1 * i as f64 - 0.05 * n as f64).collect();
    data.shuffle(rng);
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Random rows on the probability simplex.
pub fn simplex_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..cols).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| v / s));
    }
    Tensor::new(vec![rows, cols], data).unwrap()
}
