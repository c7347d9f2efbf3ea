use super::Tensor;
use crate::error::{contract_err, Result};

/// Central finite differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// element of `x`, evaluated in 64-bit.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor<f64>, step: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(contract_err!("finite difference step must be positive, got {step}"));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + step;
        let up = f(&probe)?;
        probe.data_mut()[i] = original - step;
        let down = f(&probe)?;
        probe.data_mut()[i] = original;
        grad.push((up - down) / (2.0 * step));
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// Largest elementwise `|a - b| / max(|a|, |b|, floor)`.
///
/// `floor` keeps near-zero entries from dominating: below it the comparison
/// degrades to an absolute error scaled by `1/floor`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error length mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
