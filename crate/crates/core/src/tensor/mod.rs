//! Dense row-major tensors and a tape-based reverse-mode autodiff graph.
//!
//! [`Tensor`] is a plain value: a shape and a flat buffer. Gradient tracking
//! lives in [`Graph`], which records every operation applied to its [`Var`]
//! handles and replays them in reverse on [`Graph::backward`].
//!
//! Everything is generic over [`Element`] so the same forward code can be
//! evaluated in `f64` by finite-difference oracles while training runs in
//! `f32`.

mod element;
mod gradcheck;
mod graph;
pub(crate) mod kernels;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract_err, shape_err, Result};

pub use element::Element;
pub use gradcheck::{finite_diff_grad, relative_error};
pub use graph::{Graph, Var};

/// Initialisation scheme for [`Tensor::create`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform in `[lo, hi)` from a seeded generator.
    Uniform { lo: f64, hi: f64, seed: u64 },
    /// Uniform in `[-sqrt(6/fan_in), sqrt(6/fan_in)]`.
    Kaiming { fan_in: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_extents(shape: &[usize]) -> Result<usize> {
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(shape_err!("extent of axis {axis} is zero in {shape:?}"));
    }
    Ok(shape.iter().product())
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel = check_extents(&shape)?;
        if numel != data.len() {
            return Err(shape_err!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn create(shape: &[usize], init: Init) -> Result<Self> {
        let numel = check_extents(shape)?;
        let data = match init {
            Init::Zeros => vec![T::zero(); numel],
            Init::Constant(c) => vec![T::of(c); numel],
            Init::Uniform { lo, hi, seed } => {
                if !(lo < hi) {
                    return Err(contract_err!("uniform init needs lo < hi, got [{lo}, {hi})"));
                }
                uniform_fill(numel, lo, hi, seed)
            }
            Init::Kaiming { fan_in, seed } => {
                if fan_in == 0 {
                    return Err(contract_err!("kaiming init needs fan_in >= 1"));
                }
                let bound = (6.0 / fan_in as f64).sqrt();
                uniform_fill(numel, -bound, bound, seed)
            }
        };
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Shape-checked constructors for the common cases; these panic only on a
    /// zero extent, which is always a programming error at the call sites.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::create(shape, Init::Zeros).expect("zero extent")
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = check_extents(shape).expect("zero extent");
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// A rank-0 tensor holding one value.
    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_slice(shape: &[usize], data: &[T]) -> Result<Self> {
        Self::new(shape.to_vec(), data.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(shape_err!("item() on tensor of shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    /// Reduction with `sum`.
    pub fn sum(&self, axis: Option<usize>) -> Result<Self> {
        kernels::reduce_sum(self, axis)
    }

    pub fn mean(&self, axis: Option<usize>) -> Result<Self> {
        kernels::reduce_mean(self, axis)
    }

    /// Maximum values together with the flat position along `axis` of each
    /// winner. Ties resolve to the lowest index.
    pub fn max(&self, axis: Option<usize>) -> Result<(Self, Vec<usize>)> {
        kernels::reduce_max(self, axis)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        kernels::matmul(self, false, other, false)
    }

    /// Per-row argmax of a rank-2 tensor.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        if self.rank() != 2 {
            return Err(shape_err!("argmax_rows expects rank 2, got {:?}", self.shape));
        }
        Ok(self.max(Some(1))?.1)
    }

    /// Gathers samples `indices` along axis 0 into a new batch.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if self.rank() == 0 || indices.is_empty() {
            return Err(shape_err!("select_rows needs rank >= 1 and a nonempty selection"));
        }
        let stride = self.numel() / self.shape[0];
        let mut data = Vec::with_capacity(stride * indices.len());
        for &i in indices {
            if i >= self.shape[0] {
                return Err(shape_err!("row {i} out of range for {:?}", self.shape));
            }
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self::new(shape, data)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on differing shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

fn uniform_fill<T: Element>(numel: usize, lo: f64, hi: f64, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..numel)
        .map(|_| T::of(lo + (hi - lo) * rng.random::<f64>()))
        .collect()
}
