use super::kernels::{self, ConvGeom};
use super::{Element, Tensor};
use crate::error::{contract_err, shape_err, Result};

/// Inputs to `log` are clamped to at least this value.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Conv2d {
        x: Var,
        kernel: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    AddChannelBias(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Log(Var),
    Exp(Var),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    Max {
        x: Var,
        axis: Option<usize>,
        argmax: Vec<usize>,
    },
    Softmax(Var),
    AvgPool2d(Var, usize),
    GlobalAvgPool(Var),
    Reshape(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Var, Var),
    Gather {
        x: Var,
        indices: Vec<usize>,
    },
    Cosine {
        a: Var,
        b: Var,
        eps: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
    grad: Option<Vec<T>>,
}

/// Append-only computation tape. Node indices are a topological order, so
/// backward is a single reverse sweep.
#[derive(Debug)]
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    backward_done: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            backward_done: false,
        }
    }

    /// A graph that never tracks gradients (evaluation, pseudo-labels).
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn is_grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable input. In a no-grad graph this is a constant.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let requires_grad = self.grad_enabled;
        self.push_node(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, present once backward has reached the node.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Smallest `|x|` over the inputs of every tracked `relu`, or `None` when
    /// the graph has none. Finite differences with a step above this margin
    /// may straddle a kink.
    pub fn relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(
                    self.value(x)
                        .data()
                        .iter()
                        .map(|v| v.as_f64().abs())
                        .fold(f64::INFINITY, f64::min),
                ),
                _ => None,
            })
            .reduce(f64::min)
    }

    fn push_node(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, parents: &[Var], op: Op<T>) -> Var {
        let requires_grad =
            self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.push_node(value, requires_grad, op)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err!("{what}: operand shapes differ, {sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    fn map(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push(value, &[x], op)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op<T>, what: &str, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, &[a, b], op))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul(self.value(a), false, self.value(b), false)?;
        Ok(self.push(value, &[a, b], Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = kernels::transpose(self.value(x))?;
        Ok(self.push(value, &[x], Op::Transpose(x)))
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.value(x), self.value(kernel), stride, padding)?;
        let (value, cols) = kernels::conv2d_forward(self.value(x), self.value(kernel), &geom)?;
        Ok(self.push(
            value,
            &[x, kernel],
            Op::Conv2d {
                x,
                kernel,
                geom,
                cols,
            },
        ))
    }

    /// `x[b,c,h,w] + bias[c]` per channel.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let &[_, c, h, w] = vx.shape() else {
            return Err(shape_err!("add_channel_bias expects [b,c,h,w], got {:?}", vx.shape()));
        };
        if vb.shape() != [c] {
            return Err(shape_err!("channel bias {:?} does not match {c} channels", vb.shape()));
        }
        let mut data = vx.data().to_vec();
        for (i, plane) in data.chunks_exact_mut(h * w).enumerate() {
            let beta = vb.data()[i % c];
            plane.iter_mut().for_each(|v| *v = *v + beta);
        }
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        Ok(self.push(value, &[x, bias], Op::AddChannelBias(x, bias)))
    }

    /// `x[b,n] + bias[n]` per row.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let &[_, n] = vx.shape() else {
            return Err(shape_err!("add_row_bias expects [b,n], got {:?}", vx.shape()));
        };
        if vb.shape() != [n] {
            return Err(shape_err!("row bias {:?} does not match width {n}", vb.shape()));
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            row.iter_mut().zip(vb.data()).for_each(|(v, &b)| *v = *v + b);
        }
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        Ok(self.push(value, &[x, bias], Op::AddRowBias(x, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), "add", |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), "sub", |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), "mul", |p, q| p * q)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.map(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| v.max(T::zero()))
    }

    /// Natural log of `max(x, 1e-12)`.
    pub fn log(&mut self, x: Var) -> Var {
        let floor = T::of(LOG_FLOOR);
        self.map(x, Op::Log(x), |v| v.max(floor).ln())
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, Op::Exp(x), |v| v.exp())
    }

    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let value = kernels::reduce_sum(self.value(x), axis)?;
        Ok(self.push(value, &[x], Op::Sum(x, axis)))
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let value = kernels::reduce_mean(self.value(x), axis)?;
        Ok(self.push(value, &[x], Op::Mean(x, axis)))
    }

    /// Maximum along `axis`; the winners' positions are returned alongside.
    pub fn max(&mut self, x: Var, axis: Option<usize>) -> Result<(Var, Vec<usize>)> {
        let (value, argmax) = kernels::reduce_max(self.value(x), axis)?;
        let op = Op::Max {
            x,
            axis,
            argmax: argmax.clone(),
        };
        Ok((self.push(value, &[x], op), argmax))
    }

    /// Softmax over the last axis of a `[b,C]` tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let value = kernels::softmax_rows(self.value(x))?;
        Ok(self.push(value, &[x], Op::Softmax(x)))
    }

    pub fn avg_pool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        let value = kernels::avg_pool2d(self.value(x), size)?;
        Ok(self.push(value, &[x], Op::AvgPool2d(x, size)))
    }

    /// `[b,c,h,w] -> [b,c]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let value = kernels::global_avg_pool(self.value(x))?;
        Ok(self.push(value, &[x], Op::GlobalAvgPool(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, &[x], Op::Reshape(x)))
    }

    /// Columns `start..end` of a `[b,n]` tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let vx = self.value(x);
        let &[rows, n] = vx.shape() else {
            return Err(shape_err!("slice_cols expects [b,n], got {:?}", vx.shape()));
        };
        if start >= end || end > n {
            return Err(shape_err!("column range {start}..{end} invalid for width {n}"));
        }
        let data = vx
            .data()
            .chunks_exact(n)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        let value = Tensor::new(vec![rows, end - start], data)?;
        Ok(self.push(value, &[x], Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (&[ra, na], &[rb, nb]) = (va.shape(), vb.shape()) else {
            return Err(shape_err!("concat_cols expects two rank-2 tensors"));
        };
        if ra != rb {
            return Err(shape_err!("concat_cols row counts differ: {ra} vs {rb}"));
        }
        let mut data = Vec::with_capacity(ra * (na + nb));
        for (x, y) in va.data().chunks_exact(na).zip(vb.data().chunks_exact(nb)) {
            data.extend_from_slice(x);
            data.extend_from_slice(y);
        }
        let value = Tensor::new(vec![ra, na + nb], data)?;
        Ok(self.push(value, &[a, b], Op::ConcatCols(a, b)))
    }

    /// `out[i] = x[i, indices[i]]` for a `[b,C]` tensor.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let &[rows, cols] = vx.shape() else {
            return Err(shape_err!("gather expects [b,C], got {:?}", vx.shape()));
        };
        if indices.len() != rows {
            return Err(shape_err!("gather needs {rows} indices, got {}", indices.len()));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= cols) {
            return Err(shape_err!("gather index {bad} out of range for {cols} columns"));
        }
        let data = indices
            .iter()
            .enumerate()
            .map(|(r, &c)| vx.data()[r * cols + c])
            .collect();
        let value = Tensor::new(vec![rows], data)?;
        let op = Op::Gather {
            x,
            indices: indices.to_vec(),
        };
        Ok(self.push(value, &[x], op))
    }

    /// Row-wise cosine similarity `<a,b> / (|a| |b| + eps)` of two `[b,D]` tensors.
    pub fn cosine_rows(&mut self, a: Var, b: Var, eps: T) -> Result<Var> {
        let value = kernels::cosine_rows(self.value(a), self.value(b), eps)?;
        Ok(self.push(value, &[a, b], Op::Cosine { a, b, eps }))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of every node that
    /// requires them and is reachable from `loss` are populated.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(contract_err!("backward already ran on this graph"));
        }
        if self.value(loss).numel() != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[i].grad.as_deref() else {
                continue;
            };
            let contributions = self.local_grads(i, grad);
            for (parent, g) in contributions {
                self.accumulate(parent, g);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Vec<T>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match node.grad.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b),
            None => node.grad = Some(g),
        }
    }

    fn local_grads(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let scaled = |c: T| g.iter().map(|&x| x * c).collect::<Vec<_>>();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                let mut out = Vec::new();
                if wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    kernels::gemm(m, n, k, g, false, vb.data(), true, &mut da, T::zero());
                    out.push((*a, da));
                }
                if wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    kernels::gemm(k, m, n, va.data(), true, g, false, &mut db, T::zero());
                    out.push((*b, db));
                }
                out
            }
            Op::Transpose(x) => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                let gt = Tensor::new(vec![r, c], g.to_vec()).expect("grad shape");
                vec![(*x, kernels::transpose(&gt).expect("rank 2").into_data())]
            }
            Op::Conv2d {
                x,
                kernel,
                geom,
                cols,
            } => {
                let (dx, dk) =
                    kernels::conv2d_backward(g, val(*kernel), cols, geom, wants(*x), wants(*kernel));
                let mut out = Vec::new();
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                if let Some(dk) = dk {
                    out.push((*kernel, dk));
                }
                out
            }
            Op::AddChannelBias(x, bias) => {
                let shape = node.value.shape();
                let (c, plane) = (shape[1], shape[2] * shape[3]);
                let mut db = vec![T::zero(); c];
                for (idx, chunk) in g.chunks_exact(plane).enumerate() {
                    db[idx % c] = db[idx % c] + chunk.iter().copied().sum::<T>();
                }
                vec![(*x, g.to_vec()), (*bias, db)]
            }
            Op::AddRowBias(x, bias) => {
                let n = node.value.shape()[1];
                let mut db = vec![T::zero(); n];
                for row in g.chunks_exact(n) {
                    db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
                }
                vec![(*x, g.to_vec()), (*bias, db)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, scaled(-T::one()))],
            Op::Mul(a, b) => {
                let da = g.iter().zip(val(*b).data()).map(|(&x, &y)| x * y).collect();
                let db = g.iter().zip(val(*a).data()).map(|(&x, &y)| x * y).collect();
                vec![(*a, da), (*b, db)]
            }
            Op::Scale(x, c) => vec![(*x, scaled(*c))],
            Op::Relu(x) => {
                let dx = g
                    .iter()
                    .zip(val(*x).data())
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                vec![(*x, dx)]
            }
            Op::Log(x) => {
                let floor = T::of(LOG_FLOOR);
                let dx = g
                    .iter()
                    .zip(val(*x).data())
                    .map(|(&gv, &xv)| if xv > floor { gv / xv } else { T::zero() })
                    .collect();
                vec![(*x, dx)]
            }
            Op::Exp(x) => {
                let dx = g.iter().zip(node.value.data()).map(|(&gv, &y)| gv * y).collect();
                vec![(*x, dx)]
            }
            Op::Sum(x, axis) => {
                vec![(*x, kernels::expand_reduced(g, val(*x).shape(), *axis, T::one()))]
            }
            Op::Mean(x, axis) => {
                let shape = val(*x).shape();
                let len = match axis {
                    Some(a) => shape[*a],
                    None => shape.iter().product(),
                };
                let scale = T::of(1.0 / len as f64);
                vec![(*x, kernels::expand_reduced(g, shape, *axis, scale))]
            }
            Op::Max { x, axis, argmax } => {
                vec![(*x, kernels::scatter_max(g, val(*x).shape(), *axis, argmax))]
            }
            Op::Softmax(x) => {
                let cols = node.value.shape()[1];
                vec![(*x, kernels::softmax_rows_backward(node.value.data(), g, cols))]
            }
            Op::AvgPool2d(x, size) => {
                vec![(*x, kernels::avg_pool2d_backward(g, val(*x).shape(), *size))]
            }
            Op::GlobalAvgPool(x) => {
                let shape = val(*x).shape();
                let plane = shape[2] * shape[3];
                let norm = T::of(1.0 / plane as f64);
                let dx = g
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv * norm, plane))
                    .collect();
                vec![(*x, dx)]
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::SliceCols { x, start } => {
                let n = val(*x).shape()[1];
                let width = node.value.shape()[1];
                let mut dx = vec![T::zero(); val(*x).numel()];
                for (drow, grow) in dx.chunks_exact_mut(n).zip(g.chunks_exact(width)) {
                    drow[*start..*start + width].copy_from_slice(grow);
                }
                vec![(*x, dx)]
            }
            Op::ConcatCols(a, b) => {
                let (na, nb) = (val(*a).shape()[1], val(*b).shape()[1]);
                let mut da = Vec::with_capacity(val(*a).numel());
                let mut db = Vec::with_capacity(val(*b).numel());
                for row in g.chunks_exact(na + nb) {
                    da.extend_from_slice(&row[..na]);
                    db.extend_from_slice(&row[na..]);
                }
                vec![(*a, da), (*b, db)]
            }
            Op::Gather { x, indices } => {
                let cols = val(*x).shape()[1];
                let mut dx = vec![T::zero(); val(*x).numel()];
                for (r, (&c, &gv)) in indices.iter().zip(g).enumerate() {
                    dx[r * cols + c] = gv;
                }
                vec![(*x, dx)]
            }
            Op::Cosine { a, b, eps } => {
                let (da, db) = kernels::cosine_rows_backward(val(*a), val(*b), *eps, g);
                vec![(*a, da), (*b, db)]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_slice(shape, data).unwrap()
    }

    #[test]
    fn matmul_values() {
        let mut g = Graph::<f64>::new();
        let eye = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = g.matmul(eye, m).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
        let r = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let c = g.constant(t(&[2, 1], &[3.0, 4.0]));
        let p = g.matmul(r, c).unwrap();
        assert_eq!(g.value(p).data(), &[11.0]);
        assert!(g.matmul(r, r).is_err());
    }

    #[test]
    fn elementwise_values() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let a = g.constant(t(&[2], &[1.0, 2.0]));
        let b = g.constant(t(&[2], &[3.0, 4.0]));
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s).data(), &[4.0, 6.0]);
        let v = g.constant(t(&[2], &[0.3, -0.7]));
        let e = g.exp(v);
        let l = g.log(e);
        assert!(g.value(l).max_abs_diff(&t(&[2], &[0.3, -0.7])) < 1e-6);
        assert!(g.add(a, x).is_err());
    }

    #[test]
    fn conv_identity_and_sum() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
        let k = g.constant(t(&[1, 1, 1, 1], &[1.0]));
        let y = g.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let ones = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let y = g.conv2d(ones, ones, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[4.0]);
        let big = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        assert!(g.conv2d(ones, big, 1, 0).is_err());
    }

    #[test]
    fn scalar_backward_rules() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let y = g.scale(x, 3.0);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[3.0]);

        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(5.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[10.0]);
    }

    #[test]
    fn reused_tensor_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[3], &[1.0, -2.0, 0.5]));
        let y = g.add(x, x).unwrap();
        let s = g.sum(y, None).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_contract() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]));
        assert!(g.backward(x).is_err());
        let s = g.sum(x, None).unwrap();
        g.backward(s).unwrap();
        assert!(g.backward(s).is_err());
    }

    #[test]
    fn constants_never_accumulate() {
        let mut g = Graph::<f64>::new();
        let w = g.leaf(t(&[2], &[1.0, 2.0]));
        let c = g.constant(t(&[2], &[3.0, 4.0]));
        let p = g.mul(w, c).unwrap();
        let s = g.sum(p, None).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[3.0, 4.0]);
        assert!(g.grad(c).is_none());
        assert!(!g.requires_grad(c));
    }

    #[test]
    fn no_grad_graph_tracks_nothing() {
        let mut g = Graph::<f64>::no_grad();
        let w = g.leaf(t(&[2], &[1.0, 2.0]));
        let s = g.sum(w, None).unwrap();
        assert!(!g.requires_grad(s));
        g.backward(s).unwrap();
        assert!(g.grad(w).is_none());
    }

    #[test]
    fn split_concat_roundtrip() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(t(&[2, 4], &[1., 2., 3., 4., 5., 6., 7., 8.]));
        let lo = g.slice_cols(z, 0, 2).unwrap();
        let hi = g.slice_cols(z, 2, 4).unwrap();
        assert_eq!(g.value(lo).data(), &[1., 2., 5., 6.]);
        let back = g.concat_cols(lo, hi).unwrap();
        assert_eq!(g.value(back), g.value(z));
    }
}
