//! Forward and backward kernels on raw tensors. No graph bookkeeping here.

use super::{Element, Tensor};
use crate::error::{shape_err, Result};

/// `c = op(a) * op(b) + beta * c`, where `op` optionally transposes a
/// row-major operand. `a` is `m x k` after `op`, `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_transposed: bool,
    b: &[T],
    b_transposed: bool,
    c: &mut [T],
    beta: T,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    // SAFETY: extents were checked against the slice lengths above and the
    // strides address exactly the row-major layouts they describe.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn dims2<T: Element>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(shape_err!("{what} expects a rank-2 tensor, got {s:?}")),
    }
}

pub(crate) fn matmul<T: Element>(
    a: &Tensor<T>,
    a_transposed: bool,
    b: &Tensor<T>,
    b_transposed: bool,
) -> Result<Tensor<T>> {
    let (ar, ac) = dims2(a, "matmul")?;
    let (br, bc) = dims2(b, "matmul")?;
    let (m, k) = if a_transposed { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if b_transposed { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(shape_err!(
            "matmul inner extents differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let mut out = vec![T::zero(); m * n];
    gemm(m, k, n, a.data(), a_transposed, b.data(), b_transposed, &mut out, T::zero());
    Tensor::new(vec![m, n], out)
}

pub(crate) fn transpose<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = dims2(x, "transpose")?;
    let src = x.data();
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out)
}

/// Geometry of one convolution call.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new<T: Element>(
        x: &Tensor<T>,
        kernel: &Tensor<T>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let &[batch, c_in, h, w] = x.shape() else {
            return Err(shape_err!("conv2d input must be [b,c,h,w], got {:?}", x.shape()));
        };
        let &[c_out, kc, kh, kw] = kernel.shape() else {
            return Err(shape_err!(
                "conv2d kernel must be [c_out,c_in,kh,kw], got {:?}",
                kernel.shape()
            ));
        };
        if kc != c_in {
            return Err(shape_err!("conv2d kernel expects {kc} input channels, input has {c_in}"));
        }
        if stride == 0 {
            return Err(shape_err!("conv2d stride must be positive"));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(shape_err!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            ));
        }
        Ok(Self {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            padding,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (w + 2 * padding - kw) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    /// Source pixel for kernel tap `(ky,kx)` at output `(oy,ox)`, if inside.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky).checked_sub(self.padding)?;
        let ix = (ox * self.stride + kx).checked_sub(self.padding)?;
        (iy < self.h && ix < self.w).then_some((iy, ix))
    }

    fn im2col<T: Element>(&self, image: &[T], cols: &mut [T]) {
        let plane = self.out_plane();
        for c in 0..self.c_in {
            let channel = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * plane;
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            cols[row + oy * self.ow + ox] = match self.source(oy, ox, ky, kx) {
                                Some((iy, ix)) => channel[iy * self.w + ix],
                                None => T::zero(),
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Element>(&self, cols: &[T], image: &mut [T]) {
        let plane = self.out_plane();
        for c in 0..self.c_in {
            let base = c * self.h * self.w;
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * plane;
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            if let Some((iy, ix)) = self.source(oy, ox, ky, kx) {
                                image[base + iy * self.w + ix] =
                                    image[base + iy * self.w + ix] + cols[row + oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation via im2col + gemm. Returns the output and the unfolded
/// patches (needed by the kernel gradient).
pub(crate) fn conv2d_forward<T: Element>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    geom: &ConvGeom,
) -> Result<(Tensor<T>, Vec<T>)> {
    let patch = geom.patch();
    let plane = geom.out_plane();
    let mut cols = vec![T::zero(); geom.batch * patch * plane];
    let mut out = vec![T::zero(); geom.batch * geom.c_out * plane];
    for n in 0..geom.batch {
        let image = &x.data()[n * geom.in_len()..(n + 1) * geom.in_len()];
        let cols_n = &mut cols[n * patch * plane..(n + 1) * patch * plane];
        geom.im2col(image, cols_n);
        let out_n = &mut out[n * geom.c_out * plane..(n + 1) * geom.c_out * plane];
        gemm(geom.c_out, patch, plane, kernel.data(), false, cols_n, false, out_n, T::zero());
    }
    let out = Tensor::new(vec![geom.batch, geom.c_out, geom.oh, geom.ow], out)?;
    Ok((out, cols))
}

/// Gradients with respect to input and kernel.
pub(crate) fn conv2d_backward<T: Element>(
    grad_out: &[T],
    kernel: &Tensor<T>,
    cols: &[T],
    geom: &ConvGeom,
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let patch = geom.patch();
    let plane = geom.out_plane();
    let mut dx = want_input.then(|| vec![T::zero(); geom.batch * geom.in_len()]);
    let mut dk = want_kernel.then(|| vec![T::zero(); kernel.numel()]);
    let mut dcols = vec![T::zero(); patch * plane];
    for n in 0..geom.batch {
        let g = &grad_out[n * geom.c_out * plane..(n + 1) * geom.c_out * plane];
        if let Some(dk) = dk.as_mut() {
            let cols_n = &cols[n * patch * plane..(n + 1) * patch * plane];
            gemm(geom.c_out, plane, patch, g, false, cols_n, true, dk, T::one());
        }
        if let Some(dx) = dx.as_mut() {
            gemm(patch, geom.c_out, plane, kernel.data(), true, g, false, &mut dcols, T::zero());
            geom.col2im_add(&dcols, &mut dx[n * geom.in_len()..(n + 1) * geom.in_len()]);
        }
    }
    (dx, dk)
}

/// Non-overlapping `size x size` average pooling; trailing rows/cols that do
/// not fill a window are dropped.
pub(crate) fn avg_pool2d<T: Element>(x: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let &[b, c, h, w] = x.shape() else {
        return Err(shape_err!("avg_pool2d expects [b,c,h,w], got {:?}", x.shape()));
    };
    if size == 0 || h < size || w < size {
        return Err(shape_err!("avg_pool2d window {size} does not fit {h}x{w}"));
    }
    let (oh, ow) = (h / size, w / size);
    let norm = T::of(1.0 / (size * size) as f64);
    let src = x.data();
    let mut out = vec![T::zero(); b * c * oh * ow];
    for plane in 0..b * c {
        let input = &src[plane * h * w..(plane + 1) * h * w];
        let output = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for dy in 0..size {
                    for dx in 0..size {
                        acc = acc + input[(oy * size + dy) * w + ox * size + dx];
                    }
                }
                output[oy * ow + ox] = acc * norm;
            }
        }
    }
    Tensor::new(vec![b, c, oh, ow], out)
}

pub(crate) fn avg_pool2d_backward<T: Element>(
    grad_out: &[T],
    in_shape: &[usize],
    size: usize,
) -> Vec<T> {
    let (b, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (oh, ow) = (h / size, w / size);
    let norm = T::of(1.0 / (size * size) as f64);
    let mut dx = vec![T::zero(); b * c * h * w];
    for plane in 0..b * c {
        let g = &grad_out[plane * oh * ow..(plane + 1) * oh * ow];
        let d = &mut dx[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let share = g[oy * ow + ox] * norm;
                for dy in 0..size {
                    for dx_ in 0..size {
                        d[(oy * size + dy) * w + ox * size + dx_] = share;
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn global_avg_pool<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let &[b, c, h, w] = x.shape() else {
        return Err(shape_err!("global_avg_pool expects [b,c,h,w], got {:?}", x.shape()));
    };
    let norm = T::of(1.0 / (h * w) as f64);
    let out = x
        .data()
        .chunks_exact(h * w)
        .map(|plane| plane.iter().copied().sum::<T>() * norm)
        .collect();
    Tensor::new(vec![b, c], out)
}

/// Splits `shape` around `axis` into `(outer, len, inner)` and the reduced shape.
fn axis_split(shape: &[usize], axis: Option<usize>) -> Result<(usize, usize, usize, Vec<usize>)> {
    match axis {
        None => Ok((1, shape.iter().product(), 1, Vec::new())),
        Some(a) if a < shape.len() => {
            let outer = shape[..a].iter().product();
            let inner = shape[a + 1..].iter().product();
            let mut reduced = shape.to_vec();
            reduced.remove(a);
            Ok((outer, shape[a], inner, reduced))
        }
        Some(a) => Err(shape_err!("axis {a} out of range for shape {shape:?}")),
    }
}

pub(crate) fn reduce_sum<T: Element>(x: &Tensor<T>, axis: Option<usize>) -> Result<Tensor<T>> {
    let (outer, len, inner, shape) = axis_split(x.shape(), axis)?;
    let src = x.data();
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for l in 0..len {
            let row = &src[(o * len + l) * inner..(o * len + l + 1) * inner];
            for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
    }
    Tensor::new(shape, out)
}

pub(crate) fn reduce_mean<T: Element>(x: &Tensor<T>, axis: Option<usize>) -> Result<Tensor<T>> {
    let (_, len, _, _) = axis_split(x.shape(), axis)?;
    let mut out = reduce_sum(x, axis)?;
    let norm = T::of(1.0 / len as f64);
    out.data_mut().iter_mut().for_each(|v| *v = *v * norm);
    Ok(out)
}

pub(crate) fn reduce_max<T: Element>(
    x: &Tensor<T>,
    axis: Option<usize>,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (outer, len, inner, shape) = axis_split(x.shape(), axis)?;
    let src = x.data();
    let mut out = Vec::with_capacity(outer * inner);
    let mut arg = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let mut best = 0;
            for l in 1..len {
                if src[(o * len + l) * inner + i] > src[(o * len + best) * inner + i] {
                    best = l;
                }
            }
            out.push(src[(o * len + best) * inner + i]);
            arg.push(best);
        }
    }
    Ok((Tensor::new(shape, out)?, arg))
}

/// Broadcasts a reduced gradient back over `axis` (sum rule scaled by `scale`).
pub(crate) fn expand_reduced<T: Element>(
    grad: &[T],
    in_shape: &[usize],
    axis: Option<usize>,
    scale: T,
) -> Vec<T> {
    let (outer, len, inner, _) = axis_split(in_shape, axis).expect("validated in forward");
    let mut dx = vec![T::zero(); outer * len * inner];
    for o in 0..outer {
        for l in 0..len {
            for i in 0..inner {
                dx[(o * len + l) * inner + i] = grad[o * inner + i] * scale;
            }
        }
    }
    dx
}

pub(crate) fn scatter_max<T: Element>(
    grad: &[T],
    in_shape: &[usize],
    axis: Option<usize>,
    argmax: &[usize],
) -> Vec<T> {
    let (outer, len, inner, _) = axis_split(in_shape, axis).expect("validated in forward");
    let mut dx = vec![T::zero(); outer * len * inner];
    for o in 0..outer {
        for i in 0..inner {
            let l = argmax[o * inner + i];
            dx[(o * len + l) * inner + i] = grad[o * inner + i];
        }
    }
    dx
}

pub(crate) fn softmax_rows<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, cols) = dims2(x, "softmax")?;
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(cols) {
        let peak = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - peak).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn softmax_rows_backward<T: Element>(probs: &[T], grad: &[T], cols: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); probs.len()];
    for ((p, g), d) in probs
        .chunks_exact(cols)
        .zip(grad.chunks_exact(cols))
        .zip(dx.chunks_exact_mut(cols))
    {
        let dot: T = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
        for j in 0..cols {
            d[j] = p[j] * (g[j] - dot);
        }
    }
    dx
}

/// Row-wise `<a,b> / (|a| |b| + eps)`.
pub(crate) fn cosine_rows<T: Element>(a: &Tensor<T>, b: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let (rows, cols) = dims2(a, "cosine")?;
    if a.shape() != b.shape() {
        return Err(shape_err!("cosine operands differ: {:?} vs {:?}", a.shape(), b.shape()));
    }
    let out = (0..rows)
        .map(|i| {
            let (x, y) = (&a.data()[i * cols..(i + 1) * cols], &b.data()[i * cols..(i + 1) * cols]);
            let (dot, na, nb) = row_stats(x, y);
            dot / (na * nb + eps)
        })
        .collect();
    Tensor::new(vec![rows], out)
}

fn row_stats<T: Element>(x: &[T], y: &[T]) -> (T, T, T) {
    let dot: T = x.iter().zip(y).map(|(&p, &q)| p * q).sum();
    let na = x.iter().map(|&p| p * p).sum::<T>().sqrt();
    let nb = y.iter().map(|&q| q * q).sum::<T>().sqrt();
    (dot, na, nb)
}

pub(crate) fn cosine_rows_backward<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    eps: T,
    grad: &[T],
) -> (Vec<T>, Vec<T>) {
    let cols = a.shape()[1];
    let mut da = vec![T::zero(); a.numel()];
    let mut db = vec![T::zero(); b.numel()];
    for (i, &g) in grad.iter().enumerate() {
        let span = i * cols..(i + 1) * cols;
        let (x, y) = (&a.data()[span.clone()], &b.data()[span.clone()]);
        let (dot, na, nb) = row_stats(x, y);
        let den = na * nb + eps;
        // d/dx of na is x/na; zero-norm rows contribute no direction.
        let ka = if na > T::zero() { dot * nb / (na * den * den) } else { T::zero() };
        let kb = if nb > T::zero() { dot * na / (nb * den * den) } else { T::zero() };
        for j in 0..cols {
            da[span.start + j] = g * (y[j] / den - ka * x[j]);
            db[span.start + j] = g * (x[j] / den - kb * y[j]);
        }
    }
    (da, db)
}
