use super::params::{ParamId, ParamStore, Session};
use crate::error::Result;
use crate::tensor::{Element, Init, Tensor, Var};

/// Fully connected layer `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    /// Kaiming-uniform weight, zero bias.
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let weight = Tensor::create(&[out_dim, in_dim], Init::Kaiming { fan_in: in_dim, seed })?;
        let weight = store.insert(format!("{name}.weight"), weight)?;
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Element>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        let wt = s.graph.transpose(w)?;
        let xw = s.graph.matmul(x, wt)?;
        s.graph.add_row_bias(xw, b)
    }

    /// The same map applied at every spatial location of a `[b,in,h,w]`
    /// feature map, producing `[b,out,h,w]`.
    pub fn forward_pointwise<T: Element>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        let kernel = s.graph.reshape(w, &[self.out_dim, self.in_dim, 1, 1])?;
        let y = s.graph.conv2d(x, kernel, 1, 0)?;
        s.graph.add_channel_bias(y, b)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// conv -> bias -> relu -> optional average pooling.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
    /// Pooling window; `1` disables pooling.
    pub pool: usize,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        pool: usize,
        seed: u64,
    ) -> Result<Self> {
        let fan_in = c_in * kernel_size * kernel_size;
        let kernel = Tensor::create(
            &[c_out, c_in, kernel_size, kernel_size],
            Init::Kaiming { fan_in, seed },
        )?;
        let kernel = store.insert(format!("{name}.kernel"), kernel)?;
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(Self {
            kernel,
            bias,
            stride,
            padding,
            pool,
        })
    }

    pub fn forward<T: Element>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let k = s.param(self.kernel);
        let b = s.param(self.bias);
        let y = s.graph.conv2d(x, k, self.stride, self.padding)?;
        let y = s.graph.add_channel_bias(y, b)?;
        let y = s.graph.relu(y);
        if self.pool > 1 {
            s.graph.avg_pool2d(y, self.pool)
        } else {
            Ok(y)
        }
    }

    /// Spatial extent after this block for an input of extent `size`.
    pub fn output_extent(&self, size: usize, kernel_size: usize) -> Option<usize> {
        let padded = size + 2 * self.padding;
        if padded < kernel_size {
            return None;
        }
        let conv = (padded - kernel_size) / self.stride + 1;
        let pooled = if self.pool > 1 { conv / self.pool } else { conv };
        (pooled > 0).then_some(pooled)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.kernel, self.bias]
    }
}
