//! The dual-encoder network: one convolutional encoder per modality, each
//! emitting a `2D` embedding whose first half is domain-invariant and whose
//! second half is domain-specific, plus a shared task classifier on the
//! invariant half and a shared domain classifier on the specific half.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{ConvBlock, LinearLayer, ParamId, ParamStore, Session};
use crate::rng::derive_seed;
use crate::tensor::{Element, Tensor, Var};

/// Provenance of a sample. Also the label space of the domain classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn label(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// Channel count and spatial extent of one modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Output channels of each conv block.
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    /// Average-pooling window after each block (`1` = none).
    pub pool: usize,
    /// Full embedding width `2D`; each half has `D = embed_dim / 2`.
    pub embed_dim: usize,
    /// Rectify the projected embedding so both halves are non-negative, like
    /// the pooled features of a ResNet. Off by default: the projection is
    /// linear.
    pub relu_embedding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 64],
            kernel_size: 3,
            stride: 1,
            padding: 1,
            pool: 2,
            embed_dim: 128,
            relu_embedding: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("model.channels must be nonempty and positive".into()));
        }
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "model.embed_dim must be even and positive, got {}",
                self.embed_dim
            )));
        }
        if self.kernel_size == 0 || self.stride == 0 || self.pool == 0 {
            return Err(Error::Config(
                "model.kernel_size, model.stride and model.pool must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn half_dim(&self) -> usize {
        self.embed_dim / 2
    }
}

/// Everything needed to rebuild the network around a parameter store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub model: ModelConfig,
    pub num_classes: usize,
    pub source: Geometry,
    pub target: Geometry,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub domain: Domain,
    pub geometry: Geometry,
    pub blocks: Vec<ConvBlock>,
    pub projection: LinearLayer,
    pub embed_dim: usize,
    pub relu_embedding: bool,
}

/// Two halves of an encoder output, plus the full embedding.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingPair {
    pub z: Var,
    pub inv: Var,
    pub spe: Var,
}

fn lookup<T: Element>(store: &ParamStore<T>, name: &str) -> Result<ParamId> {
    store
        .find(name)
        .ok_or_else(|| Error::Manifest(format!("checkpoint lacks parameter {name}")))
}

fn final_extent(cfg: &ModelConfig, blocks: &[ConvBlock], geometry: Geometry) -> Result<()> {
    let mut h = geometry.height;
    let mut w = geometry.width;
    for (i, block) in blocks.iter().enumerate() {
        match (block.output_extent(h, cfg.kernel_size), block.output_extent(w, cfg.kernel_size)) {
            (Some(nh), Some(nw)) => (h, w) = (nh, nw),
            _ => {
                return Err(Error::Geometry(format!(
                    "input {}x{} collapses to nothing at conv block {i}",
                    geometry.height, geometry.width
                )))
            }
        }
    }
    Ok(())
}

impl Encoder {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        domain: Domain,
        geometry: Geometry,
        cfg: &ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let prefix = domain.prefix();
        let mut blocks = Vec::with_capacity(cfg.channels.len());
        let mut c_in = geometry.channels;
        for (i, &c_out) in cfg.channels.iter().enumerate() {
            blocks.push(ConvBlock::new(
                store,
                &format!("{prefix}.conv{i}"),
                c_in,
                c_out,
                cfg.kernel_size,
                cfg.stride,
                cfg.padding,
                cfg.pool,
                derive_seed(seed, i as u64),
            )?);
            c_in = c_out;
        }
        final_extent(cfg, &blocks, geometry)?;
        let projection = LinearLayer::new(
            store,
            &format!("{prefix}.proj"),
            c_in,
            cfg.embed_dim,
            derive_seed(seed, cfg.channels.len() as u64),
        )?;
        Ok(Self {
            domain,
            geometry,
            blocks,
            projection,
            embed_dim: cfg.embed_dim,
            relu_embedding: cfg.relu_embedding,
        })
    }

    /// Rebinds an encoder to parameters already present in `store`.
    pub fn from_store<T: Element>(
        store: &ParamStore<T>,
        domain: Domain,
        geometry: Geometry,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let prefix = domain.prefix();
        let mut blocks = Vec::new();
        for i in 0..cfg.channels.len() {
            blocks.push(ConvBlock {
                kernel: lookup(store, &format!("{prefix}.conv{i}.kernel"))?,
                bias: lookup(store, &format!("{prefix}.conv{i}.bias"))?,
                stride: cfg.stride,
                padding: cfg.padding,
                pool: cfg.pool,
            });
        }
        let weight = lookup(store, &format!("{prefix}.proj.weight"))?;
        let projection = LinearLayer {
            weight,
            bias: lookup(store, &format!("{prefix}.proj.bias"))?,
            in_dim: *cfg.channels.last().expect("validated"),
            out_dim: cfg.embed_dim,
        };
        Ok(Self {
            domain,
            geometry,
            blocks,
            projection,
            embed_dim: cfg.embed_dim,
            relu_embedding: cfg.relu_embedding,
        })
    }

    pub fn half_dim(&self) -> usize {
        self.embed_dim / 2
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.blocks
            .iter()
            .flat_map(ConvBlock::params)
            .chain(self.projection.params())
            .collect()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let g = self.geometry;
        match shape {
            &[_, c, h, w] if c == g.channels && h == g.height && w == g.width => Ok(()),
            _ => Err(Error::Geometry(format!(
                "{} encoder expects [b,{},{},{}], got {shape:?}",
                self.domain.prefix(),
                g.channels,
                g.height,
                g.width
            ))),
        }
    }

    /// `z = E(x)` (rectified when configured), split as `z_inv = z[:, ..D]`, `z_spe = z[:, D..]`.
    pub fn encode<T: Element>(&self, s: &mut Session<'_, T>, x: Var) -> Result<EmbeddingPair> {
        self.check_input(s.graph.value(x).shape())?;
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(s, h)?;
        }
        let z = if self.relu_embedding {
            let projected = self.projection.forward_pointwise(s, h)?;
            let rectified = s.graph.relu(projected);
            s.graph.global_avg_pool(rectified)?
        } else {
            let pooled = s.graph.global_avg_pool(h)?;
            self.projection.forward(s, pooled)?
        };
        let d = self.half_dim();
        let inv = s.graph.slice_cols(z, 0, d)?;
        let spe = s.graph.slice_cols(z, d, 2 * d)?;
        Ok(EmbeddingPair { z, inv, spe })
    }
}

/// Linear layer + softmax over `C` classes, fed by `z_inv`.
#[derive(Debug, Clone)]
pub struct TaskClassifier {
    pub layer: LinearLayer,
}

/// Linear layer + softmax over {source, target}, fed by `z_spe`.
#[derive(Debug, Clone)]
pub struct DomainClassifier {
    pub layer: LinearLayer,
}

impl TaskClassifier {
    pub fn forward<T: Element>(&self, s: &mut Session<'_, T>, z_inv: Var) -> Result<Var> {
        let logits = self.layer.forward(s, z_inv)?;
        s.graph.softmax(logits)
    }
}

impl DomainClassifier {
    pub fn forward<T: Element>(&self, s: &mut Session<'_, T>, z_spe: Var) -> Result<Var> {
        let logits = self.layer.forward(s, z_spe)?;
        s.graph.softmax(logits)
    }
}

fn linear_from_store<T: Element>(
    store: &ParamStore<T>,
    name: &str,
    in_dim: usize,
    out_dim: usize,
) -> Result<LinearLayer> {
    Ok(LinearLayer {
        weight: lookup(store, &format!("{name}.weight"))?,
        bias: lookup(store, &format!("{name}.bias"))?,
        in_dim,
        out_dim,
    })
}

/// The full training-time network.
#[derive(Debug, Clone)]
pub struct SheddModel<T: Element = f32> {
    pub arch: Architecture,
    pub params: ParamStore<T>,
    pub source: Encoder,
    pub target: Encoder,
    pub task: TaskClassifier,
    pub domain: DomainClassifier,
}

impl<T: Element> SheddModel<T> {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        if arch.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        let mut params = ParamStore::new();
        let source = Encoder::new(
            &mut params,
            Domain::Source,
            arch.source,
            &arch.model,
            derive_seed(seed, 1),
        )?;
        let target = Encoder::new(
            &mut params,
            Domain::Target,
            arch.target,
            &arch.model,
            derive_seed(seed, 2),
        )?;
        let d = arch.model.half_dim();
        let task = TaskClassifier {
            layer: LinearLayer::new(&mut params, "task", d, arch.num_classes, derive_seed(seed, 3))?,
        };
        let domain = DomainClassifier {
            layer: LinearLayer::new(&mut params, "domain", d, 2, derive_seed(seed, 4))?,
        };
        Ok(Self {
            arch,
            params,
            source,
            target,
            task,
            domain,
        })
    }

    /// Rebuilds around an existing store (e.g. a loaded full checkpoint).
    pub fn from_params(arch: Architecture, params: ParamStore<T>) -> Result<Self> {
        let source = Encoder::from_store(&params, Domain::Source, arch.source, &arch.model)?;
        let target = Encoder::from_store(&params, Domain::Target, arch.target, &arch.model)?;
        let d = arch.model.half_dim();
        let task = TaskClassifier {
            layer: linear_from_store(&params, "task", d, arch.num_classes)?,
        };
        let domain = DomainClassifier {
            layer: linear_from_store(&params, "domain", d, 2)?,
        };
        Ok(Self {
            arch,
            params,
            source,
            target,
            task,
            domain,
        })
    }

    pub fn encoder(&self, domain: Domain) -> &Encoder {
        match domain {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }

    /// Parameters kept at inference: target encoder and task classifier.
    pub fn is_inference_param(name: &str) -> bool {
        name.starts_with("target.") || name.starts_with("task.")
    }

    pub fn cast<U: Element>(&self) -> SheddModel<U> {
        SheddModel {
            arch: self.arch.clone(),
            params: self.params.cast(),
            source: self.source.clone(),
            target: self.target.clone(),
            task: self.task.clone(),
            domain: self.domain.clone(),
        }
    }

    /// Task probabilities for a batch of one modality, no gradient tracking.
    pub fn predict_proba(&self, domain: Domain, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut s = Session::no_grad(&self.params);
        let xv = s.input(x.clone());
        let pair = self.encoder(domain).encode(&mut s, xv)?;
        let p = self.task.forward(&mut s, pair.inv)?;
        Ok(s.graph.value(p).clone())
    }
}

/// Target encoder and task classifier only.
#[derive(Debug, Clone)]
pub struct InferenceModel<T: Element = f32> {
    pub arch: Architecture,
    pub params: ParamStore<T>,
    pub target: Encoder,
    pub task: TaskClassifier,
}

impl<T: Element> InferenceModel<T> {
    pub fn from_params(arch: Architecture, params: ParamStore<T>) -> Result<Self> {
        let target = Encoder::from_store(&params, Domain::Target, arch.target, &arch.model)?;
        let task = TaskClassifier {
            layer: linear_from_store(&params, "task", arch.model.half_dim(), arch.num_classes)?,
        };
        Ok(Self {
            arch,
            params,
            target,
            task,
        })
    }

    pub fn embed(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut s = Session::no_grad(&self.params);
        let xv = s.input(x.clone());
        let pair = self.target.encode(&mut s, xv)?;
        let p = self.task.forward(&mut s, pair.inv)?;
        Ok((s.graph.value(pair.inv).clone(), s.graph.value(p).clone()))
    }

    pub fn predict_proba(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.embed(x)?.1)
    }

    /// Argmax of the task probabilities for target-modality input `x`.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        self.predict_proba(x)?.argmax_rows()
    }
}

impl InferenceModel<f32> {
    /// Uses EMA shadows when the checkpoint carries them.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let arch: Architecture = serde_json::from_value(ck.index.meta.clone())
            .map_err(|e| Error::json("checkpoint architecture", e))?;
        let mut store = ParamStore::new();
        for id in ck.params.ids() {
            let name = ck.params.name(id);
            if !SheddModel::<f32>::is_inference_param(name) {
                continue;
            }
            let value = match &ck.ema {
                Some(shadow) => shadow[id.0].clone(),
                None => ck.params.peek(id).clone(),
            };
            store.insert(name, value)?;
        }
        Self::from_params(arch, store)
    }
}

impl<T: Element> SheddModel<T> {
    /// Inference model over copies of the target encoder and task head.
    pub fn inference_model(&self) -> Result<InferenceModel<T>> {
        let mut store = ParamStore::new();
        for id in self.params.ids() {
            let name = self.params.name(id);
            if Self::is_inference_param(name) {
                store.insert(name, self.params.peek(id).clone())?;
            }
        }
        InferenceModel::from_params(self.arch.clone(), store)
    }
}
