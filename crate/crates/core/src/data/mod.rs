//! Datasets: the in-memory representation, a synthetic two-modality
//! benchmark, manifest-based storage, label-budget splits and the three-way
//! batch sampler used during training.

mod manifest;
mod sampling;
mod synthetic;

pub use manifest::{load_dataset, write_dataset, DatasetManifest, MANIFEST_SUFFIX};
pub use sampling::{make_splits, AlignedBatch, EpochPlan, Split};
pub use synthetic::{generate_synthetic_benchmark, ModalitySpec, SyntheticBenchConfig};

use crate::error::{Error, Result};
use crate::model::Geometry;
use crate::tensor::Tensor;

/// A labelled image collection from one modality. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub modality: String,
    pub geometry: Geometry,
    pub num_classes: usize,
    pub value_range: (f32, f32),
    /// `[N, c, h, w]`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        modality: impl Into<String>,
        num_classes: usize,
        value_range: (f32, f32),
        images: Tensor<f32>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let &[n, c, h, w] = images.shape() else {
            return Err(Error::Geometry(format!(
                "dataset images must be [N,c,h,w], got {:?}",
                images.shape()
            )));
        };
        if labels.len() != n {
            return Err(Error::CorruptDataset(format!(
                "{n} images but {} labels",
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::Manifest(format!("need at least 2 classes, got {num_classes}")));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Manifest(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        if !(value_range.0 < value_range.1) {
            return Err(Error::Manifest(format!("empty value range {value_range:?}")));
        }
        Ok(Self {
            modality: modality.into(),
            geometry: Geometry {
                channels: c,
                height: h,
                width: w,
            },
            num_classes,
            value_range,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Images and labels at `indices`, in order.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let images = self.images.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((images, labels))
    }

    /// Image `i` as a `[c,h,w]` tensor.
    pub fn image(&self, i: usize) -> Tensor<f32> {
        let g = self.geometry;
        let stride = g.channels * g.height * g.width;
        Tensor::from_slice(
            &[g.channels, g.height, g.width],
            &self.images.data()[i * stride..(i + 1) * stride],
        )
        .expect("image shape matches dataset geometry")
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Indices of the samples of each class, ascending.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }
}
