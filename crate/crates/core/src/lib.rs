//! Semi-supervised heterogeneous domain adaptation with disentangled
//! embeddings and pseudo-labelling.
//!
//! Two modality-specific encoders map source and target images into a shared
//! `2D`-wide embedding whose first half feeds a task classifier and whose
//! second half feeds a domain classifier. Training combines supervised
//! cross-entropy, domain classification, an orthogonality term between the
//! halves and confidence-thresholded pseudo-labels on augmented target data.

pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
