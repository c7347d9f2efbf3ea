//! Layers, the AdamW optimizer, the EMA parameter shadow and checkpoints.

mod adamw;
pub mod checkpoint;
mod ema;
mod layers;
mod params;

pub use adamw::{AdamWConfig, AdamWState};
pub use ema::{EmaRestore, EmaState};
pub use layers::{ConvBlock, LinearLayer};
pub use params::{Gradients, ParamId, ParamStore, Session};
