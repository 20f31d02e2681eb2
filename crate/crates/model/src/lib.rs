//! Efficient vision-transformer backbone (convolutional attention, pooled
//! self-attention, lattice feed-forward blocks in a four-stage pyramid) plus
//! the vanilla ViT reference encoder, with parameter accounting and
//! checkpoint I/O.

#![forbid(unsafe_code)]

pub mod backbone;
pub mod config;
pub mod error;
pub mod flops;
pub mod params;
pub mod vit;

pub use config::{Activation, BackboneConfig, ViTConfig, NUM_STAGES, STAGE_REDUCTIONS};
pub use error::{ModelError, Result};
pub use params::{Binding, Init, ParamStore};
