//! Local planar guidance (LPG) depth decoding, trained end to end on synthetic
//! planar scenes.
//!
//! The crate carries its own small tensor engine ([`autodiff`]) so every piece of
//! the pipeline, from the ray-plane expansion in [`lpg`] to the scale-invariant
//! loss in [`loss`], is differentiated by code in this repository.

pub mod ablation;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod lpg;
pub mod metrics;
pub mod netpbm;
pub mod network;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
