//! Training-time feature perturbation augmentation and fidelity evaluation of
//! gradient-based importance estimators.
//!
//! The crate bundles everything needed to run the pipeline end to end on desk-scale
//! classifiers: a tape-based reverse-mode autodiff engine over dense tensors
//! ([`tape`]), small CNN/MLP definitions with an SGD training loop ([`model`]),
//! dataset loading and seeded batching ([`data`]), the pixel/square masking
//! augmentation and a rectangle-erasing baseline ([`augment`]), four importance
//! estimators with their channel reductions ([`saliency`]), and MIF/LIF
//! perturbation curves with the area fidelity metric and bootstrap confidence
//! intervals ([`perturb`]).
//!
//! Everything is explicitly seeded; identical seeds give bit-identical results.

pub mod augment;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod model;
pub mod perturb;
pub mod saliency;
pub mod seeds;
pub mod tape;
pub mod tensor;

#[doc(hidden)]
pub mod gradcheck;
#[doc(hidden)]
pub mod reference;

pub use error::{Error, Result};
pub use tensor::Tensor;
