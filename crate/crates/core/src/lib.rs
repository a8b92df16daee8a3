//! Robust semantic-communication training with a learned sample-confidence
//! module.
//!
//! A differentiable encoder, fading channel, decoder and frozen classifier
//! chain is trained on a biased knowledge base. Per-sample task losses are
//! reweighted by a significance function (an MLP or a B-spline KAN) that is
//! itself meta-trained on a small clean metadata set.

pub mod channel;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod kb;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod scm;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
