//! Generalization prediction from latent geometry graphs.
//!
//! Samples are connected by similarity of their latent representations at a
//! given layer; the label variation of the resulting graph measures how much
//! edge weight joins samples of different classes.

pub mod error;
pub mod graph;
pub mod harness;
pub mod mixup;
pub mod refnet;
pub mod rng;
pub mod scoring;
pub mod tensor_io;
pub mod variation;

pub use error::{Error, Result};
