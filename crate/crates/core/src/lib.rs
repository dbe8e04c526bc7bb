//! Dataset condensation for deep hashing retrieval.
//!
//! The crate synthesizes a small per-class training set by matching mean
//! feature embeddings of real and synthetic batches under perturbed networks
//! and multi-formation canvases, then trains a hashing network on it and
//! scores Hamming-ranking mAP.

pub mod augment;
pub mod condense;
pub mod coreset;
pub mod data;
pub mod error;
pub mod harness;
pub mod hashing;
pub mod model;
pub mod retrieval;
pub mod seed;

pub use error::{Error, ErrorKind, Result};

/// NCHW image batch.
pub type Images = ndarray::Array4<f64>;
