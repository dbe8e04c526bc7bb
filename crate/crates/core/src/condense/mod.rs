//! Feature-embedding matching over synthetic canvases.

pub mod config;
pub mod engine;
pub mod loss;
pub mod trace;

pub use config::CondenseConfig;
pub use engine::{condense, condense_dm_baseline, condense_observed, snapshot_set, ClassStep, Observer};
pub use loss::{matching_loss, matching_loss_grad, Embedder};
pub use trace::{CondenseTrace, TraceRecord};
