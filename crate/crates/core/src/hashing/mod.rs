//! Hashing-network training on condensed or real sets.

pub mod codebook;
pub mod loss;
pub mod trainer;

pub use codebook::{build_codebook, Codebook};
pub use loss::{center_loss, loss_plugin, CenterLoss, HashLoss, PLUGINS};
pub use trainer::{train_hash, train_hash_with, HashLossConfig, TrainedHashModel, TrainingSet};

/// `hash_loss(v, labels, cfg)`: the configured center loss value.
pub fn hash_loss(
    codes: &ndarray::Array2<f64>,
    labels: &[usize],
    book: &Codebook,
    quant_weight: f64,
) -> crate::Result<f64> {
    Ok(center_loss(codes, labels, book, quant_weight)?.0)
}
