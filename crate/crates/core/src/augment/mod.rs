//! Shared-parameter augmentation and multi-formation canvases.

pub mod formation;
pub mod policy;

pub use formation::{assemble, decode, decode_batch, FormationConfig};
pub use policy::{apply_aug, apply_aug_backward, sample_aug, AugKind, AugOp, AugPolicy, AugStep, AugmentationParams};
