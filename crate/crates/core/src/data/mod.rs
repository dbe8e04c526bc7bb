//! Dataset ingestion, class-partitioned sampling and condensed-set storage.

pub mod archive;
pub mod dataset;
pub mod synthetic;
pub mod toy;

pub use archive::{load_synthetic, save_synthetic, SyntheticManifest};
pub use dataset::{
    gather_rows, load_dataset, load_retrieval_data, sample_class_batch, sample_class_rows,
    LabeledDataset, NormStats, RetrievalData, RetrievalProtocol, Split,
};
pub use synthetic::{Provenance, SyntheticSet};
