//! Binary codes, Hamming ranking and mAP.

pub mod codes;
pub mod metrics;
pub mod table;

pub use codes::{binarize, hamming_rank, BinaryCodes};
pub use metrics::{average_precision, evaluate_codes, mean_average_precision, ranked_relevance, EvalReport, PrecisionAt};
pub use table::{format_ablation_table, format_results_table, AblationRow};
