use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::retrieval::codes::{hamming_rank, BinaryCodes};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAt {
    pub k: usize,
    pub precision: f64,
}

/// Retrieval result for one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map_value: f64,
    #[serde(default)]
    pub precision_at_k: Vec<PrecisionAt>,
    pub code_bits: usize,
    pub query_count: usize,
    pub database_count: usize,
    /// `None` means the full database.
    pub depth: Option<usize>,
    #[serde(default)]
    pub method: String,
    #[serde(default)]
    pub dataset: String,
    #[serde(default)]
    pub ipc: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss: String,
    #[serde(default)]
    pub trained_on: String,
    #[serde(default)]
    pub ratio: Option<f64>,
    #[serde(default)]
    pub query_checksum: String,
    #[serde(default)]
    pub database_checksum: String,
}

/// Average precision of one ranked relevance list, truncated at `depth`.
/// Normalized by the number of relevant hits retrieved within the depth.
pub fn average_precision(relevance: &[bool], depth: Option<usize>) -> f64 {
    let depth = depth.unwrap_or(relevance.len()).min(relevance.len());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &rel) in relevance[..depth].iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// Ranked relevance of `db` for query row `q`.
pub fn ranked_relevance(queries: &BinaryCodes, q: usize, db: &BinaryCodes) -> Result<Vec<bool>> {
    let y = queries.labels[q];
    Ok(hamming_rank(queries, q, db)?.into_iter().map(|j| db.labels[j] == y).collect())
}

/// mAP over all queries plus precision at each `ks` cutoff.
pub fn evaluate_codes(
    queries: &BinaryCodes,
    db: &BinaryCodes,
    depth: Option<usize>,
    ks: &[usize],
) -> Result<EvalReport> {
    ensure!(!db.is_empty(), Validation, "empty retrieval database");
    ensure!(!queries.is_empty(), Validation, "empty query set");
    ensure!(depth != Some(0), Config, "mAP depth must be >= 1");
    let mut ap_sum = 0.0;
    let mut prec = vec![0.0; ks.len()];
    for q in 0..queries.len() {
        let rel = ranked_relevance(queries, q, db)?;
        ap_sum += average_precision(&rel, depth);
        for (p, &k) in prec.iter_mut().zip(ks) {
            let k = k.min(rel.len()).max(1);
            *p += rel[..k].iter().filter(|&&r| r).count() as f64 / k as f64;
        }
    }
    let nq = queries.len() as f64;
    Ok(EvalReport {
        map_value: ap_sum / nq,
        precision_at_k: ks.iter().zip(prec).map(|(&k, p)| PrecisionAt { k, precision: p / nq }).collect(),
        code_bits: db.code_bits(),
        query_count: queries.len(),
        database_count: db.len(),
        depth,
        method: String::new(),
        dataset: String::new(),
        ipc: 0,
        seed: 0,
        loss: String::new(),
        trained_on: String::new(),
        ratio: None,
        query_checksum: String::new(),
        database_checksum: String::new(),
    })
}

pub fn mean_average_precision(queries: &BinaryCodes, db: &BinaryCodes, depth: Option<usize>) -> Result<EvalReport> {
    evaluate_codes(queries, db, depth, &[])
}
