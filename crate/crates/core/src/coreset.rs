//! Coreset baselines: uniform random selection and embedding-mean herding.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Provenance, SyntheticSet};
use crate::error::{ensure, Result};
use crate::model::HashNetParams;
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoresetMethod {
    Random,
    Herding,
}

impl CoresetMethod {
    pub fn label(self) -> &'static str {
        match self {
            CoresetMethod::Random => "random",
            CoresetMethod::Herding => "herding",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSource {
    pub arch: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoresetResult {
    pub method: CoresetMethod,
    pub ipc: usize,
    pub seed: u64,
    /// Row indices into the train split, per class.
    pub selected_indices: BTreeMap<usize, Vec<usize>>,
    #[serde(default)]
    pub feature_source: Option<FeatureSource>,
}

impl CoresetResult {
    /// Materializes the selection as an `f = 1` synthetic set.
    pub fn to_synthetic(&self, ds: &LabeledDataset) -> Result<SyntheticSet> {
        let rows: Vec<Vec<usize>> = (0..ds.num_classes)
            .map(|c| self.selected_indices.get(&c).cloned().unwrap_or_default())
            .collect();
        let prov = Provenance::new(
            self.method.label(),
            self.seed,
            String::new(),
            ds.num_classes * self.ipc,
            ds.len(),
        );
        SyntheticSet::from_rows(ds, &rows, prov)
    }
}

fn check_ipc(ds: &LabeledDataset, ipc: usize) -> Result<()> {
    ensure!(ipc >= 1, Validation, "ipc must be >= 1");
    ensure!(
        ipc <= ds.min_class_population(),
        Validation,
        "ipc {ipc} exceeds the smallest class population {}",
        ds.min_class_population()
    );
    Ok(())
}

pub fn select_random(ds: &LabeledDataset, ipc: usize, seed: u64) -> Result<CoresetResult> {
    check_ipc(ds, ipc)?;
    let mut selected = BTreeMap::new();
    for (c, pop) in ds.class_index.iter().enumerate() {
        let mut rng = seed::rng(seed, &[stream::CORESET, c as u64]);
        let mut rows: Vec<usize> = rand::seq::index::sample(&mut rng, pop.len(), ipc)
            .into_iter()
            .map(|i| pop[i])
            .collect();
        rows.sort_unstable();
        selected.insert(c, rows);
    }
    Ok(CoresetResult {
        method: CoresetMethod::Random,
        ipc,
        seed,
        selected_indices: selected,
        feature_source: None,
    })
}

/// Greedy herding on an embedding matrix. Returns positions (rows of
/// `emb`) in selection order; ties go to the lowest position.
pub fn herding_order(emb: &Array2<f64>, count: usize) -> Vec<usize> {
    let n = emb.nrows();
    let mu: Array1<f64> = emb.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(emb.ncols()));
    let mut sum = Array1::<f64>::zeros(emb.ncols());
    let mut taken = vec![false; n];
    let mut order = Vec::with_capacity(count);
    for k in 1..=count.min(n) {
        let mut best: Option<(f64, usize)> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            let d: f64 = sum
                .iter()
                .zip(emb.row(i))
                .zip(&mu)
                .map(|((s, e), m)| {
                    let v = (s + e) / k as f64 - m;
                    v * v
                })
                .sum();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        let (_, i) = best.expect("a candidate remains");
        taken[i] = true;
        sum += &emb.row(i);
        order.push(i);
    }
    order
}

/// Herding with embeddings from `theta` (any initialization; the default
/// harness uses an untrained network).
pub fn select_herding(
    ds: &LabeledDataset,
    ipc: usize,
    theta: &HashNetParams,
    seed: u64,
) -> Result<CoresetResult> {
    check_ipc(ds, ipc)?;
    let mut selected = BTreeMap::new();
    for (c, pop) in ds.class_index.iter().enumerate() {
        let emb = theta.extract_features(&ds.gather(pop))?;
        let rows = herding_order(&emb, ipc).into_iter().map(|p| pop[p]).collect();
        selected.insert(c, rows);
    }
    Ok(CoresetResult {
        method: CoresetMethod::Herding,
        ipc,
        seed,
        selected_indices: selected,
        feature_source: Some(FeatureSource {
            arch: theta.arch.id.clone(),
            seed,
        }),
    })
}
