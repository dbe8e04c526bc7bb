use ndarray::{s, Array4};
use serde::{Deserialize, Serialize};

use crate::data::dataset::{LabeledDataset, NormStats};
use crate::error::{ensure, Result};
use crate::Images;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// `iem`, `dm-plain`, `random`, `herding`, ...
    pub method: String,
    pub seed: u64,
    pub iterations_completed: usize,
    pub config_hash: String,
    /// Size of the synthetic set relative to the train split it summarizes.
    pub ratio: f64,
    pub train_size: usize,
}

impl Provenance {
    pub fn new(method: &str, seed: u64, config_hash: String, rows: usize, train_size: usize) -> Self {
        Provenance {
            method: method.to_string(),
            seed,
            iterations_completed: 0,
            config_hash,
            ratio: rows as f64 / train_size.max(1) as f64,
            train_size,
        }
    }
}

/// Learnable per-class canvases (`c * ipc` rows, sorted by class).
///
/// Pixels live in normalized space and are always representable as `f32`,
/// which is what makes archive round trips bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub pixels: Images,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub ipc: usize,
    pub formation_factor: usize,
    pub image_side: usize,
    pub norm_stats: NormStats,
    pub provenance: Provenance,
}

impl SyntheticSet {
    pub fn new(
        mut pixels: Images,
        num_classes: usize,
        ipc: usize,
        formation_factor: usize,
        norm_stats: NormStats,
        provenance: Provenance,
    ) -> Result<Self> {
        let (n, ch, h, w) = pixels.dim();
        ensure!(num_classes > 0 && ipc > 0, Validation, "need c >= 1 and ipc >= 1");
        ensure!(
            n == num_classes * ipc,
            Validation,
            "{n} rows for c={num_classes}, ipc={ipc}"
        );
        ensure!(h == w, Validation, "canvases must be square, got {h}x{w}");
        ensure!(
            formation_factor >= 1 && h % formation_factor == 0,
            Validation,
            "formation factor {formation_factor} does not divide side {h}"
        );
        ensure!(
            norm_stats.channels() == ch,
            Validation,
            "norm stats cover {} channels, pixels have {ch}",
            norm_stats.channels()
        );
        ensure!(
            provenance.ratio < 1.0,
            Validation,
            "synthetic set is not smaller than its train split (ratio {})",
            provenance.ratio
        );
        pixels.mapv_inplace(|v| v as f32 as f64);
        let labels = (0..num_classes)
            .flat_map(|k| std::iter::repeat_n(k, ipc))
            .collect();
        Ok(SyntheticSet {
            pixels,
            labels,
            num_classes,
            ipc,
            formation_factor,
            image_side: h,
            norm_stats,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.pixels.shape()[1]
    }

    /// Rows `[k*ipc, (k+1)*ipc)` hold class `k`.
    pub fn class_rows(&self, class_id: usize) -> std::ops::Range<usize> {
        class_id * self.ipc..(class_id + 1) * self.ipc
    }

    pub fn class_pixels(&self, class_id: usize) -> Images {
        let r = self.class_rows(class_id);
        self.pixels.slice(s![r, .., .., ..]).to_owned()
    }

    /// Materializes real rows as an `f = 1` set (coreset baselines).
    pub fn from_rows(
        ds: &LabeledDataset,
        rows_per_class: &[Vec<usize>],
        provenance: Provenance,
    ) -> Result<Self> {
        let ipc = rows_per_class.first().map_or(0, Vec::len);
        ensure!(
            rows_per_class.len() == ds.num_classes && rows_per_class.iter().all(|r| r.len() == ipc),
            Validation,
            "need exactly ipc rows for each of {} classes",
            ds.num_classes
        );
        let rows: Vec<usize> = rows_per_class.iter().flatten().copied().collect();
        let pixels: Array4<f64> = ds.gather(&rows);
        Self::new(pixels, ds.num_classes, ipc, 1, ds.norm_stats.clone(), provenance)
    }
}
