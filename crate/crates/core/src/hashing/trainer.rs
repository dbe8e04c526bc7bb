use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::augment::{apply_aug, decode_batch, sample_aug, AugPolicy, FormationConfig};
use crate::data::{gather_rows, LabeledDataset, SyntheticSet};
use crate::error::{ensure, Error, Result};
use crate::hashing::codebook::{build_codebook, Codebook};
use crate::hashing::loss::{loss_plugin, HashLoss};
use crate::model::{ArchSpec, HashNetParams};
use crate::seed::{self, stream};
use crate::Images;

fn default_bits() -> usize {
    32
}
fn default_quant() -> f64 {
    0.5
}
fn default_epochs() -> usize {
    60
}
fn default_lr() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.9
}
fn default_wd() -> f64 {
    5e-4
}
fn default_batch() -> usize {
    64
}
fn default_loss() -> String {
    "center".into()
}
fn default_arch() -> String {
    "convnet-3".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashLossConfig {
    #[serde(default = "default_arch")]
    pub arch: String,
    #[serde(default = "default_bits")]
    pub code_bits: usize,
    #[serde(default = "default_quant")]
    pub quant_weight: f64,
    #[serde(default = "default_loss")]
    pub loss: String,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Train-time augmentation, one draw per mini-batch.
    #[serde(default)]
    pub aug_policy: AugPolicy,
    #[serde(default)]
    pub seed: u64,
}

impl Default for HashLossConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl HashLossConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.code_bits >= 1, Config, "code_bits must be >= 1");
        ensure!(self.quant_weight >= 0.0, Config, "quant_weight must be >= 0");
        ensure!(self.batch_size >= 1, Config, "batch_size must be >= 1");
        ensure!(self.lr >= 0.0 && self.lr.is_finite(), Config, "lr must be finite and >= 0");
        ensure!((0.0..1.0).contains(&self.momentum), Config, "momentum must lie in [0, 1)");
        self.aug_policy.validate()
    }
}

/// Images and labels ready for hash training.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub images: Images,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Method label of whatever produced these images.
    pub source: String,
}

impl TrainingSet {
    /// Decodes canvases when `f > 1` (each canvas yields `f^2` images).
    pub fn from_synthetic(s: &SyntheticSet) -> Result<Self> {
        let form = FormationConfig::new(s.formation_factor, s.image_side)?;
        let images = decode_batch(&s.pixels, &form)?;
        let k = form.patch_count();
        let labels = s.labels.iter().flat_map(|&y| std::iter::repeat_n(y, k)).collect();
        Ok(TrainingSet {
            images,
            labels,
            num_classes: s.num_classes,
            source: s.provenance.method.clone(),
        })
    }

    pub fn from_dataset(ds: &LabeledDataset) -> Self {
        TrainingSet {
            images: ds.images.clone(),
            labels: ds.labels.clone(),
            num_classes: ds.num_classes,
            source: "whole-set".into(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedHashModel {
    pub params: HashNetParams,
    pub codebook: Codebook,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    pub trained_on: String,
    pub loss_name: String,
}

/// Cosine-decayed learning rate for `epoch` of `total`.
pub fn cosine_lr(base: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    0.5 * base * (1.0 + (PI * epoch as f64 / total as f64).cos())
}

pub fn train_hash(set: &TrainingSet, cfg: &HashLossConfig) -> Result<TrainedHashModel> {
    let loss = loss_plugin(&cfg.loss, cfg.quant_weight)?;
    train_hash_with(set, cfg, loss.as_ref())
}

/// SGD with momentum, weight decay and a cosine schedule, minimizing the
/// given hashing loss.
pub fn train_hash_with(set: &TrainingSet, cfg: &HashLossConfig, loss: &dyn HashLoss) -> Result<TrainedHashModel> {
    cfg.validate()?;
    ensure!(!set.is_empty(), Validation, "empty training set");
    let (_, ch, side, _) = set.images.dim();
    let arch = ArchSpec::resolve(&cfg.arch, ch, side)?;
    let mut params = HashNetParams::init(&arch, cfg.code_bits, seed::derive(cfg.seed, &[stream::TRAIN_ORDER, 0]))?;
    let codebook = build_codebook(set.num_classes, cfg.code_bits, cfg.seed)?;
    let mut velocity = params.zeros_like();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let n = set.len();
    let identity_aug = cfg.aug_policy.0.iter().all(|s| matches!(s.kind, crate::augment::AugKind::Identity));

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.lr, epoch, cfg.epochs);
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(
            order.as_mut_slice(),
            &mut seed::rng(cfg.seed, &[stream::TRAIN_ORDER, epoch as u64 + 1]),
        );
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let mut x = gather_rows(&set.images, rows);
            if !identity_aug {
                let w = sample_aug(
                    &cfg.aug_policy,
                    side,
                    &mut seed::rng(cfg.seed, &[stream::TRAIN_AUG, epoch as u64, b as u64]),
                )?;
                x = apply_aug(&x, &w)?;
            }
            let labels: Vec<usize> = rows.iter().map(|&r| set.labels[r]).collect();
            let (feat, trace) = params.features_traced(&x)?;
            let codes = params.hash_head(&feat);
            let (l, g_codes) = loss.loss_and_grad(&codes, &labels, &codebook)?;
            if !l.is_finite() {
                return Err(Error::NonFinite(format!("hash loss {l} at epoch {epoch}, batch {b}")));
            }
            let mut grads = params.codes_backward(&trace, &feat, &g_codes);
            if cfg.weight_decay > 0.0 {
                grads.axpy(cfg.weight_decay, &params);
            }
            // v <- m v + g; theta <- theta - lr v
            let mut next = velocity.clone();
            for (mut v, (_, _, g)) in next.tensors_mut().into_iter().zip(grads.named_tensors()) {
                v.zip_mut_with(&g, |v, &g| *v = cfg.momentum * *v + g);
            }
            velocity = next;
            params.axpy(-lr, &velocity);
            total += l;
            batches += 1;
        }
        let mean = total / batches.max(1) as f64;
        if !mean.is_finite() || !params.all_finite() {
            return Err(Error::NonFinite(format!("training diverged at epoch {epoch}")));
        }
        curve.push(mean);
    }
    Ok(TrainedHashModel {
        params,
        codebook,
        loss_curve: curve,
        trained_on: set.source.clone(),
        loss_name: loss.name().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toy::{self, ToySpec};
    use crate::data::{NormStats, Provenance};
    use ndarray::Array4;

    fn small_cfg(epochs: usize) -> HashLossConfig {
        HashLossConfig {
            arch: "conv-w8-d2".into(),
            code_bits: 8,
            epochs,
            batch_size: 16,
            lr: 0.05,
            aug_policy: AugPolicy::identity(),
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let ds = toy::dataset(&ToySpec { classes: 2, per_class: 8, side: 8, seed: 0 }).unwrap();
        let cfg = small_cfg(0);
        let m = train_hash(&TrainingSet::from_dataset(&ds), &cfg).unwrap();
        let arch = ArchSpec::resolve(&cfg.arch, 3, 8).unwrap();
        let init = HashNetParams::init(&arch, 8, seed::derive(cfg.seed, &[stream::TRAIN_ORDER, 0])).unwrap();
        assert_eq!(m.params, init);
        assert!(m.loss_curve.is_empty());
    }

    #[test]
    fn separable_two_class_set_converges() {
        // Class 0 dark, class 1 bright: trivially separable.
        let n = 16;
        let images = Array4::from_shape_fn((n, 3, 8, 8), |(i, c, y, x)| {
            let base = if i < n / 2 { -1.0 } else { 1.0 };
            base + 0.05 * (((i * 7 + c * 3 + y * 5 + x) % 7) as f64 - 3.0)
        });
        let labels = (0..n).map(|i| (i >= n / 2) as usize).collect();
        let set = TrainingSet { images, labels, num_classes: 2, source: "toy".into() };
        let m = train_hash(&set, &small_cfg(40)).unwrap();
        let last = *m.loss_curve.last().unwrap();
        assert!(last < 0.1, "final loss {last}");
        assert!(last < m.loss_curve[0]);
        assert!(m.loss_curve.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn decoding_multiplies_rows_by_patch_count() {
        let pixels = Array4::zeros((2 * 3, 3, 8, 8));
        let s = SyntheticSet::new(
            pixels,
            2,
            3,
            2,
            NormStats::identity(3),
            Provenance::new("iem", 0, String::new(), 6, 100),
        )
        .unwrap();
        let t = TrainingSet::from_synthetic(&s).unwrap();
        assert_eq!(t.len(), 4 * 2 * 3);
        assert_eq!(&t.labels[..5], &[0, 0, 0, 0, 0]);
        assert_eq!(t.labels[12], 1);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 10), 0.1);
        assert!((cosine_lr(0.1, 5, 10) - 0.05).abs() < 1e-15);
    }
}
