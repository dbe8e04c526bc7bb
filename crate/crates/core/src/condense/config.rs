use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{AugPolicy, FormationConfig};
use crate::error::{ensure, Result};
use crate::model::PerturbationConfig;

fn default_arch() -> String {
    "convnet-3".into()
}
fn default_iterations() -> usize {
    200
}
fn default_lr() -> f64 {
    1.0
}
fn default_momentum() -> f64 {
    0.5
}
fn default_real_batch() -> usize {
    64
}
fn default_factor() -> usize {
    2
}
fn default_true() -> bool {
    true
}
fn default_one() -> usize {
    1
}
fn default_ipc() -> usize {
    10
}
fn default_code_bits() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondenseConfig {
    #[serde(default = "default_arch")]
    pub arch: String,
    /// Embedding networks only use `h`; the head size just fixes `θ_init`'s
    /// shape.
    #[serde(default = "default_code_bits")]
    pub code_bits: usize,
    #[serde(default = "default_ipc")]
    pub ipc: usize,
    /// Iterations per outer repeat (`R`).
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_lr")]
    pub lr_syn: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Real images sampled per class per iteration (capped at the class size).
    #[serde(default = "default_real_batch")]
    pub real_batch: usize,
    /// Canvases per class per iteration; `None` means all `ipc`.
    #[serde(default)]
    pub syn_batch: Option<usize>,
    #[serde(default)]
    pub perturb: PerturbationConfig,
    #[serde(default = "default_factor")]
    pub formation_factor: usize,
    #[serde(default)]
    pub aug_policy: AugPolicy,
    #[serde(default = "default_true")]
    pub enable_na: bool,
    #[serde(default = "default_true")]
    pub enable_da: bool,
    #[serde(default = "default_one")]
    pub outer_repeats: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CondenseConfig {
    fn default() -> Self {
        CondenseConfig {
            arch: default_arch(),
            code_bits: default_code_bits(),
            ipc: default_ipc(),
            iterations: default_iterations(),
            lr_syn: default_lr(),
            momentum: default_momentum(),
            real_batch: default_real_batch(),
            syn_batch: None,
            perturb: PerturbationConfig::default(),
            formation_factor: default_factor(),
            aug_policy: AugPolicy::default(),
            enable_na: true,
            enable_da: true,
            outer_repeats: 1,
            seed: 0,
        }
    }
}

impl CondenseConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.iterations >= 1, Validation, "iterations must be >= 1");
        ensure!(self.outer_repeats >= 1, Validation, "outer_repeats must be >= 1");
        ensure!(
            self.lr_syn >= 0.0 && self.lr_syn.is_finite(),
            Validation,
            "lr_syn must be finite and >= 0"
        );
        ensure!(
            (0.0..1.0).contains(&self.momentum),
            Validation,
            "momentum must lie in [0, 1)"
        );
        ensure!(self.ipc >= 1, Validation, "ipc must be >= 1");
        ensure!(self.real_batch >= 1, Validation, "real_batch must be >= 1");
        ensure!(
            self.syn_batch.is_none_or(|b| b >= 1 && b <= self.ipc),
            Validation,
            "syn_batch must lie in [1, ipc]"
        );
        ensure!(self.formation_factor >= 1, Validation, "formation_factor must be >= 1");
        self.perturb.validate()?;
        self.aug_policy.validate()
    }

    /// Perturbation magnitude after the NA flag.
    pub fn effective_alpha(&self) -> f64 {
        if self.enable_na {
            self.perturb.alpha
        } else {
            0.0
        }
    }

    /// Grid factor after the DA flag.
    pub fn effective_factor(&self) -> usize {
        if self.enable_da {
            self.formation_factor
        } else {
            1
        }
    }

    pub fn formation(&self, image_side: usize) -> Result<FormationConfig> {
        FormationConfig::new(self.effective_factor(), image_side)
    }

    pub fn method_label(&self) -> &'static str {
        match (self.enable_na, self.enable_da) {
            (true, true) => "iem",
            (false, false) => "dm-plain",
            (true, false) => "iem-na-only",
            (false, true) => "iem-da-only",
        }
    }

    /// Short hex digest of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}
