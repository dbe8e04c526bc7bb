//! Network augmentation: parameter-scaled, norm-normalized Gaussian weight
//! perturbation of an untrained initialization.
//!
//! For every tensor `W` with a fresh draw `d ~ N(0, 1)` of the same shape,
//! `W' = W + alpha * (d ⊙ W) / ||d||_F`, where the Frobenius norm is taken
//! over the raw draw of that tensor alone.

use ndarray::{ArrayViewD, ArrayViewMutD};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::model::params::HashNetParams;
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    PerLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub alpha: f64,
    pub noise_seed: u64,
    #[serde(default)]
    pub granularity: Granularity,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            alpha: 0.1,
            noise_seed: 0,
            granularity: Granularity::PerLayer,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.alpha >= 0.0 && self.alpha.is_finite(),
            Validation,
            "perturbation alpha must be finite and >= 0, got {}",
            self.alpha
        );
        Ok(())
    }
}

/// Applies one tensor's update given its raw Gaussian draw.
pub fn perturb_tensor(mut w: ArrayViewMutD<'_, f64>, raw: ArrayViewD<'_, f64>, alpha: f64) {
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || alpha == 0.0 {
        return;
    }
    let scale = alpha / norm;
    w.zip_mut_with(&raw, |wi, &di| *wi += scale * (di * *wi));
}

/// Returns a perturbed copy; `theta_init` is untouched.
pub fn perturb(theta_init: &HashNetParams, cfg: &PerturbationConfig) -> Result<HashNetParams> {
    cfg.validate()?;
    let mut out = theta_init.clone();
    if cfg.alpha == 0.0 {
        return Ok(out);
    }
    let mut rng = seed::rng(cfg.noise_seed, &[stream::PERTURB]);
    for t in out.tensors_mut() {
        let raw = ndarray::ArrayD::from_shape_simple_fn(t.raw_dim(), || {
            StandardNormal.sample(&mut rng)
        });
        perturb_tensor(t, raw.view(), cfg.alpha);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::arch::ArchSpec;
    use ndarray::arr1;

    fn params() -> HashNetParams {
        HashNetParams::init(&ArchSpec::resolve("tiny-conv", 3, 16).unwrap(), 16, 3).unwrap()
    }

    #[test]
    fn hand_evaluated_two_element_layer() {
        let mut w = arr1(&[3.0, 4.0]).into_dyn();
        let d = arr1(&[1.0, 1.0]).into_dyn();
        perturb_tensor(w.view_mut(), d.view(), 0.1);
        let s2 = 2f64.sqrt();
        assert!((w[0] - (3.0 + 0.3 / s2)).abs() < 1e-12);
        assert!((w[1] - (4.0 + 0.4 / s2)).abs() < 1e-12);
        assert!((w[0] - 3.2121).abs() < 1e-4 && (w[1] - 4.2828).abs() < 1e-4);
    }

    #[test]
    fn zero_alpha_is_identity() {
        let p = params();
        let cfg = PerturbationConfig { alpha: 0.0, noise_seed: 9, ..Default::default() };
        assert_eq!(perturb(&p, &cfg).unwrap(), p);
    }

    #[test]
    fn zero_weights_are_fixed_points() {
        let mut p = params();
        p.blocks[0].conv_weight.fill(0.0);
        let q = perturb(&p, &PerturbationConfig { alpha: 5.0, noise_seed: 1, ..Default::default() }).unwrap();
        assert!(q.blocks[0].conv_weight.iter().all(|&v| v == 0.0));
        // Norm shifts start at zero and stay there; scales move.
        assert!(q.blocks[1].norm_beta.iter().all(|&v| v == 0.0));
        assert_ne!(q.blocks[1].norm_gamma, p.blocks[1].norm_gamma);
    }

    #[test]
    fn negative_alpha_rejected() {
        let cfg = PerturbationConfig { alpha: -0.1, noise_seed: 0, ..Default::default() };
        assert!(perturb(&params(), &cfg).is_err());
    }

    #[test]
    fn reproducible_and_linear_in_alpha() {
        let p = params();
        let a = PerturbationConfig { alpha: 0.25, noise_seed: 11, ..Default::default() };
        let b = PerturbationConfig { alpha: 0.5, ..a.clone() };
        let qa = perturb(&p, &a).unwrap();
        assert_eq!(qa, perturb(&p, &a).unwrap());
        let qb = perturb(&p, &b).unwrap();
        for ((_, _, w0), ((_, _, wa), (_, _, wb))) in p
            .named_tensors()
            .iter()
            .zip(qa.named_tensors().iter().zip(qb.named_tensors().iter()))
        {
            for ((x0, xa), xb) in w0.iter().zip(wa.iter()).zip(wb.iter()) {
                let (da, db) = (xa - x0, xb - x0);
                assert!((db - 2.0 * da).abs() <= 1e-12 * (1.0 + x0.abs()));
            }
        }
    }
}
