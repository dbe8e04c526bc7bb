//! Class-wise embedding-mean discrepancy.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};

use crate::augment::{apply_aug, apply_aug_backward, AugmentationParams};
use crate::error::{ensure, Result};
use crate::model::{FeatureTrace, HashNetParams};
use crate::Images;

/// A differentiable map from an image batch to `n x d` embeddings.
pub trait Embedder {
    type Trace;

    fn embed(&self, batch: &Images) -> Result<Array2<f64>>;

    fn embed_traced(&self, batch: &Images) -> Result<(Array2<f64>, Self::Trace)>;

    /// Input gradient given the gradient of the embeddings.
    fn embed_backward(&self, trace: &Self::Trace, grad: &Array2<f64>) -> Images;
}

impl Embedder for HashNetParams {
    type Trace = FeatureTrace;

    fn embed(&self, batch: &Images) -> Result<Array2<f64>> {
        self.extract_features(batch)
    }

    fn embed_traced(&self, batch: &Images) -> Result<(Array2<f64>, FeatureTrace)> {
        self.features_traced(batch)
    }

    fn embed_backward(&self, trace: &FeatureTrace, grad: &Array2<f64>) -> Images {
        self.features_backward(trace, grad, true, false)
            .0
            .expect("input gradient requested")
    }
}

fn mean_rows(x: &Array2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()))
}

/// Mean embedding of an augmented real batch. Real images are constants.
pub fn real_mean<E: Embedder>(net: &E, real: &Images, w: &AugmentationParams) -> Result<Array1<f64>> {
    ensure!(real.dim().0 > 0, Validation, "empty real batch");
    Ok(mean_rows(&net.embed(&apply_aug(real, w)?)?))
}

/// One class term `||mu_real - mu_syn||^2` and its gradient with respect to
/// the synthetic batch (before augmentation).
pub fn class_term<E: Embedder>(
    net: &E,
    real_mean: &Array1<f64>,
    syn: &Images,
    w: &AugmentationParams,
) -> Result<(f64, Images)> {
    let n = syn.dim().0;
    ensure!(n > 0, Validation, "empty synthetic batch");
    let (feat, trace) = net.embed_traced(&apply_aug(syn, w)?)?;
    let diff = real_mean - &mean_rows(&feat);
    let loss = diff.dot(&diff);
    let row = diff.mapv(|d| -2.0 * d / n as f64);
    let grad_feat = row.broadcast((n, row.len())).expect("broadcast row").to_owned();
    let grad_aug = net.embed_backward(&trace, &grad_feat);
    Ok((loss, apply_aug_backward(&grad_aug, w)?))
}

fn check_classes<T, U, V>(
    real: &BTreeMap<usize, T>,
    syn: &BTreeMap<usize, U>,
    w: &BTreeMap<usize, V>,
) -> Result<()> {
    ensure!(
        real.keys().eq(syn.keys()) && real.keys().eq(w.keys()),
        Validation,
        "real, synthetic and augmentation maps cover different classes ({:?} / {:?} / {:?})",
        real.keys().collect::<Vec<_>>(),
        syn.keys().collect::<Vec<_>>(),
        w.keys().collect::<Vec<_>>()
    );
    Ok(())
}

/// `sum_c || mean psi(a_w(real_c)) - mean psi(a_w(syn_c)) ||^2`, with one
/// shared `w` per class. Classes are reduced in ascending id order.
pub fn matching_loss<E: Embedder>(
    net: &E,
    real: &BTreeMap<usize, Images>,
    syn: &BTreeMap<usize, Images>,
    w: &BTreeMap<usize, AugmentationParams>,
) -> Result<f64> {
    check_classes(real, syn, w)?;
    let mut total = 0.0;
    for (c, r) in real {
        let mr = real_mean(net, r, &w[c])?;
        let ms = mean_rows(&net.embed(&apply_aug(&syn[c], &w[c])?)?);
        let d = &mr - &ms;
        total += d.dot(&d);
    }
    Ok(total)
}

/// `matching_loss` together with its gradient for every synthetic batch.
pub fn matching_loss_grad<E: Embedder>(
    net: &E,
    real: &BTreeMap<usize, Images>,
    syn: &BTreeMap<usize, Images>,
    w: &BTreeMap<usize, AugmentationParams>,
) -> Result<(f64, BTreeMap<usize, Images>)> {
    check_classes(real, syn, w)?;
    let mut total = 0.0;
    let mut grads = BTreeMap::new();
    for (c, r) in real {
        let mr = real_mean(net, r, &w[c])?;
        let (l, g) = class_term(net, &mr, &syn[c], &w[c])?;
        total += l;
        grads.insert(*c, g);
    }
    Ok((total, grads))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ndarray::Array4;

    /// Embeds each image as its scalar mean pixel.
    pub struct MeanPixel;

    impl Embedder for MeanPixel {
        type Trace = (usize, [usize; 3]);

        fn embed(&self, batch: &Images) -> Result<Array2<f64>> {
            let n = batch.dim().0;
            Ok(Array2::from_shape_fn((n, 1), |(i, _)| {
                batch.index_axis(Axis(0), i).mean().unwrap()
            }))
        }

        fn embed_traced(&self, batch: &Images) -> Result<(Array2<f64>, Self::Trace)> {
            let (n, c, h, w) = batch.dim();
            Ok((self.embed(batch)?, (n, [c, h, w])))
        }

        fn embed_backward(&self, t: &Self::Trace, grad: &Array2<f64>) -> Images {
            let (n, [c, h, w]) = *t;
            let k = (c * h * w) as f64;
            Array4::from_shape_fn((n, c, h, w), |(i, _, _, _)| grad[[i, 0]] / k)
        }
    }

    fn filled(n: usize, v: f64) -> Images {
        Array4::from_elem((n, 1, 4, 4), v)
    }

    fn ident() -> AugmentationParams {
        AugmentationParams::identity(4)
    }

    #[test]
    fn stub_single_class_gap() {
        let real = BTreeMap::from([(0, filled(3, 1.0))]);
        let syn = BTreeMap::from([(0, filled(2, 0.5))]);
        let w = BTreeMap::from([(0, ident())]);
        let l = matching_loss(&MeanPixel, &real, &syn, &w).unwrap();
        assert!((l - 0.25).abs() < 1e-15);
    }

    #[test]
    fn stub_two_classes_sum() {
        let real = BTreeMap::from([(0, filled(2, 1.0)), (1, filled(2, 0.7))]);
        let syn = BTreeMap::from([(0, filled(1, 0.5)), (1, filled(1, 0.5))]);
        let w = BTreeMap::from([(0, ident()), (1, ident())]);
        let (l, g) = matching_loss_grad(&MeanPixel, &real, &syn, &w).unwrap();
        assert!((l - 0.29).abs() < 1e-12);
        // d/ds of (r - mean(s))^2 spread over 16 pixels.
        assert!((g[&0][[0, 0, 0, 0]] - (-2.0 * 0.5 / 16.0)).abs() < 1e-15);
    }

    #[test]
    fn identical_batches_give_zero() {
        let x = Array4::from_shape_fn((3, 1, 4, 4), |(i, _, y, x)| (i + y * x) as f64);
        let real = BTreeMap::from([(0, x.clone())]);
        let syn = BTreeMap::from([(0, x)]);
        let w = BTreeMap::from([(0, ident())]);
        assert_eq!(matching_loss(&MeanPixel, &real, &syn, &w).unwrap(), 0.0);
    }

    #[test]
    fn class_mismatch_rejected() {
        let real = BTreeMap::from([(0, filled(1, 1.0))]);
        let syn = BTreeMap::from([(1, filled(1, 1.0))]);
        let w = BTreeMap::from([(0, ident())]);
        assert!(matching_loss(&MeanPixel, &real, &syn, &w).is_err());
    }
}
