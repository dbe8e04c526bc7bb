//! Forward and backward passes of `f = g ∘ h`.

use ndarray::{Array2, Axis};

use crate::error::{ensure, Result};
use crate::model::arch::NormKind;
use crate::model::layers;
use crate::model::params::HashNetParams;
use crate::Images;

const EVAL_CHUNK: usize = 256;

struct BlockTrace {
    input: Images,
    xhat: Option<(Images, Array2<f64>)>,
    pre_relu: Images,
}

/// Intermediate activations kept for a backward pass.
pub struct FeatureTrace {
    blocks: Vec<BlockTrace>,
    batch: usize,
}

impl HashNetParams {
    fn check_batch(&self, batch: &Images) -> Result<()> {
        let (_, c, h, w) = batch.dim();
        let a = &self.arch;
        ensure!(
            c == a.in_channels && h == a.input_side && w == a.input_side,
            Validation,
            "{} expects {}x{}x{} inputs, got {c}x{h}x{w}",
            a.id,
            a.in_channels,
            a.input_side,
            a.input_side
        );
        Ok(())
    }

    fn run_blocks(&self, batch: &Images, keep: bool) -> (Images, Vec<BlockTrace>) {
        let mut x = batch.clone();
        let mut traces = Vec::new();
        for b in &self.blocks {
            let conv = layers::conv3x3_forward(&x, &b.conv_weight, &b.conv_bias);
            let (pre, xhat) = match self.arch.norm {
                NormKind::Instance => {
                    let (y, xh, inv) = layers::instance_norm_forward(&conv, &b.norm_gamma, &b.norm_beta);
                    (y, Some((xh, inv)))
                }
                NormKind::None => (conv, None),
            };
            let act = layers::relu_forward(&pre);
            let pooled = layers::avgpool2_forward(&act);
            if keep {
                traces.push(BlockTrace {
                    input: std::mem::replace(&mut x, pooled),
                    xhat,
                    pre_relu: pre,
                });
            } else {
                x = pooled;
            }
        }
        (x, traces)
    }

    fn flatten(x: Images) -> Array2<f64> {
        let n = x.dim().0;
        let d = x.len() / n.max(1);
        x.into_shape_with_order((n, d)).expect("contiguous activations")
    }

    /// Pooled, flattened activations of the final block (`h(x)`).
    pub fn extract_features(&self, batch: &Images) -> Result<Array2<f64>> {
        self.check_batch(batch)?;
        let n = batch.dim().0;
        let mut out = Array2::zeros((n, self.feature_dim()));
        let mut start = 0;
        while start < n {
            let end = (start + EVAL_CHUNK).min(n);
            let chunk = batch.slice(ndarray::s![start..end, .., .., ..]).to_owned();
            let (x, _) = self.run_blocks(&chunk, false);
            out.slice_mut(ndarray::s![start..end, ..]).assign(&Self::flatten(x));
            start = end;
        }
        Ok(out)
    }

    /// Like `extract_features`, keeping what `features_backward` needs.
    pub fn features_traced(&self, batch: &Images) -> Result<(Array2<f64>, FeatureTrace)> {
        self.check_batch(batch)?;
        let (x, blocks) = self.run_blocks(batch, true);
        Ok((
            Self::flatten(x),
            FeatureTrace {
                blocks,
                batch: batch.dim().0,
            },
        ))
    }

    /// Backpropagates `grad_features` (`n x feature_dim`). Returns the input
    /// gradient and/or gradients for the feature-extractor tensors (hash head
    /// entries are zero).
    pub fn features_backward(
        &self,
        trace: &FeatureTrace,
        grad_features: &Array2<f64>,
        need_input: bool,
        need_params: bool,
    ) -> (Option<Images>, Option<HashNetParams>) {
        let fs = self.arch.final_side();
        let mut g = grad_features
            .to_owned()
            .into_shape_with_order((trace.batch, self.arch.width, fs, fs))
            .expect("feature gradient shape");
        let mut grads = need_params.then(|| self.zeros_like());
        let last = self.blocks.len();
        for (bi, (b, t)) in self.blocks.iter().zip(&trace.blocks).enumerate().rev() {
            let g_act = layers::avgpool2_backward(&g);
            let g_pre = layers::relu_backward(&g_act, &t.pre_relu);
            let g_conv = match &t.xhat {
                Some((xh, inv)) => {
                    let (dx, dgamma, dbeta) = layers::instance_norm_backward(&g_pre, xh, inv, &b.norm_gamma);
                    if let Some(gr) = grads.as_mut() {
                        gr.blocks[bi].norm_gamma = dgamma;
                        gr.blocks[bi].norm_beta = dbeta;
                    }
                    dx
                }
                None => g_pre,
            };
            let want_input = bi > 0 || need_input;
            let cg = layers::conv3x3_backward(&t.input, &b.conv_weight, &g_conv, want_input, need_params);
            if let Some(gr) = grads.as_mut() {
                gr.blocks[bi].conv_weight = cg.weight.expect("requested");
                gr.blocks[bi].conv_bias = cg.bias.expect("requested");
            }
            match cg.input {
                Some(dx) => g = dx,
                None => {
                    debug_assert!(bi == 0 && last > 0);
                    return (None, grads);
                }
            }
        }
        (need_input.then_some(g), grads)
    }

    /// `g(z) = z W + b`.
    pub fn hash_head(&self, features: &Array2<f64>) -> Array2<f64> {
        let mut v = features.dot(&self.hash_weight);
        v += &self.hash_bias.view().insert_axis(Axis(0));
        v
    }

    /// Continuous codes `g(h(x))`, `n x code_bits`. No binarization.
    pub fn hash_forward(&self, batch: &Images) -> Result<Array2<f64>> {
        Ok(self.hash_head(&self.extract_features(batch)?))
    }

    /// Gradient of a loss on the codes with respect to every parameter,
    /// given the traced features. Returns the full parameter gradient.
    pub fn codes_backward(
        &self,
        trace: &FeatureTrace,
        features: &Array2<f64>,
        grad_codes: &Array2<f64>,
    ) -> HashNetParams {
        let grad_features = grad_codes.dot(&self.hash_weight.t());
        let (_, grads) = self.features_backward(trace, &grad_features, false, true);
        let mut grads = grads.expect("requested");
        grads.hash_weight = features.t().dot(grad_codes);
        grads.hash_bias = grad_codes.sum_axis(Axis(0));
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::arch::ArchSpec;
    use ndarray::Array4;

    fn tiny(bits: usize, seed: u64) -> HashNetParams {
        HashNetParams::init(&ArchSpec::resolve("tiny-conv", 3, 16).unwrap(), bits, seed).unwrap()
    }

    fn batch(n: usize, side: usize) -> Images {
        Array4::from_shape_fn((n, 3, side, side), |(i, c, y, x)| {
            ((i * 17 + c * 5 + y * 3 + x) % 11) as f64 / 5.0 - 1.0
        })
    }

    #[test]
    fn tiny_conv_feature_and_code_shapes() {
        let p = tiny(16, 1);
        let x = batch(4, 16);
        assert_eq!(p.extract_features(&x).unwrap().dim(), (4, 512));
        let v = p.hash_forward(&x).unwrap();
        assert_eq!(v.dim(), (4, 16));
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn empty_batch_gives_empty_features() {
        let p = tiny(16, 1);
        let f = p.extract_features(&Array4::zeros((0, 3, 16, 16))).unwrap();
        assert_eq!(f.dim(), (0, 512));
    }

    #[test]
    fn identical_images_identical_rows() {
        let p = tiny(8, 2);
        let one = batch(1, 16);
        let two = ndarray::concatenate![Axis(0), one, one];
        let f = p.extract_features(&two).unwrap();
        assert_eq!(f.row(0), f.row(1));
        assert_eq!(p.extract_features(&two).unwrap(), f);
    }

    #[test]
    fn shape_mismatch_is_validation_error() {
        let p = tiny(8, 2);
        assert!(p.extract_features(&batch(2, 8)).is_err());
    }

    #[test]
    fn hash_forward_composes_head_and_extractor() {
        let p = tiny(8, 3);
        let x = batch(3, 16);
        let direct = p.hash_forward(&x).unwrap();
        let composed = p.hash_head(&p.extract_features(&x).unwrap());
        for (a, b) in direct.iter().zip(composed.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_head_gives_zero_codes() {
        let mut p = tiny(8, 3);
        p.hash_weight.fill(0.0);
        p.hash_bias.fill(0.0);
        assert!(p.hash_forward(&batch(2, 16)).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn traced_features_match_untraced() {
        let p = tiny(8, 4);
        let x = batch(3, 16);
        let (f, _) = p.features_traced(&x).unwrap();
        assert_eq!(f, p.extract_features(&x).unwrap());
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let arch = ArchSpec::resolve("conv-w3-d1", 3, 4).unwrap();
        let p = HashNetParams::init(&arch, 4, 9).unwrap();
        let x = batch(2, 4);
        let target = Array2::from_shape_fn((2, 4), |(i, j)| (i + j) as f64 * 0.1);
        let loss = |p: &HashNetParams| {
            let v = p.hash_forward(&x).unwrap();
            0.5 * (&v - &target).mapv(|d| d * d).sum()
        };
        let (f, tr) = p.features_traced(&x).unwrap();
        let v = p.hash_head(&f);
        let grads = p.codes_backward(&tr, &f, &(&v - &target));
        let eps = 1e-6;
        let n_tensors = p.named_tensors().len();
        for ti in 0..n_tensors {
            let analytic: Vec<f64> = grads.named_tensors()[ti].2.iter().copied().collect();
            for k in [0, analytic.len() / 2, analytic.len() - 1] {
                let mut plus = p.clone();
                plus.tensors_mut()[ti].as_slice_mut().unwrap()[k] += eps;
                let mut minus = p.clone();
                minus.tensors_mut()[ti].as_slice_mut().unwrap()[k] -= eps;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                assert!(
                    (fd - analytic[k]).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "tensor {ti} entry {k}: fd {fd} analytic {}",
                    analytic[k]
                );
            }
        }
    }
}
