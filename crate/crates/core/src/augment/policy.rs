//! Shared-parameter differentiable augmentation. One sampled parameter
//! record `w` is applied to every image of a batch, and the same record is
//! used for the paired real and synthetic batches of a class.
//!
//! Every transform is affine in the input pixels, so the backward pass only
//! needs `w`.

use ndarray::{s, Array4, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::seed::Rng;
use crate::Images;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    Identity,
    /// Strength: maximum translation as a fraction of the image side.
    Crop,
    /// Strength: flip probability.
    Flip,
    /// Strength: half-width of the additive shift range.
    Brightness,
    /// Strength: half-width of the scale range around 1.
    Contrast,
    /// Strength: box side as a fraction of the image side.
    Cutout,
}

impl std::str::FromStr for AugKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown augmentation kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugStep {
    pub kind: AugKind,
    #[serde(default)]
    pub strength: f64,
}

/// Ordered list of enabled transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AugPolicy(pub Vec<AugStep>);

impl Default for AugPolicy {
    /// crop (pad l/8), horizontal flip, brightness and contrast jitter,
    /// cutout (l/4).
    fn default() -> Self {
        AugPolicy(vec![
            AugStep { kind: AugKind::Crop, strength: 0.125 },
            AugStep { kind: AugKind::Flip, strength: 0.5 },
            AugStep { kind: AugKind::Brightness, strength: 0.5 },
            AugStep { kind: AugKind::Contrast, strength: 0.5 },
            AugStep { kind: AugKind::Cutout, strength: 0.25 },
        ])
    }
}

impl AugPolicy {
    pub fn identity() -> Self {
        AugPolicy(vec![AugStep { kind: AugKind::Identity, strength: 0.0 }])
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("augmentation policy: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.0.is_empty(), Config, "augmentation policy is empty; use identity explicitly");
        for st in &self.0 {
            ensure!(
                st.strength.is_finite() && st.strength >= 0.0,
                Config,
                "augmentation strength must be finite and >= 0"
            );
            if matches!(st.kind, AugKind::Flip) {
                ensure!(st.strength <= 1.0, Config, "flip probability above 1");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugOp {
    Shift { dy: i64, dx: i64 },
    Flip,
    Brightness { shift: f64 },
    Contrast { scale: f64 },
    Cutout { y0: usize, x0: usize, side: usize },
}

/// One concrete draw `w`. Empty means identity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub image_side: usize,
    pub ops: Vec<AugOp>,
}

impl AugmentationParams {
    pub fn identity(image_side: usize) -> Self {
        AugmentationParams { image_side, ops: Vec::new() }
    }

    pub fn is_identity(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn flip(&self) -> bool {
        self.ops.iter().filter(|o| matches!(o, AugOp::Flip)).count() % 2 == 1
    }
}

pub fn sample_aug(policy: &AugPolicy, image_side: usize, rng: &mut Rng) -> Result<AugmentationParams> {
    policy.validate()?;
    let l = image_side;
    let mut ops = Vec::new();
    for st in &policy.0 {
        match st.kind {
            AugKind::Identity => {}
            AugKind::Crop => {
                let pad = (st.strength * l as f64).round() as i64;
                if pad > 0 {
                    ops.push(AugOp::Shift {
                        dy: rng.random_range(-pad..=pad),
                        dx: rng.random_range(-pad..=pad),
                    });
                }
            }
            AugKind::Flip => {
                if rng.random::<f64>() < st.strength {
                    ops.push(AugOp::Flip);
                }
            }
            AugKind::Brightness => {
                if st.strength > 0.0 {
                    ops.push(AugOp::Brightness {
                        shift: rng.random_range(-st.strength..=st.strength),
                    });
                }
            }
            AugKind::Contrast => {
                if st.strength > 0.0 {
                    ops.push(AugOp::Contrast {
                        scale: rng.random_range(1.0 - st.strength..=1.0 + st.strength),
                    });
                }
            }
            AugKind::Cutout => {
                let side = ((st.strength * l as f64).round() as usize).min(l);
                if side > 0 {
                    ops.push(AugOp::Cutout {
                        y0: rng.random_range(0..=l - side),
                        x0: rng.random_range(0..=l - side),
                        side,
                    });
                }
            }
        }
    }
    Ok(AugmentationParams { image_side: l, ops })
}

fn shift(x: &Images, dy: i64, dx: i64) -> Images {
    let (_, _, h, w) = x.dim();
    let mut out = Array4::zeros(x.raw_dim());
    let (h, w, dy, dx) = (h as isize, w as isize, dy as isize, dx as isize);
    // out[y][x] = in[y - dy][x - dx]
    let ys = (dy.max(0), (h + dy).min(h));
    let xs = (dx.max(0), (w + dx).min(w));
    if ys.0 < ys.1 && xs.0 < xs.1 {
        out.slice_mut(s![.., .., ys.0..ys.1, xs.0..xs.1]).assign(&x.slice(s![
            ..,
            ..,
            ys.0 - dy..ys.1 - dy,
            xs.0 - dx..xs.1 - dx
        ]));
    }
    out
}

fn flip(x: &Images) -> Images {
    x.slice(s![.., .., .., ..;-1]).as_standard_layout().into_owned()
}

/// Adds `(1 - scale) * mean(x_i) ` back after scaling, per image, over all
/// channels and pixels. This is self-adjoint.
fn contrast(x: &Images, scale: f64) -> Images {
    let mut out = x.clone();
    for mut img in out.axis_iter_mut(Axis(0)) {
        let m = img.mean().unwrap_or(0.0);
        img.mapv_inplace(|v| scale * v + (1.0 - scale) * m);
    }
    out
}

fn cutout(x: &Images, y0: usize, x0: usize, side: usize) -> Images {
    let mut out = x.clone();
    out.slice_mut(s![.., .., y0..y0 + side, x0..x0 + side]).fill(0.0);
    out
}

fn check(batch: &Images, w: &AugmentationParams) -> Result<()> {
    let (_, _, h, wd) = batch.dim();
    ensure!(
        h == w.image_side && wd == w.image_side,
        Validation,
        "augmentation drawn for side {}, batch is {h}x{wd}",
        w.image_side
    );
    Ok(())
}

/// Applies `w` to every image of `batch`.
pub fn apply_aug(batch: &Images, w: &AugmentationParams) -> Result<Images> {
    check(batch, w)?;
    let mut x = batch.clone();
    for op in &w.ops {
        x = match *op {
            AugOp::Shift { dy, dx } => shift(&x, dy, dx),
            AugOp::Flip => flip(&x),
            AugOp::Brightness { shift } => x + shift,
            AugOp::Contrast { scale } => contrast(&x, scale),
            AugOp::Cutout { y0, x0, side } => cutout(&x, y0, x0, side),
        };
    }
    Ok(x)
}

/// Vector-Jacobian product of `apply_aug` at any input.
pub fn apply_aug_backward(grad: &Images, w: &AugmentationParams) -> Result<Images> {
    check(grad, w)?;
    let mut g = grad.clone();
    for op in w.ops.iter().rev() {
        g = match *op {
            AugOp::Shift { dy, dx } => shift(&g, -dy, -dx),
            AugOp::Flip => flip(&g),
            AugOp::Brightness { .. } => g,
            AugOp::Contrast { scale } => contrast(&g, scale),
            AugOp::Cutout { y0, x0, side } => cutout(&g, y0, x0, side),
        };
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn pseudo(n: usize, l: usize, salt: usize) -> Images {
        Array4::from_shape_fn((n, 3, l, l), |(a, b, c, d)| {
            (((a * 7 + b * 13 + c * 31 + d * 17 + salt) * 2654435761usize) % 1000) as f64 / 500.0 - 1.0
        })
    }

    #[test]
    fn identity_policy_is_noop() {
        let w = sample_aug(&AugPolicy::identity(), 8, &mut seed::rng(1, &[])).unwrap();
        assert!(w.is_identity());
        let x = pseudo(2, 8, 0);
        assert_eq!(apply_aug(&x, &w).unwrap(), x);
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = AugPolicy::default();
        let a = sample_aug(&p, 32, &mut seed::rng(5, &[])).unwrap();
        let b = sample_aug(&p, 32, &mut seed::rng(5, &[])).unwrap();
        assert_eq!(a, b);
        let x = pseudo(2, 32, 1);
        assert_eq!(apply_aug(&x, &a).unwrap(), apply_aug(&x, &b).unwrap());
    }

    #[test]
    fn flip_only_policy_draws_both_outcomes() {
        let p = AugPolicy(vec![AugStep { kind: AugKind::Flip, strength: 0.5 }]);
        let mut seen = [false; 2];
        for s in 0..64 {
            let w = sample_aug(&p, 8, &mut seed::rng(s, &[])).unwrap();
            assert!(w.ops.iter().all(|o| matches!(o, AugOp::Flip)));
            seen[w.flip() as usize] = true;
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn flip_is_an_involution() {
        let w = AugmentationParams { image_side: 8, ops: vec![AugOp::Flip] };
        let x = pseudo(2, 8, 2);
        let once = apply_aug(&x, &w).unwrap();
        assert_ne!(once, x);
        assert_eq!(apply_aug(&once, &w).unwrap(), x);
    }

    #[test]
    fn brightness_shifts_the_mean() {
        let w = AugmentationParams { image_side: 8, ops: vec![AugOp::Brightness { shift: 0.37 }] };
        let x = pseudo(3, 8, 3);
        let out = apply_aug(&x, &w).unwrap();
        let d = out.mean().unwrap() - x.mean().unwrap();
        assert!((d - 0.37).abs() < 1e-6);
    }

    #[test]
    fn unknown_kind_is_config_error() {
        let v = serde_json::json!([{ "kind": "rotate", "strength": 0.1 }]);
        assert!(matches!(AugPolicy::from_json(&v), Err(Error::Config(_))));
        assert!(matches!("warp".parse::<AugKind>(), Err(Error::Config(_))));
        assert_eq!("cutout".parse::<AugKind>().unwrap(), AugKind::Cutout);
    }

    #[test]
    fn side_mismatch_rejected() {
        let w = AugmentationParams::identity(16);
        assert!(apply_aug(&pseudo(1, 8, 0), &w).is_err());
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // apply_aug is affine: A x + b. Check <A x, g> == <x, A^T g>.
        let l = 16;
        for s in 0..8 {
            let w = sample_aug(&AugPolicy::default(), l, &mut seed::rng(s, &[])).unwrap();
            let x = pseudo(2, l, 4);
            let g = pseudo(2, l, 9);
            let ax_b = apply_aug(&x, &w).unwrap();
            let b = apply_aug(&Array4::zeros(x.raw_dim()), &w).unwrap();
            let lhs: f64 = (&ax_b - &b).iter().zip(g.iter()).map(|(a, c)| a * c).sum();
            let atg = apply_aug_backward(&g, &w).unwrap();
            let rhs: f64 = atg.iter().zip(x.iter()).map(|(a, c)| a * c).sum();
            assert!((lhs - rhs).abs() < 1e-9, "seed {s}: {lhs} vs {rhs}");
        }
    }
}
