//! Multi-formation: `f x f` same-class images downscaled into one `l x l`
//! canvas, and the inverse decode into `f^2` full-size images.
//!
//! Resizing is separable bilinear interpolation with half-pixel centers and
//! edge clamping, written in `a + t * (b - a)` form so constant planes pass
//! through exactly. At `f = 2` the downscale is a 2x2 box average, so patch
//! means equal source means.

use ndarray::{s, Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::Images;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormationConfig {
    /// Grid side `f`; a canvas holds `f^2` patches.
    pub factor: usize,
    pub image_side: usize,
}

impl FormationConfig {
    pub fn new(factor: usize, image_side: usize) -> Result<Self> {
        let cfg = FormationConfig { factor, image_side };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.factor >= 1, Validation, "formation factor must be >= 1");
        ensure!(
            self.image_side % self.factor == 0,
            Validation,
            "formation factor {} does not divide image side {}",
            self.factor,
            self.image_side
        );
        Ok(())
    }

    pub fn patch_count(&self) -> usize {
        self.factor * self.factor
    }

    pub fn patch_side(&self) -> usize {
        self.image_side / self.factor
    }
}

/// For each output index: source indices and interpolation weight.
fn taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * input as f64 / output as f64 - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = (pos.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of a `c x h x w` image.
pub fn resize(img: ArrayView3<'_, f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (c, h, w) = img.dim();
    let tx = taps(w, out_w);
    let ty = taps(h, out_h);
    let mut rows = Array3::zeros((c, h, out_w));
    for ch in 0..c {
        for y in 0..h {
            for (x, &(x0, x1, t)) in tx.iter().enumerate() {
                let (a, b) = (img[[ch, y, x0]], img[[ch, y, x1]]);
                rows[[ch, y, x]] = a + t * (b - a);
            }
        }
    }
    let mut out = Array3::zeros((c, out_h, out_w));
    for ch in 0..c {
        for (y, &(y0, y1, t)) in ty.iter().enumerate() {
            for x in 0..out_w {
                let (a, b) = (rows[[ch, y0, x]], rows[[ch, y1, x]]);
                out[[ch, y, x]] = a + t * (b - a);
            }
        }
    }
    out
}

/// Adjoint of `resize`: maps an output gradient back to the input grid.
pub fn resize_backward(grad: ArrayView3<'_, f64>, in_h: usize, in_w: usize) -> Array3<f64> {
    let (c, out_h, out_w) = grad.dim();
    let tx = taps(in_w, out_w);
    let ty = taps(in_h, out_h);
    let mut rows = Array3::<f64>::zeros((c, in_h, out_w));
    for ch in 0..c {
        for (y, &(y0, y1, t)) in ty.iter().enumerate() {
            for x in 0..out_w {
                let g = grad[[ch, y, x]];
                rows[[ch, y0, x]] += (1.0 - t) * g;
                rows[[ch, y1, x]] += t * g;
            }
        }
    }
    let mut out = Array3::zeros((c, in_h, in_w));
    for ch in 0..c {
        for y in 0..in_h {
            for (x, &(x0, x1, t)) in tx.iter().enumerate() {
                let g = rows[[ch, y, x]];
                out[[ch, y, x0]] += (1.0 - t) * g;
                out[[ch, y, x1]] += t * g;
            }
        }
    }
    out
}

fn check_side(side: usize, cfg: &FormationConfig) -> Result<()> {
    cfg.validate()?;
    ensure!(
        side == cfg.image_side,
        Validation,
        "image side {side} != formation side {}",
        cfg.image_side
    );
    Ok(())
}

/// Downscales `f^2` images to `l/f` and tiles them row-major into one canvas.
pub fn assemble(images: &Images, cfg: &FormationConfig) -> Result<Array3<f64>> {
    let (n, c, h, w) = images.dim();
    check_side(h, cfg)?;
    ensure!(h == w, Validation, "images must be square");
    ensure!(
        n == cfg.patch_count(),
        Validation,
        "assemble needs {} images, got {n}",
        cfg.patch_count()
    );
    let p = cfg.patch_side();
    let mut canvas = Array3::zeros((c, h, w));
    for (k, img) in images.axis_iter(Axis(0)).enumerate() {
        let (gy, gx) = (k / cfg.factor, k % cfg.factor);
        let small = resize(img, p, p);
        canvas
            .slice_mut(s![.., gy * p..(gy + 1) * p, gx * p..(gx + 1) * p])
            .assign(&small);
    }
    Ok(canvas)
}

/// Gradient of `assemble` with respect to each source image.
pub fn assemble_backward(grad_canvas: ArrayView3<'_, f64>, cfg: &FormationConfig) -> Images {
    let (c, l, _) = grad_canvas.dim();
    let p = cfg.patch_side();
    let mut out = Array4::zeros((cfg.patch_count(), c, l, l));
    for k in 0..cfg.patch_count() {
        let (gy, gx) = (k / cfg.factor, k % cfg.factor);
        let g = grad_canvas.slice(s![.., gy * p..(gy + 1) * p, gx * p..(gx + 1) * p]);
        out.index_axis_mut(Axis(0), k).assign(&resize_backward(g, l, l));
    }
    out
}

/// Splits a canvas into `f^2` patches and upscales each back to `l x l`.
pub fn decode(canvas: ArrayView3<'_, f64>, cfg: &FormationConfig) -> Result<Images> {
    let (c, h, w) = canvas.dim();
    check_side(h, cfg)?;
    ensure!(h == w, Validation, "canvas must be square");
    let p = cfg.patch_side();
    let mut out = Array4::zeros((cfg.patch_count(), c, h, w));
    for k in 0..cfg.patch_count() {
        let (gy, gx) = (k / cfg.factor, k % cfg.factor);
        let patch = canvas.slice(s![.., gy * p..(gy + 1) * p, gx * p..(gx + 1) * p]);
        out.index_axis_mut(Axis(0), k).assign(&resize(patch, h, w));
    }
    Ok(out)
}

/// Gradient of `decode` with respect to the canvas.
pub fn decode_backward(grad: &Images, cfg: &FormationConfig) -> Array3<f64> {
    let (_, c, l, _) = grad.dim();
    let p = cfg.patch_side();
    let mut canvas = Array3::zeros((c, l, l));
    for (k, g) in grad.axis_iter(Axis(0)).enumerate() {
        let (gy, gx) = (k / cfg.factor, k % cfg.factor);
        canvas
            .slice_mut(s![.., gy * p..(gy + 1) * p, gx * p..(gx + 1) * p])
            .assign(&resize_backward(g, p, p));
    }
    canvas
}

/// Decodes every canvas of a batch; output rows are canvas-major.
pub fn decode_batch(canvases: &Images, cfg: &FormationConfig) -> Result<Images> {
    if cfg.factor == 1 {
        check_side(canvases.dim().2, cfg)?;
        return Ok(canvases.clone());
    }
    let (n, c, l, _) = canvases.dim();
    let k = cfg.patch_count();
    let mut out = Array4::zeros((n * k, c, l, l));
    for (i, canvas) in canvases.axis_iter(Axis(0)).enumerate() {
        out.slice_mut(s![i * k..(i + 1) * k, .., .., ..])
            .assign(&decode(canvas, cfg)?);
    }
    Ok(out)
}

pub fn decode_batch_backward(grad: &Images, cfg: &FormationConfig) -> Images {
    if cfg.factor == 1 {
        return grad.clone();
    }
    let (nk, c, l, _) = grad.dim();
    let k = cfg.patch_count();
    let mut out = Array4::zeros((nk / k, c, l, l));
    for i in 0..nk / k {
        let g = grad.slice(s![i * k..(i + 1) * k, .., .., ..]).to_owned();
        out.index_axis_mut(Axis(0), i).assign(&decode_backward(&g, cfg));
    }
    out
}
