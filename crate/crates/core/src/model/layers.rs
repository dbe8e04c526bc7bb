//! Forward and backward kernels for the convolutional blocks. All tensors
//! are NCHW, standard layout.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayViewMut2, Axis};

use crate::Images;

pub const NORM_EPS: f64 = 1e-5;

/// Unfolds one `c x h x w` sample into `(c*9) x (h*w)` patches, zero-padded.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, cols: &mut Array2<f64>) {
    let hw = h * w;
    let out = cols.as_slice_mut().expect("standard layout");
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ch * 9 + ky * 3 + kx) * hw;
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        out[row + y * w + xx] =
                            if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                x[ch * hw + sy as usize * w + sx as usize]
                            } else {
                                0.0
                            };
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatters patch gradients back onto the sample.
fn col2im(cols: &Array2<f64>, c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    let src = cols.as_slice().expect("standard layout");
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ch * 9 + ky * 3 + kx) * hw;
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dx[ch * hw + sy as usize * w + sx as usize] += src[row + y * w + xx];
                        }
                    }
                }
            }
        }
    }
}

fn weight_matrix(weight: &Array4<f64>) -> ArrayView2<'_, f64> {
    let (o, i, kh, kw) = weight.dim();
    weight
        .view()
        .into_shape_with_order((o, i * kh * kw))
        .expect("contiguous conv weight")
}

/// 3x3 convolution, stride 1, padding 1.
pub fn conv3x3_forward(x: &Images, weight: &Array4<f64>, bias: &Array1<f64>) -> Images {
    let (n, c, h, w) = x.dim();
    let o = weight.dim().0;
    let wm = weight_matrix(weight);
    let mut out = Array4::zeros((n, o, h, w));
    let mut cols = Array2::zeros((c * 9, h * w));
    for (xs, mut os) in x.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let xs = xs.as_standard_layout();
        im2col(xs.as_slice().expect("contiguous"), c, h, w, &mut cols);
        let mut om: ArrayViewMut2<f64> = os
            .view_mut()
            .into_shape_with_order((o, h * w))
            .expect("contiguous output");
        for (mut row, &b) in om.axis_iter_mut(Axis(0)).zip(bias.iter()) {
            row.fill(b);
        }
        general_mat_mul(1.0, &wm, &cols, 1.0, &mut om);
    }
    out
}

pub struct ConvGrads {
    pub input: Option<Images>,
    pub weight: Option<Array4<f64>>,
    pub bias: Option<Array1<f64>>,
}

pub fn conv3x3_backward(
    x: &Images,
    weight: &Array4<f64>,
    grad_out: &Images,
    need_input: bool,
    need_params: bool,
) -> ConvGrads {
    let (n, c, h, w) = x.dim();
    let o = weight.dim().0;
    let wm = weight_matrix(weight);
    let wt = wm.t();
    let mut dx = need_input.then(|| Array4::zeros((n, c, h, w)));
    let mut dw = need_params.then(|| Array2::zeros((o, c * 9)));
    let mut cols = Array2::zeros((c * 9, h * w));
    let mut dcols = Array2::zeros((c * 9, h * w));
    for i in 0..n {
        let go = grad_out.index_axis(Axis(0), i).as_standard_layout().into_owned();
        let gm = go
            .view()
            .into_shape_with_order((o, h * w))
            .expect("contiguous gradient");
        if let Some(dw) = dw.as_mut() {
            let xs = x.index_axis(Axis(0), i).as_standard_layout().into_owned();
            im2col(xs.as_slice().expect("contiguous"), c, h, w, &mut cols);
            general_mat_mul(1.0, &gm, &cols.t(), 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            general_mat_mul(1.0, &wt, &gm, 0.0, &mut dcols);
            let mut dxs = dx.index_axis_mut(Axis(0), i);
            col2im(&dcols, c, h, w, dxs.as_slice_mut().expect("contiguous"));
        }
    }
    let db = need_params.then(|| grad_out.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0)));
    ConvGrads {
        input: dx,
        weight: dw.map(|m| {
            m.into_shape_with_order(weight.raw_dim())
                .expect("weight-shaped gradient")
        }),
        bias: db,
    }
}

/// Instance normalization forward. Returns `(y, x_hat, inv_std)` with
/// `inv_std` shaped `n x c`.
pub fn instance_norm_forward(
    x: &Images,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
) -> (Images, Images, Array2<f64>) {
    let (n, c, h, w) = x.dim();
    let hw = (h * w) as f64;
    let mut xhat = x.clone();
    let mut y = Array4::zeros((n, c, h, w));
    let mut inv = Array2::zeros((n, c));
    for i in 0..n {
        for ch in 0..c {
            let mut plane = xhat.slice_mut(ndarray::s![i, ch, .., ..]);
            let mean = plane.sum() / hw;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            inv[[i, ch]] = is;
            plane.mapv_inplace(|v| (v - mean) * is);
            let (g, b) = (gamma[ch], beta[ch]);
            y.slice_mut(ndarray::s![i, ch, .., ..])
                .zip_mut_with(&plane, |o, &xh| *o = g * xh + b);
        }
    }
    (y, xhat, inv)
}

pub fn instance_norm_backward(
    grad_y: &Images,
    xhat: &Images,
    inv_std: &Array2<f64>,
    gamma: &Array1<f64>,
) -> (Images, Array1<f64>, Array1<f64>) {
    let (n, c, h, w) = grad_y.dim();
    let hw = (h * w) as f64;
    let mut dx = Array4::zeros((n, c, h, w));
    let mut dgamma = Array1::zeros(c);
    let mut dbeta = Array1::zeros(c);
    for i in 0..n {
        for ch in 0..c {
            let gy = grad_y.slice(ndarray::s![i, ch, .., ..]);
            let xh = xhat.slice(ndarray::s![i, ch, .., ..]);
            let sum_gy = gy.sum();
            let sum_gy_xh: f64 = gy.iter().zip(xh.iter()).map(|(a, b)| a * b).sum();
            dbeta[ch] += sum_gy;
            dgamma[ch] += sum_gy_xh;
            let g = gamma[ch];
            let is = inv_std[[i, ch]];
            let mean_dxh = g * sum_gy / hw;
            let mean_dxh_xh = g * sum_gy_xh / hw;
            ndarray::Zip::from(dx.slice_mut(ndarray::s![i, ch, .., ..]))
                .and(&gy)
                .and(&xh)
                .for_each(|d, &gyv, &xhv| *d = is * (g * gyv - mean_dxh - xhv * mean_dxh_xh));
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu_forward(x: &Images) -> Images {
    x.mapv(|v| v.max(0.0))
}

/// Gradient of ReLU, given the pre-activation.
pub fn relu_backward(grad: &Images, pre: &Images) -> Images {
    let mut g = grad.clone();
    g.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0
        }
    });
    g
}

pub fn avgpool2_forward(x: &Images) -> Images {
    let (n, c, h, w) = x.dim();
    let mut out = Array4::zeros((n, c, h / 2, w / 2));
    for ((i, ch, y, xx), o) in out.indexed_iter_mut() {
        let (sy, sx) = (2 * y, 2 * xx);
        *o = 0.25
            * (x[[i, ch, sy, sx]] + x[[i, ch, sy, sx + 1]] + x[[i, ch, sy + 1, sx]] + x[[i, ch, sy + 1, sx + 1]]);
    }
    out
}

pub fn avgpool2_backward(grad: &Images) -> Images {
    let (n, c, h, w) = grad.dim();
    let mut dx = Array4::zeros((n, c, 2 * h, 2 * w));
    for ((i, ch, y, xx), &g) in grad.indexed_iter() {
        let q = 0.25 * g;
        dx[[i, ch, 2 * y, 2 * xx]] = q;
        dx[[i, ch, 2 * y, 2 * xx + 1]] = q;
        dx[[i, ch, 2 * y + 1, 2 * xx]] = q;
        dx[[i, ch, 2 * y + 1, 2 * xx + 1]] = q;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 7-loop convolution used as an oracle for the im2col path.
    fn conv_direct(x: &Images, wt: &Array4<f64>, b: &Array1<f64>) -> Images {
        let (n, c, h, w) = x.dim();
        let o = wt.dim().0;
        let mut out = Array4::zeros((n, o, h, w));
        for i in 0..n {
            for oc in 0..o {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = b[oc];
                        for ic in 0..c {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = y as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                        acc += wt[[oc, ic, ky, kx]]
                                            * x[[i, ic, sy as usize, sx as usize]];
                                    }
                                }
                            }
                        }
                        out[[i, oc, y, xx]] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: (usize, usize, usize, usize), salt: u64) -> Array4<f64> {
        Array4::from_shape_fn(shape, |(a, b, c, d)| {
            let k = (a * 131 + b * 31 + c * 7 + d) as u64 * 2654435761 + salt;
            ((k % 1000) as f64 / 500.0) - 1.0
        })
    }

    #[test]
    fn im2col_conv_matches_direct() {
        let x = pseudo((2, 3, 5, 6), 1);
        let wt = pseudo((4, 3, 3, 3), 2);
        let b = Array1::from(vec![0.1, -0.2, 0.3, 0.0]);
        let fast = conv3x3_forward(&x, &wt, &b);
        let slow = conv_direct(&x, &wt, &b);
        for (a, e) in fast.iter().zip(slow.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> is linear in x and W; check both adjoints by inner products.
        let x = pseudo((2, 2, 4, 4), 3);
        let wt = pseudo((3, 2, 3, 3), 4);
        let g = pseudo((2, 3, 4, 4), 5);
        let zero_b = Array1::zeros(3);
        let grads = conv3x3_backward(&x, &wt, &g, true, true);
        let y = conv3x3_forward(&x, &wt, &zero_b);
        let lhs: f64 = y.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let via_x: f64 = grads.input.unwrap().iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        let via_w: f64 = grads.weight.unwrap().iter().zip(wt.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_w).abs() < 1e-10);
        let db = grads.bias.unwrap();
        assert!((db[0] - g.index_axis(Axis(1), 0).sum()).abs() < 1e-12);
    }

    #[test]
    fn pool_backward_is_adjoint() {
        let x = pseudo((1, 2, 4, 6), 6);
        let g = pseudo((1, 2, 2, 3), 7);
        let y = avgpool2_forward(&x);
        let lhs: f64 = y.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = avgpool2_backward(&g).iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn instance_norm_backward_matches_finite_differences() {
        let x = pseudo((2, 2, 3, 3), 8);
        let gamma = Array1::from(vec![1.3, 0.7]);
        let beta = Array1::from(vec![0.1, -0.4]);
        let g = pseudo((2, 2, 3, 3), 9);
        let loss = |x: &Images| {
            let (y, _, _) = instance_norm_forward(x, &gamma, &beta);
            y.iter().zip(g.iter()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, xhat, inv) = instance_norm_forward(&x, &gamma, &beta);
        let (dx, _, _) = instance_norm_backward(&g, &xhat, &inv, &gamma);
        let eps = 1e-6;
        for idx in [(0, 0, 0, 0), (1, 1, 2, 1), (0, 1, 1, 1)] {
            let mut p = x.clone();
            p[idx] += eps;
            let mut m = x.clone();
            m[idx] -= eps;
            let fd = (loss(&p) - loss(&m)) / (2.0 * eps);
            assert!((fd - dx[idx]).abs() < 1e-6, "{fd} vs {}", dx[idx]);
        }
    }
}
