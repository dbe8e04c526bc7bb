//! Center-based hashing loss: cosine distance to the class target plus a
//! quantization penalty pulling each coordinate toward ±1.

use ndarray::Array2;

use crate::error::{ensure, Error, Result};
use crate::hashing::codebook::Codebook;

const NORM_FLOOR: f64 = 1e-12;

/// A hashing objective on continuous codes. Plugins registered by name let
/// one condensed set be scored under several objectives.
pub trait HashLoss: Send + Sync {
    fn name(&self) -> &str;

    /// Batch-mean loss and its gradient with respect to `codes`.
    fn loss_and_grad(&self, codes: &Array2<f64>, labels: &[usize], book: &Codebook) -> Result<(f64, Array2<f64>)>;
}

#[derive(Debug, Clone)]
pub struct CenterLoss {
    pub quant_weight: f64,
}

impl HashLoss for CenterLoss {
    fn name(&self) -> &str {
        if self.quant_weight == 0.0 {
            "center-no-quant"
        } else {
            "center"
        }
    }

    fn loss_and_grad(&self, codes: &Array2<f64>, labels: &[usize], book: &Codebook) -> Result<(f64, Array2<f64>)> {
        center_loss(codes, labels, book, self.quant_weight)
    }
}

/// `mean_i [1 - cos(v_i, t_{y_i})] + lambda * mean((|v| - 1)^2)`.
pub fn center_loss(
    codes: &Array2<f64>,
    labels: &[usize],
    book: &Codebook,
    quant_weight: f64,
) -> Result<(f64, Array2<f64>)> {
    let (n, k) = codes.dim();
    ensure!(n == labels.len(), Validation, "{n} codes but {} labels", labels.len());
    ensure!(k == book.code_bits(), Validation, "codes have {k} bits, codebook {}", book.code_bits());
    ensure!(n > 0, Validation, "empty batch");
    let mut loss = 0.0;
    let mut grad = Array2::zeros((n, k));
    for (i, &y) in labels.iter().enumerate() {
        ensure!(y < book.num_classes(), Validation, "label {y} outside [0, {})", book.num_classes());
        let v = codes.row(i);
        let t = book.targets.row(y);
        let vn = v.dot(&v).sqrt().max(NORM_FLOOR);
        let tn = t.dot(&t).sqrt();
        let dot = v.dot(&t);
        let cos = dot / (vn * tn);
        loss += 1.0 - cos;
        // d(-cos)/dv = -t/(|v||t|) + (v.t) v / (|v|^3 |t|)
        for j in 0..k {
            grad[[i, j]] = (-t[j] / (vn * tn) + dot * v[j] / (vn * vn * vn * tn)) / n as f64;
        }
    }
    loss /= n as f64;
    if quant_weight != 0.0 {
        let m = (n * k) as f64;
        let mut q = 0.0;
        for ((i, j), &v) in codes.indexed_iter() {
            let a = v.abs() - 1.0;
            q += a * a;
            grad[[i, j]] += quant_weight * 2.0 * a * v.signum() / m;
        }
        loss += quant_weight * q / m;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("hash loss {loss}")));
    }
    Ok((loss, grad))
}

/// Resolves a plugin name. `center` uses `quant_weight`; `center-no-quant`
/// drops the quantization term.
pub fn loss_plugin(name: &str, quant_weight: f64) -> Result<Box<dyn HashLoss>> {
    match name {
        "center" => Ok(Box::new(CenterLoss { quant_weight })),
        "center-no-quant" => Ok(Box::new(CenterLoss { quant_weight: 0.0 })),
        other => Err(Error::Config(format!("unknown hashing loss plugin {other:?}"))),
    }
}

pub const PLUGINS: &[&str] = &["center", "center-no-quant"];

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn book4() -> Codebook {
        Codebook {
            targets: array![[1.0, 1.0, 1.0, 1.0], [1.0, -1.0, 1.0, -1.0]],
        }
    }

    #[test]
    fn perfect_codes_have_zero_loss() {
        let b = book4();
        let (l, _) = center_loss(&b.targets.clone(), &[0, 1], &b, 3.0).unwrap();
        assert!(l.abs() < 1e-15);
    }

    #[test]
    fn opposite_codes_cost_two() {
        let b = book4();
        let (l, _) = center_loss(&(-&b.targets), &[0, 1], &b, 0.0).unwrap();
        assert!((l - 2.0).abs() < 1e-15);
    }

    #[test]
    fn half_scale_codes_pay_only_quantization() {
        let b = book4();
        let v = b.targets.row(1).mapv(|x| 0.5 * x).insert_axis(ndarray::Axis(0));
        let (l, _) = center_loss(&v, &[1], &b, 1.0).unwrap();
        assert!((l - 0.25).abs() < 1e-15);
    }

    #[test]
    fn label_out_of_range() {
        let b = book4();
        assert!(center_loss(&b.targets.clone(), &[0, 2], &b, 0.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let b = book4();
        let v = array![[0.3, -0.8, 1.7, 0.2], [-0.4, 0.9, 0.1, -1.2]];
        let labels = [0, 1];
        let (_, g) = center_loss(&v, &labels, &b, 0.5).unwrap();
        let eps = 1e-6;
        for i in 0..2 {
            for j in 0..4 {
                let mut p = v.clone();
                p[[i, j]] += eps;
                let mut m = v.clone();
                m[[i, j]] -= eps;
                let fd = (center_loss(&p, &labels, &b, 0.5).unwrap().0
                    - center_loss(&m, &labels, &b, 0.5).unwrap().0)
                    / (2.0 * eps);
                assert!((fd - g[[i, j]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn plugin_registry() {
        assert_eq!(loss_plugin("center", 0.5).unwrap().name(), "center");
        assert_eq!(loss_plugin("center-no-quant", 0.5).unwrap().name(), "center-no-quant");
        assert!(matches!(loss_plugin("dhd", 0.5), Err(Error::Config(_))));
    }
}
