//! Fixed ±1 class targets ("hash centers").

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::{self, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// `c x K`, entries in {-1, +1}.
    pub targets: Array2<f64>,
}

impl Codebook {
    pub fn num_classes(&self) -> usize {
        self.targets.nrows()
    }

    pub fn code_bits(&self) -> usize {
        self.targets.ncols()
    }

    pub fn min_pairwise_hamming(&self) -> Option<usize> {
        let c = self.num_classes();
        (0..c)
            .flat_map(|i| (i + 1..c).map(move |j| (i, j)))
            .map(|(i, j)| {
                self.targets
                    .row(i)
                    .iter()
                    .zip(self.targets.row(j))
                    .filter(|(a, b)| a != b)
                    .count()
            })
            .min()
    }

    /// Minimum distance every codebook must meet: `ceil(K / 4)`.
    pub fn required_distance(code_bits: usize) -> usize {
        code_bits.div_ceil(4)
    }

    fn check(&self) -> Result<()> {
        let ok_values = self.targets.iter().all(|&v| v == 1.0 || v == -1.0);
        let need = Self::required_distance(self.code_bits());
        let ok_dist = self.min_pairwise_hamming().is_none_or(|d| d >= need);
        if ok_values && ok_dist {
            Ok(())
        } else {
            Err(Error::Infeasible(format!(
                "codebook violates ±1 / min distance {need} invariant"
            )))
        }
    }
}

/// Sylvester construction of the `n x n` Hadamard matrix (`n` a power of 2).
pub fn hadamard(n: usize) -> Array2<f64> {
    assert!(n.is_power_of_two());
    let mut h = Array2::from_elem((1, 1), 1.0);
    while h.nrows() < n {
        let m = h.nrows();
        let mut next = Array2::zeros((2 * m, 2 * m));
        for i in 0..m {
            for j in 0..m {
                let v = h[[i, j]];
                next[[i, j]] = v;
                next[[i, j + m]] = v;
                next[[i + m, j]] = v;
                next[[i + m, j + m]] = -v;
            }
        }
        h = next;
    }
    h
}

const ROW_TRIES: usize = 10_000;
const RESTARTS: usize = 100;

/// Builds `c` targets of `K` bits. Uses distinct Hadamard rows when `K` is
/// a power of two and `c <= K` (pairwise distance `K/2`); otherwise random
/// rows are redrawn until every pair is at least `ceil(K/4)` apart.
pub fn build_codebook(c: usize, code_bits: usize, seed: u64) -> Result<Codebook> {
    if code_bits == 0 || c == 0 {
        return Err(Error::Infeasible("need c >= 1 and K >= 1".into()));
    }
    if code_bits < 64 && c as u128 > 1u128 << code_bits {
        return Err(Error::Infeasible(format!("{c} classes exceed 2^{code_bits} codes")));
    }
    let mut rng = seed::rng(seed, &[stream::CODEBOOK]);
    let book = if code_bits.is_power_of_two() && c <= code_bits {
        let h = hadamard(code_bits);
        let mut rows: Vec<usize> = (0..code_bits).collect();
        rows.shuffle(&mut rng);
        let mut targets = Array2::zeros((c, code_bits));
        for (dst, &src) in rows[..c].iter().enumerate() {
            targets.row_mut(dst).assign(&h.row(src));
        }
        Codebook { targets }
    } else {
        random_codebook(c, code_bits, &mut rng)?
    };
    book.check()?;
    Ok(book)
}

fn random_codebook(c: usize, k: usize, rng: &mut seed::Rng) -> Result<Codebook> {
    let need = Codebook::required_distance(k);
    'restart: for _ in 0..RESTARTS {
        let mut targets = Array2::zeros((c, k));
        for i in 0..c {
            let mut placed = false;
            for _ in 0..ROW_TRIES {
                let row: Vec<f64> = (0..k).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
                let far = (0..i).all(|j| {
                    targets.row(j).iter().zip(&row).filter(|(a, b)| a != b).count() >= need
                });
                if far {
                    targets.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'restart;
            }
        }
        return Ok(Codebook { targets });
    }
    Err(Error::Infeasible(format!(
        "could not place {c} codes of {k} bits at distance >= {need}"
    )))
}
