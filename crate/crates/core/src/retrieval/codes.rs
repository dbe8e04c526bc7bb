use ndarray::Array2;

use crate::error::{ensure, Result};

/// Sign-binarized codes packed into 64-bit words, one row per item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCodes {
    bits: usize,
    words: usize,
    data: Vec<u64>,
    pub labels: Vec<usize>,
}

impl BinaryCodes {
    /// Packs explicit bit rows.
    pub fn from_bits(rows: &[Vec<bool>], labels: Vec<usize>) -> Result<Self> {
        ensure!(rows.len() == labels.len(), Validation, "{} rows but {} labels", rows.len(), labels.len());
        let bits = rows.first().map_or(0, Vec::len);
        ensure!(rows.iter().all(|r| r.len() == bits), Validation, "ragged bit rows");
        let words = bits.div_ceil(64);
        let mut data = vec![0u64; rows.len() * words];
        for (i, row) in rows.iter().enumerate() {
            for (b, &on) in row.iter().enumerate() {
                if on {
                    data[i * words + b / 64] |= 1 << (b % 64);
                }
            }
        }
        Ok(BinaryCodes { bits, words, data, labels })
    }

    pub fn code_bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.data[i * self.words..(i + 1) * self.words]
    }

    pub fn bit(&self, i: usize, b: usize) -> bool {
        self.row(i)[b / 64] >> (b % 64) & 1 == 1
    }

    pub fn distance(&self, i: usize, other: &BinaryCodes, j: usize) -> u32 {
        self.row(i).iter().zip(other.row(j)).map(|(a, b)| (a ^ b).count_ones()).sum()
    }
}

/// Bit is set iff the value is `>= 0`; exact zeros map to 1.
pub fn binarize(v: &Array2<f64>, labels: Vec<usize>) -> Result<BinaryCodes> {
    let (n, k) = v.dim();
    ensure!(n == labels.len(), Validation, "{n} codes but {} labels", labels.len());
    let words = k.div_ceil(64);
    let mut data = vec![0u64; n * words];
    for ((i, b), &x) in v.indexed_iter() {
        if x >= 0.0 {
            data[i * words + b / 64] |= 1 << (b % 64);
        }
    }
    Ok(BinaryCodes { bits: k, words, data, labels })
}

/// Database indices by ascending Hamming distance, ties by ascending index.
pub fn hamming_rank(queries: &BinaryCodes, q: usize, db: &BinaryCodes) -> Result<Vec<usize>> {
    ensure!(
        queries.bits == db.bits,
        Validation,
        "code length mismatch: query {} bits, database {} bits",
        queries.bits,
        db.bits
    );
    let dist: Vec<u32> = (0..db.len()).map(|j| queries.distance(q, db, j)).collect();
    // Counting sort over distances 0..=K is stable by construction.
    let mut buckets = vec![Vec::new(); db.bits + 1];
    for (j, &d) in dist.iter().enumerate() {
        buckets[d as usize].push(j);
    }
    Ok(buckets.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sign_rule_with_zero_tie() {
        let c = binarize(&array![[0.3, -0.7, 0.0]], vec![0]).unwrap();
        assert_eq!((0..3).map(|b| c.bit(0, b)).collect::<Vec<_>>(), [true, false, true]);
    }

    #[test]
    fn positive_scale_invariance() {
        let v = array![[0.3, -0.7, 0.0, 2.0], [-1.0, 1.0, -0.1, 0.1]];
        assert_eq!(binarize(&v, vec![0, 1]).unwrap(), binarize(&(&v * 2.0), vec![0, 1]).unwrap());
    }

    #[test]
    fn all_positive_is_all_ones() {
        let c = binarize(&Array2::from_elem((1, 70), 0.5), vec![0]).unwrap();
        assert!((0..70).all(|b| c.bit(0, b)));
        assert_eq!(c.row(0)[1].count_ones(), 6);
    }

    fn parse(rows: &[&str]) -> BinaryCodes {
        let bits = rows.iter().map(|r| r.chars().map(|c| c == '1').collect()).collect::<Vec<_>>();
        BinaryCodes::from_bits(&bits, vec![0; rows.len()]).unwrap()
    }

    #[test]
    fn hand_ranking() {
        let q = parse(&["1011"]);
        let db = parse(&["0010", "1011", "1111"]);
        assert_eq!((0..3).map(|j| q.distance(0, &db, j)).collect::<Vec<_>>(), [2, 0, 1]);
        assert_eq!(hamming_rank(&q, 0, &db).unwrap(), [1, 2, 0]);
    }

    #[test]
    fn complement_is_last() {
        let q = parse(&["10110010101100101011001010110010"]);
        let comp: String = "10110010101100101011001010110010".chars().map(|c| if c == '1' { '0' } else { '1' }).collect();
        let db = parse(&[&comp, "10110010101100101011001010110010", "00110010101100101011001010110010"]);
        assert_eq!(q.distance(0, &db, 0), 32);
        assert_eq!(hamming_rank(&q, 0, &db).unwrap(), [1, 2, 0]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let err = hamming_rank(&parse(&["101"]), 0, &parse(&["1010"])).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Validation);
    }
}
