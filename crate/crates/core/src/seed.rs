//! Seed derivation. Every stochastic step draws from its own ChaCha stream
//! keyed by the run seed plus a small tuple of stream tags, so results do not
//! depend on the order in which unrelated components consume randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with stream tags into a single 64-bit seed.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(seed), |acc, &t| splitmix(acc ^ splitmix(t)))
}

pub fn rng(seed: u64, tags: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tags))
}

/// Stream tags. Values are arbitrary but fixed.
pub mod stream {
    pub const INIT_NET: u64 = 1;
    pub const PERTURB: u64 = 2;
    pub const REAL_BATCH: u64 = 3;
    pub const AUGMENT: u64 = 4;
    pub const SYN_INIT: u64 = 5;
    pub const CORESET: u64 = 6;
    pub const TRAIN_ORDER: u64 = 7;
    pub const TRAIN_AUG: u64 = 8;
    pub const CODEBOOK: u64 = 9;
    pub const TOY: u64 = 10;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = rng(7, &[1, 2]).random();
        let b: u64 = rng(7, &[1, 2]).random();
        let c: u64 = rng(7, &[2, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
