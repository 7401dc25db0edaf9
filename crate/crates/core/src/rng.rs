//! Deterministic seed derivation.
//!
//! Every random stream in the crate comes from a `ChaCha8Rng` whose seed is
//! derived from a base seed and a path of integer labels. The derivation is a
//! SplitMix64 fold: `h = mix(h ^ label)` for each label, starting from
//! `mix(base)`. Adding new labels elsewhere never perturbs existing streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream labels used across the crate.
pub mod stream {
    pub const DATA: u64 = 0x6461_7461;
    pub const INIT: u64 = 0x696e_6974;
    pub const SCHEDULE: u64 = 0x7363_6864;
    pub const TEST: u64 = 0x7465_7374;
    pub const TRIAL: u64 = 0x7472_6961;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(base), |h, &l| splitmix64(h ^ l))
}

pub fn stream_rng(base: u64, labels: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derivation_is_stable_and_label_sensitive() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
        let a: u64 = stream_rng(3, &[stream::DATA]).random();
        let b: u64 = stream_rng(3, &[stream::DATA]).random();
        assert_eq!(a, b);
    }
}
