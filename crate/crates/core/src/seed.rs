//! Seed derivation. Every random stream in the crate descends from one root
//! seed through [`derive`]; nothing draws from ambient entropy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a root seed with a path of integers (stream tag, ordinal, epoch...).
///
/// Plain XOR of the parts would collide for swapped values, e.g. window 1 in
/// epoch 2 and window 2 in epoch 1; chaining through a mixer does not.
pub fn derive(root: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shorthand for `rng(derive(root, parts))`.
pub fn derived_rng(root: u64, parts: &[u64]) -> ChaCha8Rng {
    rng(derive(root, parts))
}

/// Stream tags, so unrelated consumers of one root seed never share a stream.
pub mod stream {
    pub const CORPUS: u64 = 1;
    pub const INIT: u64 = 2;
    pub const MASK: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const SUBSAMPLE: u64 = 6;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_matters() {
        assert_ne!(derive(7, &[1, 2]), derive(7, &[2, 1]));
        assert_ne!(derive(7, &[1]), derive(8, &[1]));
        assert_eq!(derive(7, &[1, 2]), derive(7, &[1, 2]));
    }
}
