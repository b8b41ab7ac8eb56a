//! Seed derivation for reproducible substreams.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a master
//! seed mixed with a list of integer tags (window index, scenario, purpose).
//! Two streams with different tag lists are statistically independent and the
//! mapping is stable across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The crate-wide deterministic generator.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with tags into a new 64-bit seed.
pub fn derive(master: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(master), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// A generator for the substream identified by `tags`.
pub fn stream(master: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(master, tags))
}

/// Purpose tags, so call sites never collide by accident.
pub mod purpose {
    pub const NOISE: u64 = 1;
    pub const ANOMALY: u64 = 2;
    pub const DIFFUSION_TRAIN: u64 = 3;
    pub const AGENT_INIT: u64 = 4;
    pub const AGENT_TRAIN: u64 = 5;
    pub const FEEDBACK: u64 = 6;
    pub const EXPLORE: u64 = 7;
    pub const SHUFFLE: u64 = 8;
    pub const SYNTH: u64 = 9;
    pub const DENOISE: u64 = 10;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derive_is_stable_and_tag_sensitive() {
        assert_eq!(derive(7, &[1, 2]), derive(7, &[1, 2]));
        assert_ne!(derive(7, &[1, 2]), derive(7, &[2, 1]));
        assert_ne!(derive(7, &[1]), derive(8, &[1]));
    }

    #[test]
    fn streams_reproduce() {
        let a: Vec<u32> = stream(3, &[4]).random_iter().take(8).collect();
        let b: Vec<u32> = stream(3, &[4]).random_iter().take(8).collect();
        assert_eq!(a, b);
    }
}
