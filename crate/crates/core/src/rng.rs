//! Seed derivation and random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha20 stream
//! (`rand_chacha::ChaCha20Rng`). Independent streams are obtained in two ways:
//! hierarchical keys are folded into a 64-bit seed with SplitMix64 finalizers,
//! and per-row / per-probe streams use ChaCha's 64-bit stream selector, so row
//! `i` of a dataset never depends on how many rows were requested.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// Name recorded in dataset metadata.
pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha 0.9), SplitMix64 key folding, stream = row index";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of keys into one seed. Order matters.
pub fn derive_seed(root: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(root), |acc, &k| splitmix64(acc ^ splitmix64(k.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

/// Generator for `seed`, positioned on stream `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn seeded(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
