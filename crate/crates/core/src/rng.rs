//! Seed derivation and the per-instance random stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The deterministic generator owned by each simulated instance.
pub type SimRng = ChaCha8Rng;

/// Build the random stream for an instance from a 64-bit seed.
pub fn stream(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for sample `sample` of input `input` under `master`.
///
/// `h(m, i, j) = sm(sm(sm(m) ^ i) ^ j)` where `sm` is the SplitMix64
/// finalizer. Every Monte-Carlo sample in the crate draws its seed from
/// this function, so experiments replay bit-for-bit.
pub fn derive(master: u64, input: u64, sample: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ input) ^ sample)
}
