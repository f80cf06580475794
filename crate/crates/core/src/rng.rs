//! Deterministic random streams.
//!
//! Every stochastic choice in the toolkit (parameter init, noise offsets,
//! batch shuffling, corpus synthesis) draws from a [`SeedStream`] so that a
//! run is a pure function of its seed. ChaCha8 is used because its output
//! stream is specified and stable across platforms and crate versions.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use alloc::vec::Vec;

/// Stable 64-bit mixing (splitmix64 finalizer).
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a context path.
///
/// Used to give every utterance/epoch/layer its own independent stream that
/// does not depend on the order in which other streams were consumed.
pub fn derive_seed(base: u64, context: &[u64]) -> u64 {
    let mut acc = mix(base);
    for &c in context {
        acc = mix(acc ^ mix(c));
    }
    acc
}

/// A seeded random stream with the few sampling helpers the toolkit needs.
#[derive(Clone, Debug)]
pub struct SeedStream {
    rng: ChaCha8Rng,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent child stream identified by `context`.
    pub fn derived(base: u64, context: &[u64]) -> Self {
        SeedStream::new(derive_seed(base, context))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform sample in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        if xs.len() < 2 {
            return;
        }
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// `n` uniform samples in `[lo, hi)`.
    pub fn uniform_vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }
}
