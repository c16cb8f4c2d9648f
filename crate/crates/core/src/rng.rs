//! Counter-based randomness keyed by `(seed, label, index)`.
//!
//! Every draw is addressed rather than consumed: the ChaCha key comes from
//! the seed, the stream id from the label, and the word position from the
//! index. A draw therefore never depends on how many other draws were made
//! before it or in which order a batch asked for them.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hash::fnv1a64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeterministicRng {
    seed: u64,
}

impl DeterministicRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn stream(&self, label: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a64(label.as_bytes()));
        rng
    }

    pub fn u64_at(&self, label: &str, index: u64) -> u64 {
        let mut rng = self.stream(label);
        rng.set_word_pos(u128::from(index) * 2);
        rng.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&self, label: &str, index: u64) -> f64 {
        to_unit(self.u64_at(label, index))
    }

    /// Draws for indices `0..n`; element `i` equals `uniform(label, i)`.
    pub fn uniforms(&self, label: &str, n: usize) -> Vec<f64> {
        let mut rng = self.stream(label);
        (0..n).map(|_| to_unit(rng.next_u64())).collect()
    }
}

fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
