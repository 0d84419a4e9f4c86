//! Keyed uniform streams.
//!
//! Every replicate draws from its own ChaCha8 stream whose 256-bit key is the
//! little-endian concatenation of `(seed, n_spacings, k, replicate)`. Distinct
//! tuples give distinct keys, so replicate streams never overlap.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub n_spacings: u64,
    pub k: u64,
    pub replicate: u64,
}

impl StreamKey {
    pub fn new(seed: u64, n_spacings: u64, k: u64, replicate: u64) -> Self {
        StreamKey {
            seed,
            n_spacings,
            k,
            replicate,
        }
    }

    pub fn to_bytes(self) -> [u8; 32] {
        let mut key = [0u8; 32];
        for (chunk, word) in
            key.chunks_exact_mut(8)
                .zip([self.seed, self.n_spacings, self.k, self.replicate])
        {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        key
    }

    pub fn stream(self) -> UniformStream {
        UniformStream {
            rng: ChaCha8Rng::from_seed(self.to_bytes()),
        }
    }
}

/// Uniform variates on the open interval (0, 1) with 53-bit resolution.
pub struct UniformStream {
    rng: ChaCha8Rng,
}

impl UniformStream {
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        // midpoint of one of 2^53 equal cells; never 0 or 1
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Unit exponential by inversion, `-ln(1 - u)`.
    #[inline]
    pub fn next_exp1(&mut self) -> f64 {
        -(-self.next_open01()).ln_1p()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}
