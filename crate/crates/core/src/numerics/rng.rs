//! Counter-based random streams.
//!
//! A stream is the pair `(seed, counter)`. Every draw rebuilds a ChaCha20
//! generator keyed by `seed`, positions it at `counter` and advances the
//! counter by the number of words consumed, so the output is a pure function
//! of the pair and identical on every platform.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub counter: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, counter: 0 }
    }

    /// Independent child stream; the parent is left untouched.
    pub fn derive(&self, tag: u64) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x5EED))))
    }

    fn with_rng<T>(&mut self, f: impl FnOnce(&mut ChaCha20Rng) -> T) -> T {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_word_pos(self.counter as u128);
        let out = f(&mut rng);
        self.counter = rng.get_word_pos() as u64;
        out
    }

    /// `n` i.i.d. standard normal draws.
    pub fn gaussian(&mut self, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::EmptyRequest("gaussian sample of length 0"));
        }
        Ok(self.with_rng(|rng| (0..n).map(|_| StandardNormal.sample(rng)).collect()))
    }

    /// `n` i.i.d. entries uniform on {-1, +1}.
    pub fn rademacher(&mut self, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::EmptyRequest("rademacher sample of length 0"));
        }
        Ok(self.with_rng(|rng| {
            (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
        }))
    }

    /// `n` draws uniform on `[lo, hi)`.
    pub fn uniform(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        self.with_rng(|rng| (0..n).map(|_| rng.random_range(lo..hi)).collect())
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        self.with_rng(|rng| xs.shuffle(rng));
    }
}

pub fn sample_gaussian(stream: &mut RngStream, n: usize) -> Result<Vec<f64>> {
    stream.gaussian(n)
}

pub fn sample_rademacher(stream: &mut RngStream, n: usize) -> Result<Vec<f64>> {
    stream.rademacher(n)
}
