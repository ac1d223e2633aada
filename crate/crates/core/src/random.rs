//! Random-number plumbing: seed derivation and standard-normal noise sources.
//!
//! Every stochastic operation that draws Gaussian noise takes a
//! [`NoiseSource`] instead of a concrete generator, so tests can stub the
//! draws with [`ZeroNoise`] or a fixed sequence.

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rand::SeedableRng;

use crate::scalar::Scalar;

/// Generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A source of independent standard-normal draws.
pub trait NoiseSource {
    fn standard_normal<T: Scalar>(&mut self) -> T;
}

impl<R: RngCore> NoiseSource for R {
    fn standard_normal<T: Scalar>(&mut self) -> T {
        let z: f64 = StandardNormal.sample(self);
        T::of(z)
    }
}

/// Always returns zero: reduces every sampler to its mode.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn standard_normal<T: Scalar>(&mut self) -> T {
        T::zero()
    }
}

/// Replays a fixed list of draws, cycling when exhausted.
#[derive(Debug, Clone)]
pub struct FixedNoise {
    draws: Vec<f64>,
    cursor: usize,
}

impl FixedNoise {
    pub fn new(draws: Vec<f64>) -> Self {
        assert!(!draws.is_empty(), "FixedNoise needs at least one draw");
        Self { draws, cursor: 0 }
    }
}

impl NoiseSource for FixedNoise {
    fn standard_normal<T: Scalar>(&mut self) -> T {
        let z = self.draws[self.cursor % self.draws.len()];
        self.cursor += 1;
        T::of(z)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives an independent named sub-stream seed from a master seed.
///
/// The mapping is a fixed function of `(master, name)`, so two experiments
/// that share a master seed see identical randomness on every stream they
/// have in common regardless of which other streams they use.
pub fn derive_seed(master: u64, name: &str) -> u64 {
    // FNV-1a over the stream name
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ splitmix64(h))
}
