//! Seeded random streams.
//!
//! Every stochastic step draws from a ChaCha stream keyed by
//! `(seed, stream)`, so parallel or reordered work stays reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SeededRng = ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids for the different consumers of a run seed.
pub mod streams {
    pub const MOLECULES: u64 = 1;
    pub const COVERAGE: u64 = 2;
    pub const IMAGE: u64 = 3;
    pub const TEXT: u64 = 4;
    pub const CONFORMER: u64 = 5;
    pub const KG: u64 = 6;
    pub const DDI: u64 = 7;
    pub const EHR: u64 = 8;
    pub const INIT: u64 = 9;
    pub const SCHEDULE: u64 = 10;
    pub const TRANSE: u64 = 11;
    pub const SPLIT: u64 = 12;
    pub const TRAIN: u64 = 13;
    pub const BOOTSTRAP: u64 = 14;
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut impl Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Mix two words into a well-spread 64-bit value (splitmix64 finalizer).
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
