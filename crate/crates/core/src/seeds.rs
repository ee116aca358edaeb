//! Deterministic seed derivation so every stochastic component can be re-run in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of tags (respondent index, round, purpose, ...).
pub fn derive(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng(base: u64, tags: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive(base, tags))
}

/// Stream tags, kept distinct so that unrelated consumers never share a stream.
pub mod tag {
    pub const FIRST_FORM: u64 = 1;
    pub const SECOND_FORM: u64 = 2;
    pub const HOLDOUT: u64 = 3;
    pub const RESPONDENT: u64 = 4;
    pub const RESPONSE: u64 = 5;
    pub const LHS: u64 = 6;
    pub const MCMC: u64 = 7;
    pub const CALIBRATION: u64 = 8;
    pub const ANALYSIS: u64 = 9;
    pub const FUNCTION_PAIR: u64 = 10;
}
