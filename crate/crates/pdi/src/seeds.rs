//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline (burn-in draws, batch assignment,
//! batch draws, bootstrap resamples, per-trial datasets) pulls its RNG seed
//! from the master seed through this module, so results are reproducible and
//! independent of scheduling.

/// Purpose tags keep unrelated substreams from colliding.
pub mod tag {
    pub const TRIAL: u64 = 0x7452_4941;
    pub const DATASET: u64 = 0x4441_5441;
    pub const SAMPLING: u64 = 0x5341_4d50;
    pub const DRAWS: u64 = 0x4452_4157;
    pub const BATCH_ASSIGN: u64 = 0x4241_5349;
    pub const BATCH_DRAW: u64 = 0x4244_5257;
    pub const ESTIMATION: u64 = 0x4553_5449;
    pub const GROUP: u64 = 0x4752_4f55;
    pub const BOOTSTRAP: u64 = 0x424f_4f54;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a sequence of tags.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}
