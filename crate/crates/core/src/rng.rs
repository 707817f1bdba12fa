//! Seeded random streams. Every stochastic component draws from a stream
//! derived from explicit integer keys so runs are reproducible bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Training-side instance seeds live below this value, evaluation seeds at or
/// above it.
pub const EVAL_SEED_BASE: u64 = 1 << 40;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix(keys: &[u64]) -> u64 {
    keys.iter().fold(0x6A09_E667_F3BC_C908, |acc, &k| {
        splitmix64(acc ^ splitmix64(k))
    })
}

pub fn stream(keys: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(mix(keys))
}

/// Seed of the `index`-th instance of a category under a run seed. Training
/// seeds fall in `[0, EVAL_SEED_BASE)` and evaluation seeds in
/// `[EVAL_SEED_BASE, 2 * EVAL_SEED_BASE)`, so the two sets never overlap.
pub fn instance_seed(run_seed: u64, category_index: usize, index: usize, eval: bool) -> u64 {
    let s = mix(&[run_seed, category_index as u64, index as u64, eval as u64]) % EVAL_SEED_BASE;
    if eval {
        s + EVAL_SEED_BASE
    } else {
        s
    }
}

/// Purpose tags keep streams for different consumers independent.
pub mod tag {
    pub const GEOMETRY: u64 = 1;
    pub const HIDDEN: u64 = 2;
    pub const EXPERT: u64 = 3;
    pub const POINTS: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const INIT: u64 = 6;
    pub const EPISODE: u64 = 7;
}
