//! Seed derivation for reproducible, order-independent random streams.
//!
//! Every random stream in the crate is a ChaCha8 generator whose seed is a
//! pure function of a master seed and a path of counters (sample size, trial
//! index, purpose tag). Results therefore never depend on which thread runs a
//! trial or in what order trials finish.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags for the sub-streams of a single trial.
pub mod purpose {
    pub const SAMPLE: u64 = 0;
    pub const TIEBREAK: u64 = 1;
    pub const RANDOMIZATION_DM: u64 = 2;
    pub const RANDOMIZATION_REG: u64 = 3;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `path` into `master`, one counter at a time.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The `index`-th independent stream under `seed`, using ChaCha's stream
/// counter instead of rehashing.
pub fn substream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
