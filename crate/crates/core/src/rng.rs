//! Per-trial random streams.
//!
//! Every trial owns an independent ChaCha stream keyed by the run seed and
//! selected by the trial index, so trials can be executed in any order (or in
//! parallel) and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TrialRng = ChaCha8Rng;

/// Deterministic random stream for `(seed, trial_index)`.
pub fn trial_rng(seed: u64, trial_index: u64) -> TrialRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial_index);
    rng
}
