//! Per-trial random streams.
//!
//! Every trial gets its own ChaCha8 stream keyed by the master seed, with the
//! trial index selecting the 64-bit stream id. The keystream is a pure
//! function of `(master_seed, trial_index)`, so results never depend on which
//! worker thread ran a trial or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random source handed to samplers.
pub type TrialRng = ChaCha8Rng;

/// Returns the random stream for trial `trial_index` under `master_seed`.
pub fn trial_rng(master_seed: u64, trial_index: u64) -> TrialRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial_index);
    rng
}
