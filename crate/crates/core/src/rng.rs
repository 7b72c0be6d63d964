//! Seed derivation. Every random draw in a run comes from one user seed;
//! each consumer gets its own ChaCha stream so adding draws in one place
//! never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_RBL_NOISE: u64 = 1;
pub const STREAM_COMPARATOR: u64 = 2;
pub const STREAM_WORKLOAD: u64 = 3;
pub const STREAM_VERIFY: u64 = 4;

pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
