//! Counter-based random streams derived from a single 64-bit seed.
//!
//! Every consumer draws from its own ChaCha stream, so adding a new consumer
//! never shifts the numbers an existing one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub const INIT_FEATURES: u64 = 1;
pub const SPECTRUM_FRAME: u64 = 2;
pub const WITHIN_CLASS_NOISE: u64 = 3;
pub const PERTURBATION: u64 = 4;
pub const FIXTURE: u64 = 5;

/// RNG for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
