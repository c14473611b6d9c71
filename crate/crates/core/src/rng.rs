//! Deterministic RNG streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by
//! `(seed, domain, index)`, so work can be split across threads in any order
//! and still produce the same bytes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DOMAIN_DATA: u64 = 0x6461_7461;
pub const DOMAIN_PHYSICS: u64 = 0x7068_7973;
pub const DOMAIN_INIT: u64 = 0x696e_6974;
pub const DOMAIN_SHUFFLE: u64 = 0x7368_7566;

pub fn stream_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.rotate_left(32));
    rng.set_stream(index);
    rng
}
