//! Seeded random streams.
//!
//! All randomness is drawn from ChaCha8 (`rand_chacha`), seeded with a
//! 64-bit seed and split into independent streams by ChaCha's stream
//! counter, so results do not depend on platform or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stable 64-bit key for a string (FNV-1a), used to derive per-album streams.
pub fn key(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}
