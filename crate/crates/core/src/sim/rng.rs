//! Per-purpose random streams derived from a master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Nature = 1,
    Measurement = 2,
    Interval = 3,
    Zeta = 4,
    Verifier = 5,
    Initial = 6,
}

/// Independent ChaCha20 stream for `(seed, label)`; one consumer never shifts another.
pub fn stream(seed: u64, label: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(label as u64);
    rng
}

/// Sub-stream for an indexed consumer within one purpose (e.g. verifier path `i`).
pub fn indexed_stream(seed: u64, label: Stream, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((index + 1) << 8) | label as u64);
    rng
}
