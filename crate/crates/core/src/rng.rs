//! Seed splitting.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by a
//! master seed, with independent streams selected through the ChaCha
//! stream counter. Replicate `r` of a study seeded with `s` uses
//! `stream_rng(s, r)`; nested jobs compose stream ids with [`substream`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SvRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SvRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(seed: u64, stream: u64) -> SvRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for job `(a, b, c)`: replicate `a` in the high bits, then
/// two byte-sized sub-indices. `a` must stay below 2^40.
pub fn substream(a: u64, b: u8, c: u8) -> u64 {
    ((a + 1) << 16) | ((b as u64) << 8) | c as u64
}
