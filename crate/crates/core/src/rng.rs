//! Per-step random streams.
//!
//! Every consumer of randomness derives a fresh generator from
//! `(seed, step, stream)`, so a run resumed at step `j` draws exactly what
//! the uninterrupted run would have drawn without persisting generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Batch = 2,
    Dropout = 3,
    Schedule = 4,
    Data = 5,
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, step: u64, stream: Stream) -> u64 {
    mix(mix(mix(seed) ^ step) ^ (stream as u64))
}

pub fn step_rng(seed: u64, step: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, step, stream))
}
