//! Stream splitting for reproducible parallel runs.
//!
//! Every random draw comes from a ChaCha8 generator keyed by the master
//! seed. The 64-bit stream id packs the phase tag (top 8 bits), the SMC
//! iteration (next 24 bits) and a particle or chain index (low 32 bits), so
//! draws never depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Algorithm phase that owns a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Phase {
    Init = 1,
    Resample = 2,
    Mutate = 3,
    Audit = 4,
    Stability = 5,
    Data = 6,
    Chain = 7,
    Grid = 8,
}

/// Packed stream id; iteration and index are truncated to 24 and 32 bits.
pub fn stream_id(phase: Phase, iteration: u64, index: u64) -> u64 {
    ((phase as u64) << 56) | ((iteration & 0xff_ffff) << 32) | (index & 0xffff_ffff)
}

pub fn stream(seed: u64, phase: Phase, iteration: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(phase, iteration, index));
    rng
}
