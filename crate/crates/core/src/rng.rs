//! Keyed random streams.
//!
//! Every random decision in training and evaluation draws from a stream keyed
//! by a tuple such as `(seed, epoch, video_id)`, so results do not depend on
//! iteration order or on how work is split between workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream purposes; keeps keys for different consumers disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Generate = 1,
    Init = 2,
    Epoch = 3,
    Clip = 4,
    EvalClips = 5,
    Probe = 6,
    Transfer = 7,
    Features = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a key tuple into a single 64-bit seed.
pub fn mix(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, purpose: Purpose, parts: &[u64]) -> StreamRng {
    let mut key = Vec::with_capacity(parts.len() + 1);
    key.push(purpose as u64);
    key.extend_from_slice(parts);
    ChaCha8Rng::seed_from_u64(mix(seed, &key))
}
