//! Counter-keyed random streams.
//!
//! Every random draw in the pipeline comes from a stream identified by a key
//! such as `(seed, frame, layer, particle)`. Streams are independent of the
//! order in which workers request them, so parallel stages stay
//! reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream kinds, so that differently purposed draws never share a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Resample = 1,
    Diffuse = 2,
    Temporal = 3,
    ImageNoise = 4,
    BackgroundNoise = 5,
    Init = 6,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes an ordered key into a 64-bit seed.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C909, |h, &w| splitmix64(h ^ splitmix64(w)))
}

/// The generator for one key.
pub fn stream(seed: u64, purpose: Purpose, indices: &[u64]) -> ChaCha8Rng {
    let mut words = Vec::with_capacity(indices.len() + 2);
    words.push(seed);
    words.push(purpose as u64);
    words.extend_from_slice(indices);
    ChaCha8Rng::seed_from_u64(mix(&words))
}
