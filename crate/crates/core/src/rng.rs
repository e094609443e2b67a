//! Counter-based seed splitting.
//!
//! Every random draw in the pipeline comes from a generator seeded with
//! `derive(seed, stream, index)`, so work can be split across workers or
//! reordered without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the stream label; stable across platforms and releases.
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Child seed for the `index`-th draw of the named stream.
pub fn derive(seed: u64, stream: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ label_hash(stream)) ^ splitmix64(index.wrapping_add(1)))
}

pub fn stream(seed: u64, stream: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive(seed, stream, index))
}
