//! Seed derivation. Every random stream in the crate is keyed by a root seed,
//! a component tag and an index, so any piece of a run can be replayed alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the tag bytes; stable across platforms and releases.
fn tag_hash(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// `root ⊕ tag ⊕ index`, mixed so that neighbouring inputs give unrelated seeds.
pub fn derive_seed(root: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ tag_hash(tag)) ^ splitmix64(index.wrapping_mul(GOLDEN)))
}

/// Generator for draw `index` of stream `(root, tag)`.
pub fn stream_rng(root: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(root ^ tag_hash(tag)));
    rng.set_stream(index);
    rng
}
