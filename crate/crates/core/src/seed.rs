//! Derivation of independent child seeds from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer: a bijective mixer with good avalanche.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th item of the stream named `tag` under `master`.
/// Distinct `(tag, index)` pairs give unrelated seeds.
pub fn derive(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = mix(master);
    for b in tag.bytes() {
        h = mix(h ^ u64::from(b));
    }
    mix(h ^ mix(index))
}

/// A ChaCha8 generator seeded by [`derive`].
pub fn rng(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, tag, index))
}
