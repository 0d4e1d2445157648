//! Deterministic random sources.
//!
//! All randomness is derived from a single run seed. Sub-streams are split off
//! by hashing `(seed, purpose, index)` so that reordering work never changes
//! what any individual stream produces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Real;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: &str, index: u64) -> u64 {
    let mut h = mix(seed);
    for b in stream.bytes() {
        h = mix(h ^ b as u64);
    }
    mix(h ^ index)
}

pub fn stream(seed: u64, stream_name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream_name, index))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Standard-normal vector; drawn in double precision so both element types
/// see the same underlying values.
pub fn normal_vec<T: Real>(rng: &mut impl rand::Rng, len: usize) -> Vec<T> {
    (0..len)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::of(v)
        })
        .collect()
}

pub fn normal<T: Real>(rng: &mut impl rand::Rng) -> T {
    let v: f64 = StandardNormal.sample(rng);
    T::of(v)
}
