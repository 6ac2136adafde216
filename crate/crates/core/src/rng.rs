//! Seeded randomness.
//!
//! Every random stream is a xoshiro256** generator whose state is filled by
//! splitmix64 from a 64-bit seed. Seeds for independent purposes are derived
//! from a master seed with [`derive_seed`], keyed by a purpose tag and an index,
//! so adding a new consumer never shifts the values seen by existing ones.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

pub type StreamRng = Xoshiro256StarStar;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// One splitmix64 output step applied to `z`.
pub fn splitmix64_mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// hash(master_seed, tag, index), folding every tag byte through splitmix64.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = splitmix64_mix(master);
    for &b in tag.as_bytes() {
        h = splitmix64_mix(h ^ u64::from(b));
    }
    // length separates "ab"+idx from "a"+... collisions
    h = splitmix64_mix(h ^ (tag.len() as u64).rotate_left(32));
    splitmix64_mix(h ^ index)
}

pub fn stream(master: u64, tag: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, tag, index))
}

/// Standard normal deviate by the Box–Muller transform (cosine branch only,
/// two uniforms consumed per call).
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // u1 in (0, 1] keeps ln finite
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
