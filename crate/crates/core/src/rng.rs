//! Counter-based, splittable random keys.
//!
//! A [`RngKey`] is an immutable 128-bit value. Child keys are derived with
//! [`fold_in`], which applies a fixed bijective 128-bit mixer to
//! `state ^ mix(index)`. Random streams are obtained by seeding a ChaCha8
//! generator from the key, so draws are reproducible across builds and
//! platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const GOLDEN: u128 = 0x9E37_79B9_7F4A_7C15_F39C_C060_5CED_C835;
const MUL_A: u128 = 0xBF58_476D_1CE4_E5B9_94D0_49BB_1331_11EB;
const MUL_B: u128 = 0xD6E8_FEB8_6659_FD93_9E37_79B9_7F4A_7C15 | 1;
const INDEX_DOMAIN: u128 = 0x5851_F42D_4C95_7F2D_1405_7B7E_F767_814F;

/// Bijective 128-bit finalizer (splitmix-style add / xorshift / odd multiply).
fn mix(x: u128) -> u128 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 67)).wrapping_mul(MUL_A);
    z = (z ^ (z >> 61)).wrapping_mul(MUL_B);
    z ^ (z >> 64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngKey(u128);

impl RngKey {
    /// Key derived from a user-facing integer seed.
    pub fn new(seed: u64) -> Self {
        RngKey(mix(seed as u128))
    }

    pub fn from_state(state: u128) -> Self {
        RngKey(state)
    }

    pub fn state(&self) -> u128 {
        self.0
    }

    pub fn fold_in(self, index: u64) -> Self {
        fold_in(self, index)
    }

    /// `n` child keys, `fold_in(self, 0..n)`.
    pub fn split(self, n: usize) -> Vec<RngKey> {
        (0..n as u64).map(|i| fold_in(self, i)).collect()
    }

    /// Fresh ChaCha8 stream seeded from this key.
    pub fn rng(&self) -> ChaCha8Rng {
        let lo = self.0;
        let hi = mix(self.0 ^ GOLDEN);
        let mut seed = [0u8; 32];
        seed[..16].copy_from_slice(&lo.to_le_bytes());
        seed[16..].copy_from_slice(&hi.to_le_bytes());
        ChaCha8Rng::from_seed(seed)
    }

    /// A uniform in [0, 1) taken directly from the key bits.
    pub fn uniform(&self) -> f64 {
        let bits = (mix(self.0) >> 75) as u64; // top 53 bits
        bits as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Derive a child key: `mix(key ^ mix(index ^ DOMAIN))`.
///
/// Pure and injective in `index` for a fixed parent, since both `mix` and
/// xor with a fixed value are bijections on 128-bit words.
pub fn fold_in(key: RngKey, index: u64) -> RngKey {
    RngKey(mix(key.0 ^ mix(index as u128 ^ INDEX_DOMAIN)))
}
