//! Seed derivation.
//!
//! A master seed fans out into independent per-component streams. Every
//! stochastic component asks for its seed by name (and optionally by node and
//! slot), so adding a new consumer never shifts the draws of existing ones.
//!
//! `derive(master, name) = splitmix64(master ^ fnv1a64(name))`, and keyed
//! variants fold each integer key in with another splitmix64 round.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a hash of a component name.
pub fn fnv1a64(name: &str) -> u64 {
    name.bytes().fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// One round of the splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the component `name` under `master`.
pub fn derive(master: u64, name: &str) -> u64 {
    splitmix64(master ^ fnv1a64(name))
}

/// Seed for the component `name` further keyed by integers (node id, slot, ...).
pub fn derive_keyed(master: u64, name: &str, keys: &[u64]) -> u64 {
    keys.iter().fold(derive(master, name), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Deterministic RNG for a seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
