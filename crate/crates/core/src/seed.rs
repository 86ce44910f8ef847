//! Deterministic seed derivation.
//!
//! A master seed is expanded into independent per-cell seeds by chaining
//! splitmix64 over the cell coordinates, so any cell can be recomputed on its
//! own and partial reruns stay consistent with full runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used everywhere in the library.
pub type Rng = ChaCha8Rng;

/// One step of the splitmix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a seed from a master seed and a path of cell coordinates.
///
/// `derive_seed(m, &[a, b])` is `splitmix64(splitmix64(splitmix64(m) ^ a) ^ b)`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &coord| splitmix64(acc ^ coord))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
