//! Seed derivation and RNG streams.
//!
//! Every stochastic component owns an independent stream derived from a base
//! seed and a salt via [`derive_seed`]. The rule is fixed so that results do
//! not depend on how many sibling streams exist: adding a chain, a grid
//! point, or a worker never perturbs the streams of the others.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// SplitMix64 finaliser (Steele, Lea & Flood 2014).
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream-splitting rule: `derive_seed(base, salt) = splitmix64(base ^ splitmix64(salt))`.
///
/// Used for chains (`salt = chain_id`), per-draw replicate streams
/// (`salt = draw index`), and per-lambda fits (`salt = lambda.to_bits()`).
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    splitmix64(base ^ splitmix64(salt))
}

/// Salt for a learning rate: the IEEE-754 bit pattern of the value, so a
/// lambda keeps its stream no matter where it sits in the grid.
pub fn lambda_salt(lambda: f64) -> u64 {
    lambda.to_bits()
}

/// Salt separating a fit's PPC replicate streams from its chain streams,
/// which use small chain-index salts on the same base seed.
pub(crate) const PPC_SALT: u64 = 0x5050_435f_5341_4c54;

/// A seeded ChaCha stream. ChaCha8 is deterministic across platforms.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
