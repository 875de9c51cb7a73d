//! Seed derivation.
//!
//! Every random stream in the simulator is derived from a single master seed
//! and a key `(purpose, round, client)`, so results never depend on the order
//! in which workers happen to run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derive a child seed for `(purpose, round, client)` from `master`.
pub fn derive_seed(master: u64, purpose: &str, round: u64, client: u64) -> u64 {
    let mut s = splitmix64(master ^ fnv1a(purpose.as_bytes()));
    s = splitmix64(s ^ round);
    splitmix64(s ^ client.rotate_left(32))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(master: u64, purpose: &str, round: u64, client: u64) -> Rng {
    rng_from_seed(derive_seed(master, purpose, round, client))
}
