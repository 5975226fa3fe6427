//! Seeded generators and fixed substream derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for the `(a, b)` substream of `seed`, independent of call order.
pub fn substream(seed: u64, a: u64, b: u64) -> Rng {
    seeded(splitmix(splitmix(seed ^ splitmix(a)) ^ splitmix(b.wrapping_add(0x5851_F42D))))
}
