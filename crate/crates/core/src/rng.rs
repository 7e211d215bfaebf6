//! Deterministic random streams. Every consumer draws from its own named
//! substream of the master seed, so adding draws in one place never shifts
//! the numbers seen elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent generator for `(seed, label, index)`.
pub fn substream(seed: u64, label: &str, index: u64) -> Rng {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mixed = splitmix(splitmix(seed ^ splitmix(h)) ^ splitmix(index.wrapping_add(0x9e37)));
    Rng::seed_from_u64(mixed)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
