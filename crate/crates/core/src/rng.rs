//! Counter-based random streams.
//!
//! Every random quantity is drawn from a ChaCha stream keyed by the master
//! seed and a short tuple of counters (purpose, drop, sample, AP, ...), so
//! results do not depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags keeping independent streams apart.
pub mod purpose {
    pub const DEPLOYMENT: u64 = 1;
    pub const CHANNEL: u64 = 2;
    pub const PILOT_NOISE: u64 = 3;
    pub const PI_ESTIMATE: u64 = 4;
    pub const EVALUATION: u64 = 5;
    pub const NESTED: u64 = 6;
    pub const RESIDUAL: u64 = 7;
    pub const ALLOCATION: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit key from a seed and a counter tuple.
pub fn derive_key(seed: u64, counters: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0x5DEE_CE66_D1CE_4E5B);
    for &c in counters {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x2545_F491_4F6C_DD1D)));
    }
    h
}

pub fn stream(seed: u64, counters: &[u64]) -> StreamRng {
    let key = derive_key(seed, counters);
    let mut bytes = [0u8; 32];
    for (i, chunk) in bytes.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(key.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
