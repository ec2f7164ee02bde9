//! Counter-based random streams.
//!
//! Every replicate draws from a generator keyed by `(seed, tag, index)`, so
//! results never depend on how work is split across threads. Tags keep the
//! streams used for different purposes (data rows, multipliers, ...) apart.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Values are arbitrary but fixed forever: changing one changes
/// every seeded result in the crate.
pub mod tag {
    pub const DATA_ROW: u64 = 0x01;
    pub const MULTIPLIER: u64 = 0x02;
    pub const GAUSSIAN: u64 = 0x03;
    pub const GP_PATH: u64 = 0x04;
    pub const COUNTS: u64 = 0x05;
    pub const SIMULATION: u64 = 0x06;
    pub const REFERENCE: u64 = 0x07;
    pub const OUTER_REP: u64 = 0x08;
    pub const BATCH: u64 = 0x09;
    pub const STUDY_POINT: u64 = 0x0a;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a parent seed with a stream tag and replicate index.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let a = splitmix64(seed ^ 0x5851_f42d_4c95_7f2d);
    let b = splitmix64(a ^ tag.wrapping_mul(0xd6e8_feb8_6659_fd93));
    splitmix64(b ^ index.wrapping_mul(0xa076_1d64_78bd_642f))
}

/// Generator for replicate `index` of stream `tag` under `seed`.
pub fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let key = derive_seed(seed, tag, index);
    let mut bytes = [0u8; 32];
    for (k, chunk) in bytes.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(key.wrapping_add(k as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
