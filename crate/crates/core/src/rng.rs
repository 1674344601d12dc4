//! Counter-derived RNG streams.
//!
//! Every random quantity is drawn from a stream that is a pure function of
//! `(master seed, domain tag, index)`, so results do not depend on how work
//! is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags keep streams for different purposes disjoint.
pub mod tag {
    pub const BOOTSTRAP: u64 = 0x626f_6f74;
    pub const CLR_NORMALS: u64 = 0x0063_6c72;
    pub const DGP_ROWS: u64 = 0x0064_6770;
    pub const DGP_COVARIATES: u64 = 0x0063_6f76;
    pub const SIMULATION: u64 = 0x0073_696d;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ tag) ^ index)
}

pub fn stream(master: u64, tag: u64, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, tag, index))
}
