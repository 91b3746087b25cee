//! Reproducible random streams.
//!
//! Every consumer draws from a ChaCha8 generator keyed by `(seed, purpose)`
//! and positioned on its own stream index (a path number, say), so serial
//! and parallel runs see identical numbers and different purposes never
//! share draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, stable across platforms and toolchains.
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn stream(seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&label_hash(purpose).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
