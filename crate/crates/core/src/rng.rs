//! Labelled random streams.
//!
//! Every stream is a ChaCha8 generator keyed by SHA-256 of
//! `(master seed, label, indices)`. Streams never share state, so a draw is
//! fully determined by its label and position and never by the order in which
//! workers consume streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn digest(master: u64, label: &str, index: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"cahn-spectral/v1");
    h.update(master.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for i in index {
        h.update(i.to_le_bytes());
    }
    let out = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&out);
    key
}

/// Independent generator for `(master, label, index...)`.
pub fn stream(master: u64, label: &str, index: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(master, label, index))
}

/// 64-bit sub-seed for `(master, label, index...)`.
pub fn derive_seed(master: u64, label: &str, index: &[u64]) -> u64 {
    let d = digest(master, label, index);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
