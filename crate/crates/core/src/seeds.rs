//! Seed fan-out: one master seed, one independent stream per named purpose.
//!
//! `derive_seed(master, label)` is the first 8 bytes (little endian) of
//! `SHA-256(master.to_le_bytes() || label)`. Labels in use: `data`, `model`,
//! `augment`, `dropout`, `eval`, and per-epoch suffixes such as `augment/3`.

use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
