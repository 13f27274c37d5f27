//! Named sub-seeds derived from one master seed.

use sha2::{Digest, Sha256};

/// First eight bytes (little-endian) of `SHA-256(master_le || role)`.
pub fn derive_seed(master: u64, role: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(role.as_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}
