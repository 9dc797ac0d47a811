//! Content hashes used for cache validation.

use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes).as_slice())
}

/// Incremental hasher over a sequence of string fields.
///
/// Fields are length-prefixed so that `("ab", "c")` and `("a", "bc")` differ.
#[derive(Default)]
pub struct FieldHasher(Sha256);

impl FieldHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(mut self, s: impl AsRef<[u8]>) -> Self {
        let s = s.as_ref();
        self.0.update((s.len() as u64).to_le_bytes());
        self.0.update(s);
        self
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize().as_slice())
    }
}

/// Short prefix of a hash, for display.
pub fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}
