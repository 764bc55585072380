//! SHA-256 helpers used for cache keys, checksums and report digests.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex-encoded SHA-256 of the compact JSON encoding of `value`.
///
/// Field order follows the struct declaration, so the digest is stable for a
/// given type definition.
pub fn json_digest<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    sha256_hex(&bytes)
}

/// First eight bytes of the SHA-256 of `bytes`, as a little-endian integer.
pub fn hash64(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&d[..8]);
    u64::from_le_bytes(buf)
}
