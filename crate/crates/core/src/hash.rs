//! SHA-256 helpers with explicit domain separation.

use sha2::{Digest, Sha256};

/// 32-byte digest.
pub type Digest32 = [u8; 32];

/// Hashes the concatenation of `parts`.
pub fn sha256(parts: &[&[u8]]) -> Digest32 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Hashes `domain ‖ parts...`. Callers pick fixed ASCII domains such as
/// `b"txid/v1"`.
pub fn tagged(domain: &[u8], parts: &[&[u8]]) -> Digest32 {
    let mut h = Sha256::new();
    h.update(domain);
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Lower-case hex rendering, used by `Debug` impls and reports.
pub fn to_hex(bytes: &[u8]) -> alloc::string::String {
    const DIGITS: &[u8; 16] = b"0123456789abcdef";
    let mut s = alloc::string::String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push(DIGITS[(b >> 4) as usize] as char);
        s.push(DIGITS[(b & 0x0f) as usize] as char);
    }
    s
}
