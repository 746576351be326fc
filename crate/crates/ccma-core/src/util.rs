//! Small shared helpers.

use serde::Serialize;

/// FNV-1a 64-bit hash; stable across runs and platforms, unlike the
/// standard library's randomized hasher.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Stable hash of a value through its canonical JSON encoding.
pub fn stable_hash_json<T: Serialize>(value: &T) -> u64 {
    let json = serde_json::to_string(value).expect("serializable value");
    fnv1a64(json.as_bytes())
}
