//! SHA-256 with one-byte domain separation tags.

use sha2::{Digest as _, Sha256};

/// A 256-bit digest.
pub type Digest = [u8; 32];

/// Domain separation tags prepended to every tagged hash input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Domain {
    Commitment = 0x43,
    FiatShamir = 0x46,
    Frame = 0x50,
    Routing = 0x52,
    Signature = 0x53,
    Nonce = 0x4e,
    Derive = 0x44,
}

/// Plain SHA-256.
pub fn hash(data: &[u8]) -> Digest {
    Sha256::digest(data).into()
}

/// SHA-256 over `tag ‖ part_0 ‖ part_1 ‖ ...`.
pub fn hash_tagged(domain: Domain, parts: &[&[u8]]) -> Digest {
    let mut hasher = Sha256::new();
    hasher.update([domain as u8]);
    for part in parts {
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// 64 bytes of hash output, for reduction into a scalar field.
pub fn hash_wide(domain: Domain, parts: &[&[u8]]) -> [u8; 64] {
    let mut out = [0u8; 64];
    for (half, chunk) in out.chunks_mut(32).enumerate() {
        let mut hasher = Sha256::new();
        hasher.update([domain as u8, half as u8]);
        for part in parts {
            hasher.update(part);
        }
        chunk.copy_from_slice(&hasher.finalize());
    }
    out
}

/// Reduce a big-endian digest modulo `modulus`.
pub fn digest_mod(digest: &Digest, modulus: u64) -> u64 {
    assert!(modulus > 0);
    let m = u128::from(modulus);
    let acc = digest
        .iter()
        .fold(0u128, |acc, &byte| ((acc << 8) | u128::from(byte)) % m);
    acc as u64
}
