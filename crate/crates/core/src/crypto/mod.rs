//! Group arithmetic, threshold ElGamal, commitments, signatures and hashing.

pub mod commitment;
pub mod elgamal;
pub mod group;
pub mod hash;
pub mod schnorr;

use thiserror::Error;

use crate::wire::WireError;

pub use commitment::{commit, verify_open, Commitment, Opening};
pub use elgamal::{
    combine_decrypt, decrypt, encrypt, keygen_threshold, max_payload, partial_decrypt, reconstruct_secret, reencrypt,
    reencrypt_with, Block, Ciphertext, DecryptionShare, EncKeyPair, KeyShare, PublicKey, SecretKey,
};
pub use group::{Group, GroupId, ModP768, Ristretto, BLOCK_BYTES};
pub use hash::{hash, hash_tagged, Digest, Domain};
pub use schnorr::{verify_sig, SigKeyPair, Signature};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid threshold: need 1 <= z <= d, got d={d} z={z}")]
    InvalidThreshold { d: usize, z: usize },
    #[error("payload of {len} bytes exceeds maximum of {max}")]
    PayloadTooLong { len: usize, max: usize },
    #[error("malformed group element")]
    MalformedElement,
    #[error("malformed scalar")]
    MalformedScalar,
    #[error("malformed signature")]
    MalformedSignature,
    #[error("no counter value embeds this block")]
    EncodingExhausted,
    #[error("decrypted value is not a valid payload encoding (corrupt share or ciphertext)")]
    Undecodable,
    #[error("insufficient decryption shares: have {have}, need {need}")]
    InsufficientShares { have: usize, need: usize },
    #[error("duplicate share index {0}")]
    DuplicateShare(u32),
    #[error("invalid share index {0}")]
    ShareIndex(u32),
    #[error("block count mismatch: expected {expected}, got {got}")]
    BlockCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Wire(#[from] WireError),
}
