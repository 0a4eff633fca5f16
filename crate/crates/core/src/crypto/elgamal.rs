//! Re-randomizable ElGamal with dealer-based Shamir sharing of the secret key.
//!
//! A payload is framed as `len:u16 ‖ payload ‖ tag:8` (the tag is a truncated
//! hash of the payload), zero padded to `block_count * BLOCK_BYTES` and split
//! into blocks, each embedded as one group element. Decryption with a wrong
//! key or a corrupted share therefore fails loudly instead of returning bytes.

use std::collections::BTreeSet;
use std::fmt;

use rand::{CryptoRng, RngCore};

use super::group::{Group, BLOCK_BYTES};
use super::hash::{hash_tagged, Domain};
use super::CryptoError;
use crate::wire::{Reader, Writer};

const FRAME_OVERHEAD: usize = 2 + TAG_BYTES;
const TAG_BYTES: usize = 8;

/// Largest payload that fits in `block_count` blocks.
pub fn max_payload(block_count: usize) -> usize {
    (block_count * BLOCK_BYTES).saturating_sub(FRAME_OVERHEAD)
}

/// The encryption public key `y = g^x`, with a precomputed table for `y`.
#[derive(Clone)]
pub struct PublicKey<G: Group> {
    group: G,
    y: G::Element,
    table: G::Table,
}

impl<G: Group> fmt::Debug for PublicKey<G> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PublicKey").field("y", &self.y).finish()
    }
}

impl<G: Group> PartialEq for PublicKey<G> {
    fn eq(&self, other: &Self) -> bool {
        self.group == other.group && self.y == other.y
    }
}

impl<G: Group> Eq for PublicKey<G> {}

impl<G: Group> PublicKey<G> {
    pub fn new(group: G, y: G::Element) -> Self {
        let table = group.table(&y);
        Self { group, y, table }
    }

    pub fn group(&self) -> &G {
        &self.group
    }

    pub fn element(&self) -> &G::Element {
        &self.y
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.group.encode_element(&self.y)
    }

    pub fn from_bytes(group: G, bytes: &[u8]) -> Result<Self, CryptoError> {
        let y = group.decode_element(bytes)?;
        Ok(Self::new(group, y))
    }
}

/// Shamir share `f(index)` of the decryption key; indices start at 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyShare<G: Group> {
    pub index: u32,
    pub value: G::Scalar,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SecretKey<G: Group> {
    pub x: G::Scalar,
}

/// Output of the dealer: public key, `d` shares and the threshold `z`.
#[derive(Clone, Debug)]
pub struct EncKeyPair<G: Group> {
    pub public: PublicKey<G>,
    pub shares: Vec<KeyShare<G>>,
    pub threshold: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block<E> {
    /// `g^r`
    pub a: E,
    /// `m · y^r`
    pub b: E,
}

/// A list of ElGamal pairs encrypting one framed payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext<G: Group> {
    pub blocks: Vec<Block<G::Element>>,
}

impl<G: Group> Ciphertext<G> {
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn write(&self, group: &G, w: &mut Writer) {
        w.len_prefix(self.blocks.len());
        for block in &self.blocks {
            w.fixed(&group.encode_element(&block.a));
            w.fixed(&group.encode_element(&block.b));
        }
    }

    pub fn read(group: &G, r: &mut Reader<'_>) -> Result<Self, CryptoError> {
        let n = r.len_prefix("ciphertext blocks")?;
        let width = group.element_len();
        let mut blocks = Vec::with_capacity(n);
        for _ in 0..n {
            let a = group.decode_element(r.fixed(width, "ciphertext element")?)?;
            let b = group.decode_element(r.fixed(width, "ciphertext element")?)?;
            blocks.push(Block { a, b });
        }
        Ok(Self { blocks })
    }

    pub fn to_bytes(&self, group: &G) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(group, &mut w);
        w.finish()
    }

    pub fn from_bytes(group: &G, bytes: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(bytes);
        let c = Self::read(group, &mut r)?;
        r.finish()?;
        Ok(c)
    }
}

/// Write a length-prefixed list of ciphertexts.
pub fn write_ciphertexts<G: Group>(group: &G, list: &[Ciphertext<G>], w: &mut Writer) {
    w.len_prefix(list.len());
    for c in list {
        c.write(group, w);
    }
}

pub fn read_ciphertexts<G: Group>(group: &G, r: &mut Reader<'_>) -> Result<Vec<Ciphertext<G>>, CryptoError> {
    let n = r.len_prefix("ciphertext list")?;
    (0..n).map(|_| Ciphertext::read(group, r)).collect()
}

/// `c1^{x_i}` for every block, tagged with the share index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecryptionShare<G: Group> {
    pub index: u32,
    pub parts: Vec<G::Element>,
}

/// Trusted-dealer key generation: a random degree `z-1` polynomial with
/// constant term `x`, evaluated at `1..=d`.
pub fn keygen_threshold<G, R>(group: &G, d: usize, z: usize, rng: &mut R) -> Result<EncKeyPair<G>, CryptoError>
where
    G: Group,
    R: RngCore + CryptoRng + ?Sized,
{
    if z == 0 || z > d {
        return Err(CryptoError::InvalidThreshold { d, z });
    }
    let coeffs: Vec<G::Scalar> = (0..z).map(|_| group.random_scalar(rng)).collect();
    let shares = (1..=d as u64)
        .map(|i| {
            let at = group.scalar_from_u64(i);
            // Horner evaluation from the highest coefficient.
            let value = coeffs.iter().rev().fold(group.scalar_zero(), |acc, c| {
                group.scalar_add(&group.scalar_mul(&acc, &at), c)
            });
            KeyShare { index: i as u32, value }
        })
        .collect();
    let public = PublicKey::new(group.clone(), group.pow_gen(&coeffs[0]));
    Ok(EncKeyPair {
        public,
        shares,
        threshold: z,
    })
}

/// Lagrange coefficients for evaluating at zero from the given indices.
pub fn lagrange_at_zero<G: Group>(group: &G, indices: &[u32]) -> Result<Vec<G::Scalar>, CryptoError> {
    let mut seen = BTreeSet::new();
    for &i in indices {
        if i == 0 {
            return Err(CryptoError::ShareIndex(i));
        }
        if !seen.insert(i) {
            return Err(CryptoError::DuplicateShare(i));
        }
    }
    indices
        .iter()
        .map(|&i| {
            let xi = group.scalar_from_u64(u64::from(i));
            let mut num = group.scalar_from_u64(1);
            let mut den = group.scalar_from_u64(1);
            for &j in indices.iter().filter(|&&j| j != i) {
                let xj = group.scalar_from_u64(u64::from(j));
                num = group.scalar_mul(&num, &xj);
                den = group.scalar_mul(&den, &group.scalar_sub(&xj, &xi));
            }
            let inv = group.scalar_invert(&den).ok_or(CryptoError::ShareIndex(i))?;
            Ok(group.scalar_mul(&num, &inv))
        })
        .collect()
}

/// Recombine the secret key from shares (any `z` of them suffice).
pub fn reconstruct_secret<G: Group>(group: &G, shares: &[KeyShare<G>]) -> Result<SecretKey<G>, CryptoError> {
    let indices: Vec<u32> = shares.iter().map(|s| s.index).collect();
    let lambdas = lagrange_at_zero(group, &indices)?;
    let x = shares.iter().zip(&lambdas).fold(group.scalar_zero(), |acc, (s, l)| {
        group.scalar_add(&acc, &group.scalar_mul(&s.value, l))
    });
    Ok(SecretKey { x })
}

fn frame(payload: &[u8], block_count: usize) -> Result<Vec<u8>, CryptoError> {
    let max = max_payload(block_count);
    if payload.len() > max || payload.len() > usize::from(u16::MAX) {
        return Err(CryptoError::PayloadTooLong {
            len: payload.len(),
            max,
        });
    }
    let mut out = Vec::with_capacity(block_count * BLOCK_BYTES);
    out.extend_from_slice(&(payload.len() as u16).to_be_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&hash_tagged(Domain::Frame, &[payload])[..TAG_BYTES]);
    out.resize(block_count * BLOCK_BYTES, 0);
    Ok(out)
}

fn unframe(framed: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let len = usize::from(u16::from_be_bytes([framed[0], framed[1]]));
    if 2 + len + TAG_BYTES > framed.len() {
        return Err(CryptoError::Undecodable);
    }
    let payload = &framed[2..2 + len];
    let tag = &framed[2 + len..2 + len + TAG_BYTES];
    let padding_clean = framed[2 + len + TAG_BYTES..].iter().all(|&b| b == 0);
    if tag != &hash_tagged(Domain::Frame, &[payload])[..TAG_BYTES] || !padding_clean {
        return Err(CryptoError::Undecodable);
    }
    Ok(payload.to_vec())
}

/// Encrypt `payload` into exactly `block_count` blocks with fresh randomness.
pub fn encrypt<G, R>(
    pk: &PublicKey<G>,
    payload: &[u8],
    block_count: usize,
    rng: &mut R,
) -> Result<Ciphertext<G>, CryptoError>
where
    G: Group,
    R: RngCore + CryptoRng + ?Sized,
{
    let group = &pk.group;
    let framed = frame(payload, block_count)?;
    let blocks = framed
        .chunks(BLOCK_BYTES)
        .map(|chunk| {
            let m = group.embed(chunk.try_into().expect("block sized chunk"))?;
            let r = group.random_scalar(rng);
            Ok(Block {
                a: group.pow_gen(&r),
                b: group.op(&m, &group.pow_table(&pk.table, &r)),
            })
        })
        .collect::<Result<Vec<_>, CryptoError>>()?;
    Ok(Ciphertext { blocks })
}

/// Re-randomize with caller-chosen exponents, one per block.
pub fn reencrypt_with<G: Group>(
    pk: &PublicKey<G>,
    c: &Ciphertext<G>,
    s: &[G::Scalar],
) -> Result<Ciphertext<G>, CryptoError> {
    if s.len() != c.blocks.len() {
        return Err(CryptoError::BlockCountMismatch {
            expected: c.blocks.len(),
            got: s.len(),
        });
    }
    let group = &pk.group;
    let blocks = c
        .blocks
        .iter()
        .zip(s)
        .map(|(block, s)| Block {
            a: group.op(&block.a, &group.pow_gen(s)),
            b: group.op(&block.b, &group.pow_table(&pk.table, s)),
        })
        .collect();
    Ok(Ciphertext { blocks })
}

/// Re-randomize with fresh exponents; returns them for the shuffle prover.
pub fn reencrypt<G, R>(pk: &PublicKey<G>, c: &Ciphertext<G>, rng: &mut R) -> (Ciphertext<G>, Vec<G::Scalar>)
where
    G: Group,
    R: RngCore + CryptoRng + ?Sized,
{
    let s: Vec<G::Scalar> = c.blocks.iter().map(|_| pk.group.random_scalar(rng)).collect();
    let out = reencrypt_with(pk, c, &s).expect("one exponent per block");
    (out, s)
}

pub fn partial_decrypt<G: Group>(
    group: &G,
    share: &KeyShare<G>,
    c: &Ciphertext<G>,
) -> Result<DecryptionShare<G>, CryptoError> {
    if share.index == 0 {
        return Err(CryptoError::ShareIndex(0));
    }
    let parts = c.blocks.iter().map(|block| group.pow(&block.a, &share.value)).collect();
    Ok(DecryptionShare {
        index: share.index,
        parts,
    })
}

/// Combine at least `threshold` decryption shares with distinct indices.
/// The lowest `threshold` indices are used.
pub fn combine_decrypt<G: Group>(
    group: &G,
    threshold: usize,
    shares: &[DecryptionShare<G>],
    c: &Ciphertext<G>,
) -> Result<Vec<u8>, CryptoError> {
    let mut distinct: Vec<&DecryptionShare<G>> = Vec::with_capacity(shares.len());
    let mut seen = BTreeSet::new();
    for share in shares {
        if seen.insert(share.index) {
            distinct.push(share);
        }
    }
    if threshold == 0 || distinct.len() < threshold {
        return Err(CryptoError::InsufficientShares {
            have: distinct.len(),
            need: threshold,
        });
    }
    distinct.sort_by_key(|s| s.index);
    distinct.truncate(threshold);
    combine_unchecked(group, &distinct, c)
}

/// Lagrange-combine exactly the given shares, without a threshold check.
pub fn combine_unchecked<G: Group>(
    group: &G,
    shares: &[&DecryptionShare<G>],
    c: &Ciphertext<G>,
) -> Result<Vec<u8>, CryptoError> {
    let indices: Vec<u32> = shares.iter().map(|s| s.index).collect();
    let lambdas = lagrange_at_zero(group, &indices)?;
    if shares.iter().any(|s| s.parts.len() != c.blocks.len()) {
        return Err(CryptoError::BlockCountMismatch {
            expected: c.blocks.len(),
            got: shares.iter().map(|s| s.parts.len()).min().unwrap_or(0),
        });
    }
    let masks = (0..c.blocks.len()).map(|k| {
        shares.iter().zip(&lambdas).fold(group.identity(), |acc, (share, l)| {
            group.op(&acc, &group.pow(&share.parts[k], l))
        })
    });
    decode_blocks(group, c, masks)
}

/// Decryption under the full secret key.
pub fn decrypt<G: Group>(group: &G, sk: &SecretKey<G>, c: &Ciphertext<G>) -> Result<Vec<u8>, CryptoError> {
    let masks = c.blocks.iter().map(|block| group.pow(&block.a, &sk.x));
    decode_blocks(group, c, masks)
}

fn decode_blocks<G: Group>(
    group: &G,
    c: &Ciphertext<G>,
    masks: impl Iterator<Item = G::Element>,
) -> Result<Vec<u8>, CryptoError> {
    if c.blocks.is_empty() {
        return Err(CryptoError::Undecodable);
    }
    let mut framed = Vec::with_capacity(c.blocks.len() * BLOCK_BYTES);
    for (block, mask) in c.blocks.iter().zip(masks) {
        let m = group.op(&block.b, &group.invert(&mask));
        framed.extend_from_slice(&group.extract(&m)?);
    }
    unframe(&framed)
}
