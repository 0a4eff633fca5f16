//! Prime-order groups used for encryption and signatures.
//!
//! Two instantiations are provided: [`Ristretto`] (the default, a prime-order
//! group built on Curve25519) and [`ModP768`], the quadratic-residue subgroup
//! of a 768-bit safe prime, which is slower but easy to inspect in tests.

use std::fmt;
use std::sync::{Arc, LazyLock};

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_TABLE;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoBasepointTable, RistrettoPoint};
use curve25519_dalek::scalar::Scalar as DalekScalar;
use curve25519_dalek::traits::Identity;
use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};

use super::CryptoError;

/// Payload bytes carried by a single group element.
pub const BLOCK_BYTES: usize = 30;

/// Identifier written into transcripts so a verifier can pick the group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupId {
    Ristretto255,
    Modp768,
}

impl GroupId {
    pub fn to_byte(self) -> u8 {
        match self {
            GroupId::Ristretto255 => 1,
            GroupId::Modp768 => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(GroupId::Ristretto255),
            2 => Some(GroupId::Modp768),
            _ => None,
        }
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupId::Ristretto255 => f.write_str("ristretto255"),
            GroupId::Modp768 => f.write_str("modp768"),
        }
    }
}

/// A cyclic group of prime order `q` with a fixed generator `g`, together
/// with its exponent field.
pub trait Group: Clone + fmt::Debug + PartialEq + Eq + Send + Sync + 'static {
    type Element: Clone + PartialEq + Eq + fmt::Debug + Send + Sync;
    type Scalar: Clone + PartialEq + Eq + fmt::Debug + Send + Sync;
    /// Precomputation for repeated exponentiation of one base.
    type Table: Clone + Send + Sync;

    fn id(&self) -> GroupId;
    /// Width of the canonical element encoding.
    fn element_len(&self) -> usize;
    /// Width of the canonical scalar encoding.
    fn scalar_len(&self) -> usize;

    fn identity(&self) -> Self::Element;
    fn generator(&self) -> Self::Element;
    fn op(&self, a: &Self::Element, b: &Self::Element) -> Self::Element;
    fn invert(&self, a: &Self::Element) -> Self::Element;
    fn pow(&self, base: &Self::Element, e: &Self::Scalar) -> Self::Element;
    fn pow_gen(&self, e: &Self::Scalar) -> Self::Element;
    fn table(&self, base: &Self::Element) -> Self::Table;
    fn pow_table(&self, table: &Self::Table, e: &Self::Scalar) -> Self::Element;

    fn scalar_from_u64(&self, v: u64) -> Self::Scalar;
    fn scalar_add(&self, a: &Self::Scalar, b: &Self::Scalar) -> Self::Scalar;
    fn scalar_sub(&self, a: &Self::Scalar, b: &Self::Scalar) -> Self::Scalar;
    fn scalar_mul(&self, a: &Self::Scalar, b: &Self::Scalar) -> Self::Scalar;
    /// Multiplicative inverse; `None` for zero.
    fn scalar_invert(&self, a: &Self::Scalar) -> Option<Self::Scalar>;
    /// Reduce 64 uniform bytes into the exponent field.
    fn scalar_from_wide(&self, bytes: &[u8; 64]) -> Self::Scalar;
    fn random_scalar<R: RngCore + CryptoRng + ?Sized>(&self, rng: &mut R) -> Self::Scalar;

    fn encode_element(&self, e: &Self::Element) -> Vec<u8>;
    fn decode_element(&self, bytes: &[u8]) -> Result<Self::Element, CryptoError>;
    fn encode_scalar(&self, s: &Self::Scalar) -> Vec<u8>;
    fn decode_scalar(&self, bytes: &[u8]) -> Result<Self::Scalar, CryptoError>;

    /// Map [`BLOCK_BYTES`] of payload to a group element by try-and-increment.
    fn embed(&self, chunk: &[u8; BLOCK_BYTES]) -> Result<Self::Element, CryptoError>;
    /// Inverse of [`Group::embed`]; fails for elements outside the image.
    fn extract(&self, e: &Self::Element) -> Result<[u8; BLOCK_BYTES], CryptoError>;

    fn scalar_zero(&self) -> Self::Scalar {
        self.scalar_from_u64(0)
    }

    fn scalar_neg(&self, a: &Self::Scalar) -> Self::Scalar {
        self.scalar_sub(&self.scalar_zero(), a)
    }
}

// ---------------------------------------------------------------------------
// Ristretto255

/// The Ristretto prime-order group over Curve25519.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ristretto;

impl Group for Ristretto {
    type Element = RistrettoPoint;
    type Scalar = DalekScalar;
    type Table = Arc<RistrettoBasepointTable>;

    fn id(&self) -> GroupId {
        GroupId::Ristretto255
    }

    fn element_len(&self) -> usize {
        32
    }

    fn scalar_len(&self) -> usize {
        32
    }

    fn identity(&self) -> RistrettoPoint {
        RistrettoPoint::identity()
    }

    fn generator(&self) -> RistrettoPoint {
        curve25519_dalek::constants::RISTRETTO_BASEPOINT_POINT
    }

    fn op(&self, a: &RistrettoPoint, b: &RistrettoPoint) -> RistrettoPoint {
        a + b
    }

    fn invert(&self, a: &RistrettoPoint) -> RistrettoPoint {
        -a
    }

    fn pow(&self, base: &RistrettoPoint, e: &DalekScalar) -> RistrettoPoint {
        base * e
    }

    fn pow_gen(&self, e: &DalekScalar) -> RistrettoPoint {
        e * RISTRETTO_BASEPOINT_TABLE
    }

    fn table(&self, base: &RistrettoPoint) -> Self::Table {
        Arc::new(RistrettoBasepointTable::create(base))
    }

    fn pow_table(&self, table: &Self::Table, e: &DalekScalar) -> RistrettoPoint {
        e * table.as_ref()
    }

    fn scalar_from_u64(&self, v: u64) -> DalekScalar {
        DalekScalar::from(v)
    }

    fn scalar_add(&self, a: &DalekScalar, b: &DalekScalar) -> DalekScalar {
        a + b
    }

    fn scalar_sub(&self, a: &DalekScalar, b: &DalekScalar) -> DalekScalar {
        a - b
    }

    fn scalar_mul(&self, a: &DalekScalar, b: &DalekScalar) -> DalekScalar {
        a * b
    }

    fn scalar_invert(&self, a: &DalekScalar) -> Option<DalekScalar> {
        (*a != DalekScalar::ZERO).then(|| a.invert())
    }

    fn scalar_from_wide(&self, bytes: &[u8; 64]) -> DalekScalar {
        DalekScalar::from_bytes_mod_order_wide(bytes)
    }

    fn random_scalar<R: RngCore + CryptoRng + ?Sized>(&self, rng: &mut R) -> DalekScalar {
        let mut wide = [0u8; 64];
        rng.fill_bytes(&mut wide);
        DalekScalar::from_bytes_mod_order_wide(&wide)
    }

    fn encode_element(&self, e: &RistrettoPoint) -> Vec<u8> {
        e.compress().to_bytes().to_vec()
    }

    fn decode_element(&self, bytes: &[u8]) -> Result<RistrettoPoint, CryptoError> {
        let arr: [u8; 32] = bytes.try_into().map_err(|_| CryptoError::MalformedElement)?;
        CompressedRistretto(arr)
            .decompress()
            .ok_or(CryptoError::MalformedElement)
    }

    fn encode_scalar(&self, s: &DalekScalar) -> Vec<u8> {
        s.to_bytes().to_vec()
    }

    fn decode_scalar(&self, bytes: &[u8]) -> Result<DalekScalar, CryptoError> {
        let arr: [u8; 32] = bytes.try_into().map_err(|_| CryptoError::MalformedScalar)?;
        Option::from(DalekScalar::from_canonical_bytes(arr)).ok_or(CryptoError::MalformedScalar)
    }

    // Layout: [counter << 1][30 payload bytes][0x00]. The low bit of byte 0
    // must be clear and byte 31 keeps the encoding below the field modulus.
    fn embed(&self, chunk: &[u8; BLOCK_BYTES]) -> Result<RistrettoPoint, CryptoError> {
        let mut bytes = [0u8; 32];
        bytes[1..31].copy_from_slice(chunk);
        for counter in 0u8..128 {
            bytes[0] = counter << 1;
            if let Some(point) = CompressedRistretto(bytes).decompress() {
                return Ok(point);
            }
        }
        Err(CryptoError::EncodingExhausted)
    }

    fn extract(&self, e: &RistrettoPoint) -> Result<[u8; BLOCK_BYTES], CryptoError> {
        let bytes = e.compress().to_bytes();
        if bytes[31] != 0 {
            return Err(CryptoError::Undecodable);
        }
        let mut out = [0u8; BLOCK_BYTES];
        out.copy_from_slice(&bytes[1..31]);
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Schnorr subgroup of a safe prime

/// First Oakley group prime (768 bits), `p = 2q + 1` with `q` prime.
const MODP768_HEX: &str = "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74\
020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245E485B576\
625E7EC6F44C42E9A63A3620FFFFFFFFFFFFFFFF";

struct ModPParams {
    p: BigUint,
    q: BigUint,
    g: BigUint,
}

static MODP768: LazyLock<ModPParams> = LazyLock::new(|| {
    let p = BigUint::parse_bytes(MODP768_HEX.as_bytes(), 16).expect("valid prime constant");
    let q = (&p - 1u32) >> 1;
    ModPParams {
        p,
        q,
        g: BigUint::from(2u32),
    }
});

/// Quadratic residues modulo the 768-bit Oakley safe prime; `g = 2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ModP768;

impl ModP768 {
    pub fn modulus(&self) -> &'static BigUint {
        &MODP768.p
    }

    pub fn order(&self) -> &'static BigUint {
        &MODP768.q
    }

    fn in_subgroup(&self, x: &BigUint) -> bool {
        let params = &*MODP768;
        !x.is_zero() && x < &params.p && x.modpow(&params.q, &params.p).is_one()
    }

    fn fixed_width(&self, x: &BigUint, width: usize) -> Vec<u8> {
        let raw = x.to_bytes_be();
        let mut out = vec![0u8; width - raw.len()];
        out.extend_from_slice(&raw);
        out
    }
}

impl Group for ModP768 {
    type Element = BigUint;
    type Scalar = BigUint;
    type Table = BigUint;

    fn id(&self) -> GroupId {
        GroupId::Modp768
    }

    fn element_len(&self) -> usize {
        96
    }

    fn scalar_len(&self) -> usize {
        96
    }

    fn identity(&self) -> BigUint {
        BigUint::one()
    }

    fn generator(&self) -> BigUint {
        MODP768.g.clone()
    }

    fn op(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a * b) % &MODP768.p
    }

    fn invert(&self, a: &BigUint) -> BigUint {
        // a^(q-1) = a^-1 for elements of order q.
        let params = &*MODP768;
        a.modpow(&(&params.q - 1u32), &params.p)
    }

    fn pow(&self, base: &BigUint, e: &BigUint) -> BigUint {
        base.modpow(e, &MODP768.p)
    }

    fn pow_gen(&self, e: &BigUint) -> BigUint {
        MODP768.g.modpow(e, &MODP768.p)
    }

    fn table(&self, base: &BigUint) -> BigUint {
        base.clone()
    }

    fn pow_table(&self, table: &BigUint, e: &BigUint) -> BigUint {
        self.pow(table, e)
    }

    fn scalar_from_u64(&self, v: u64) -> BigUint {
        BigUint::from(v) % &MODP768.q
    }

    fn scalar_add(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a + b) % &MODP768.q
    }

    fn scalar_sub(&self, a: &BigUint, b: &BigUint) -> BigUint {
        let q = &MODP768.q;
        ((a % q) + q - (b % q)) % q
    }

    fn scalar_mul(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a * b) % &MODP768.q
    }

    fn scalar_invert(&self, a: &BigUint) -> Option<BigUint> {
        let q = &MODP768.q;
        let a = a % q;
        (!a.is_zero()).then(|| a.modpow(&(q - 2u32), q))
    }

    fn scalar_from_wide(&self, bytes: &[u8; 64]) -> BigUint {
        BigUint::from_bytes_be(bytes) % &MODP768.q
    }

    fn random_scalar<R: RngCore + CryptoRng + ?Sized>(&self, rng: &mut R) -> BigUint {
        let mut bytes = [0u8; 112];
        rng.fill_bytes(&mut bytes);
        BigUint::from_bytes_be(&bytes) % &MODP768.q
    }

    fn encode_element(&self, e: &BigUint) -> Vec<u8> {
        self.fixed_width(e, 96)
    }

    fn decode_element(&self, bytes: &[u8]) -> Result<BigUint, CryptoError> {
        if bytes.len() != 96 {
            return Err(CryptoError::MalformedElement);
        }
        let x = BigUint::from_bytes_be(bytes);
        if self.in_subgroup(&x) {
            Ok(x)
        } else {
            Err(CryptoError::MalformedElement)
        }
    }

    fn encode_scalar(&self, s: &BigUint) -> Vec<u8> {
        self.fixed_width(s, 96)
    }

    fn decode_scalar(&self, bytes: &[u8]) -> Result<BigUint, CryptoError> {
        if bytes.len() != 96 {
            return Err(CryptoError::MalformedScalar);
        }
        let s = BigUint::from_bytes_be(bytes);
        if s < MODP768.q {
            Ok(s)
        } else {
            Err(CryptoError::MalformedScalar)
        }
    }

    // Integer value: counter ‖ 30 payload bytes, big-endian, well below p.
    fn embed(&self, chunk: &[u8; BLOCK_BYTES]) -> Result<BigUint, CryptoError> {
        let mut bytes = [0u8; BLOCK_BYTES + 1];
        bytes[1..].copy_from_slice(chunk);
        for counter in 0u8..=255 {
            bytes[0] = counter;
            let x = BigUint::from_bytes_be(&bytes);
            if self.in_subgroup(&x) {
                return Ok(x);
            }
        }
        Err(CryptoError::EncodingExhausted)
    }

    fn extract(&self, e: &BigUint) -> Result<[u8; BLOCK_BYTES], CryptoError> {
        let raw = e.to_bytes_be();
        if raw.len() > BLOCK_BYTES + 1 {
            return Err(CryptoError::Undecodable);
        }
        let mut padded = [0u8; BLOCK_BYTES + 1];
        padded[BLOCK_BYTES + 1 - raw.len()..].copy_from_slice(&raw);
        let mut out = [0u8; BLOCK_BYTES];
        out.copy_from_slice(&padded[1..]);
        Ok(out)
    }
}
