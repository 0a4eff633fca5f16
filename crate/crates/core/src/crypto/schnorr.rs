//! Schnorr signatures over the same prime-order groups.
//!
//! Nonces are derived from the signing key and message, so signing is a pure
//! function and transcripts replay byte for byte.

use std::fmt;

use rand::{CryptoRng, RngCore};

use super::group::Group;
use super::hash::{hash_wide, Domain};
use super::CryptoError;

#[derive(Clone)]
pub struct SigKeyPair<G: Group> {
    group: G,
    sks: G::Scalar,
    pkv: G::Element,
}

impl<G: Group> fmt::Debug for SigKeyPair<G> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigKeyPair")
            .field("pkv", &self.pkv)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Signature<G: Group> {
    pub r: G::Element,
    pub s: G::Scalar,
}

impl<G: Group> Signature<G> {
    pub fn to_bytes(&self, group: &G) -> Vec<u8> {
        let mut out = group.encode_element(&self.r);
        out.extend_from_slice(&group.encode_scalar(&self.s));
        out
    }

    pub fn from_bytes(group: &G, bytes: &[u8]) -> Result<Self, CryptoError> {
        let el = group.element_len();
        if bytes.len() != el + group.scalar_len() {
            return Err(CryptoError::MalformedSignature);
        }
        Ok(Self {
            r: group.decode_element(&bytes[..el])?,
            s: group.decode_scalar(&bytes[el..])?,
        })
    }
}

fn challenge<G: Group>(group: &G, r: &G::Element, pkv: &G::Element, message: &[u8]) -> G::Scalar {
    let r = group.encode_element(r);
    let pk = group.encode_element(pkv);
    let len = (message.len() as u64).to_be_bytes();
    group.scalar_from_wide(&hash_wide(Domain::Signature, &[&r, &pk, &len, message]))
}

impl<G: Group> SigKeyPair<G> {
    pub fn generate<R: RngCore + CryptoRng + ?Sized>(group: &G, rng: &mut R) -> Self {
        let sks = group.random_scalar(rng);
        let pkv = group.pow_gen(&sks);
        Self {
            group: group.clone(),
            sks,
            pkv,
        }
    }

    pub fn public(&self) -> &G::Element {
        &self.pkv
    }

    pub fn sign(&self, message: &[u8]) -> Signature<G> {
        let g = &self.group;
        let sk = g.encode_scalar(&self.sks);
        let k = g.scalar_from_wide(&hash_wide(Domain::Nonce, &[&sk, message]));
        let r = g.pow_gen(&k);
        let e = challenge(g, &r, &self.pkv, message);
        let s = g.scalar_add(&k, &g.scalar_mul(&e, &self.sks));
        Signature { r, s }
    }
}

/// Accepts iff `g^s = R · pkv^e`.
pub fn verify_sig<G: Group>(group: &G, pkv: &G::Element, message: &[u8], sig: &Signature<G>) -> bool {
    let e = challenge(group, &sig.r, pkv, message);
    group.pow_gen(&sig.s) == group.op(&sig.r, &group.pow(pkv, &e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::group::{ModP768, Ristretto};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn round_trip_and_tamper() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let key = SigKeyPair::generate(&Ristretto, &mut rng);
        let other = SigKeyPair::generate(&Ristretto, &mut rng);
        let msg = b"serialized ciphertext list".to_vec();
        let sig = key.sign(&msg);
        assert!(verify_sig(&Ristretto, key.public(), &msg, &sig));
        assert_eq!(sig, key.sign(&msg));

        let mut flipped = msg.clone();
        flipped[3] ^= 0x10;
        assert!(!verify_sig(&Ristretto, key.public(), &flipped, &sig));
        assert!(!verify_sig(&Ristretto, other.public(), &msg, &sig));

        let bytes = sig.to_bytes(&Ristretto);
        assert_eq!(Signature::from_bytes(&Ristretto, &bytes).unwrap(), sig);
    }

    #[test]
    fn modp_signatures() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let key = SigKeyPair::generate(&ModP768, &mut rng);
        let sig = key.sign(b"m");
        assert!(verify_sig(&ModP768, key.public(), b"m", &sig));
        assert!(!verify_sig(&ModP768, key.public(), b"n", &sig));
    }

    #[test]
    fn random_mutations_never_verify() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let key = SigKeyPair::generate(&Ristretto, &mut rng);
        let msg = b"board entry body".to_vec();
        let sig_bytes = key.sign(&msg).to_bytes(&Ristretto);
        for trial in 0..10_000u32 {
            if trial % 2 == 0 {
                let mut m = msg.clone();
                let bit = rng.gen_range(0..m.len() * 8);
                m[bit / 8] ^= 1 << (bit % 8);
                let sig = Signature::from_bytes(&Ristretto, &sig_bytes).unwrap();
                assert!(!verify_sig(&Ristretto, key.public(), &m, &sig));
            } else {
                let mut s = sig_bytes.clone();
                let bit = rng.gen_range(0..s.len() * 8);
                s[bit / 8] ^= 1 << (bit % 8);
                if let Ok(sig) = Signature::from_bytes(&Ristretto, &s) {
                    assert!(!verify_sig(&Ristretto, key.public(), &msg, &sig));
                }
            }
        }
    }
}
