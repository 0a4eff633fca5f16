//! Hash commitments `h(payload ‖ nonce)` with a fresh 256-bit nonce.

use rand::{CryptoRng, RngCore};

use super::hash::{hash_tagged, Digest, Domain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Commitment {
    pub value: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Opening {
    pub payload: Vec<u8>,
    pub nonce: [u8; 32],
}

fn digest(payload: &[u8], nonce: &[u8; 32]) -> Digest {
    let len = (payload.len() as u64).to_be_bytes();
    hash_tagged(Domain::Commitment, &[&len, payload, nonce])
}

/// Commit to `payload`; the opening stays with the committer.
pub fn commit<R: RngCore + CryptoRng + ?Sized>(payload: &[u8], rng: &mut R) -> (Commitment, Opening) {
    let mut nonce = [0u8; 32];
    rng.fill_bytes(&mut nonce);
    let value = digest(payload, &nonce);
    (
        Commitment { value },
        Opening {
            payload: payload.to_vec(),
            nonce,
        },
    )
}

pub fn verify_open(value: &Digest, opening: &Opening) -> bool {
    digest(&opening.payload, &opening.nonce) == *value
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn accept_and_reject() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (c, opening) = commit(b"rand-1", &mut rng);
        assert!(verify_open(&c.value, &opening));

        let wrong_payload = Opening {
            payload: b"rand-2".to_vec(),
            ..opening.clone()
        };
        assert!(!verify_open(&c.value, &wrong_payload));

        let mut wrong_nonce = opening.clone();
        wrong_nonce.nonce[0] ^= 1;
        assert!(!verify_open(&c.value, &wrong_nonce));
    }

    #[test]
    fn nonces_are_fresh() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (a, _) = commit(b"same", &mut rng);
        let (b, _) = commit(b"same", &mut rng);
        assert_ne!(a, b);
    }

    #[test]
    fn no_second_opening_in_random_search() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (c, opening) = commit(&[7u8; 32], &mut rng);
        let mut candidate = Opening {
            payload: vec![0u8; 32],
            nonce: [0u8; 32],
        };
        for _ in 0..(1u32 << 20) {
            rng.fill_bytes(&mut candidate.payload);
            rng.fill_bytes(&mut candidate.nonce);
            if candidate != opening {
                assert!(!verify_open(&c.value, &candidate));
            }
        }
    }
}
