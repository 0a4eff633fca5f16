//! Permute-and-re-randomize with a cut-and-choose proof of correct shuffling.
//!
//! The prover publishes `k` shadow shuffles `D_t` of the input batch. A
//! Fiat-Shamir challenge bit per shadow asks for either the witness taking
//! `C` to `D_t` or the witness taking `D_t` to `C'`. Either response alone
//! reveals nothing about the real permutation; a prover without a valid
//! witness survives each shadow with probability 1/2.

use rand::seq::SliceRandom;
use rand::{CryptoRng, RngCore};
use rayon::prelude::*;
use thiserror::Error;

use crate::crypto::elgamal::{read_ciphertexts, write_ciphertexts};
use crate::crypto::hash::{hash_tagged, Domain};
use crate::crypto::{reencrypt_with, Ciphertext, CryptoError, Group, PublicKey};
use crate::wire::{Reader, WireError, Writer};

/// Soundness parameter used by the protocol unless configured otherwise.
pub const DEFAULT_SOUNDNESS: usize = 40;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShuffleError {
    #[error("cannot shuffle an empty batch")]
    Empty,
    #[error("size mismatch: {inputs} inputs, permutation of {perm}")]
    SizeMismatch { inputs: usize, perm: usize },
    #[error("ciphertexts in one batch must have equal block counts")]
    RaggedBatch,
    #[error("witness does not take the input batch to the output batch")]
    WitnessMismatch,
    #[error("soundness parameter must be at least 1")]
    ZeroSoundness,
    #[error("not a permutation")]
    InvalidPermutation,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Output position `i` takes input `perm[i]` (zero-based).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn random<R: RngCore + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(rng);
        Self(v)
    }

    pub fn from_vec(v: Vec<usize>) -> Result<Self, ShuffleError> {
        let mut seen = vec![false; v.len()];
        for &x in &v {
            match seen.get_mut(x) {
                Some(slot) if !*slot => *slot = true,
                _ => return Err(ShuffleError::InvalidPermutation),
            }
        }
        Ok(Self(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &p) in self.0.iter().enumerate() {
            inv[p] = i;
        }
        Self(inv)
    }
}

/// The secret behind one shuffle: permutation plus per-block exponents for
/// each output position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShuffleWitness<G: Group> {
    pub phi: Permutation,
    pub s: Vec<Vec<G::Scalar>>,
}

impl<G: Group> ShuffleWitness<G> {
    fn random<R: RngCore + CryptoRng + ?Sized>(group: &G, n: usize, blocks: usize, rng: &mut R) -> Self {
        let phi = Permutation::random(n, rng);
        let s = (0..n)
            .map(|_| (0..blocks).map(|_| group.random_scalar(rng)).collect())
            .collect();
        Self { phi, s }
    }

    fn write(&self, group: &G, w: &mut Writer) {
        w.len_prefix(self.phi.len());
        for &p in self.phi.as_slice() {
            w.u32(p as u32);
        }
        w.len_prefix(self.s.len());
        for row in &self.s {
            w.len_prefix(row.len());
            for s in row {
                w.fixed(&group.encode_scalar(s));
            }
        }
    }

    fn read(group: &G, r: &mut Reader<'_>) -> Result<Self, ShuffleError> {
        let n = r.len_prefix("permutation")?;
        let perm = (0..n)
            .map(|_| r.u32("permutation entry").map(|p| p as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let phi = Permutation::from_vec(perm)?;
        let rows = r.len_prefix("exponents")?;
        let mut s = Vec::with_capacity(rows);
        for _ in 0..rows {
            let m = r.len_prefix("exponent row")?;
            let row = (0..m)
                .map(|_| {
                    let bytes = r.fixed(group.scalar_len(), "exponent")?;
                    Ok(group.decode_scalar(bytes)?)
                })
                .collect::<Result<Vec<_>, ShuffleError>>()?;
            s.push(row);
        }
        Ok(Self { phi, s })
    }
}

/// Public inputs to prover and verifier. `context` binds the proof to the
/// layer, mix and batch it was produced for.
#[derive(Clone, Copy, Debug)]
pub struct ShuffleStatement<'a, G: Group> {
    pub pk: &'a PublicKey<G>,
    pub context: &'a [u8],
    pub input: &'a [Ciphertext<G>],
    pub output: &'a [Ciphertext<G>],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Response<G: Group> {
    /// Challenge bit 0: witness taking the input batch to the shadow.
    Open(ShuffleWitness<G>),
    /// Challenge bit 1: witness taking the shadow to the output batch.
    Link(ShuffleWitness<G>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShuffleProof<G: Group> {
    pub shadows: Vec<Vec<Ciphertext<G>>>,
    pub challenge: Vec<bool>,
    pub responses: Vec<Response<G>>,
}

fn uniform_blocks<G: Group>(batch: &[Ciphertext<G>]) -> Result<usize, ShuffleError> {
    let first = batch.first().ok_or(ShuffleError::Empty)?.block_count();
    if batch.iter().any(|c| c.block_count() != first) {
        return Err(ShuffleError::RaggedBatch);
    }
    Ok(first)
}

/// Apply a known witness: `out[i] = ReEnc(input[phi[i]], s[i])`.
pub fn shuffle_with<G: Group>(
    pk: &PublicKey<G>,
    input: &[Ciphertext<G>],
    witness: &ShuffleWitness<G>,
) -> Result<Vec<Ciphertext<G>>, ShuffleError> {
    if input.is_empty() {
        return Err(ShuffleError::Empty);
    }
    if witness.phi.len() != input.len() || witness.s.len() != input.len() {
        return Err(ShuffleError::SizeMismatch {
            inputs: input.len(),
            perm: witness.phi.len(),
        });
    }
    witness
        .phi
        .as_slice()
        .iter()
        .zip(&witness.s)
        .map(|(&src, s)| Ok(reencrypt_with(pk, &input[src], s)?))
        .collect()
}

/// Shuffle `input` by `phi` with fresh re-randomization.
pub fn shuffle<G, R>(
    pk: &PublicKey<G>,
    input: &[Ciphertext<G>],
    phi: Permutation,
    rng: &mut R,
) -> Result<(Vec<Ciphertext<G>>, ShuffleWitness<G>), ShuffleError>
where
    G: Group,
    R: RngCore + CryptoRng + ?Sized,
{
    if phi.len() != input.len() {
        return Err(ShuffleError::SizeMismatch {
            inputs: input.len(),
            perm: phi.len(),
        });
    }
    let blocks = uniform_blocks(input)?;
    let group = pk.group();
    let s = (0..input.len())
        .map(|_| (0..blocks).map(|_| group.random_scalar(rng)).collect())
        .collect();
    let witness = ShuffleWitness { phi, s };
    let output = shuffle_with(pk, input, &witness)?;
    Ok((output, witness))
}

fn challenge_bits<G: Group>(stmt: &ShuffleStatement<'_, G>, shadows: &[Vec<Ciphertext<G>>]) -> Vec<bool> {
    let group = stmt.pk.group();
    let mut w = Writer::new();
    w.u8(group.id().to_byte())
        .bytes(&stmt.pk.to_bytes())
        .bytes(stmt.context);
    write_ciphertexts(group, stmt.input, &mut w);
    write_ciphertexts(group, stmt.output, &mut w);
    w.len_prefix(shadows.len());
    for shadow in shadows {
        write_ciphertexts(group, shadow, &mut w);
    }
    let seed = hash_tagged(Domain::FiatShamir, &[w.as_slice()]);
    let k = shadows.len();
    let mut bits = Vec::with_capacity(k);
    let mut counter = 0u32;
    while bits.len() < k {
        let block = hash_tagged(Domain::FiatShamir, &[&seed, &counter.to_be_bytes()]);
        for byte in block {
            for bit in 0..8 {
                if bits.len() < k {
                    bits.push((byte >> bit) & 1 == 1);
                }
            }
        }
        counter += 1;
    }
    bits
}

/// Prove that `stmt.output` is a shuffle of `stmt.input`, with soundness
/// error `2^-soundness`.
pub fn prove_shuffle<G, R>(
    stmt: &ShuffleStatement<'_, G>,
    witness: &ShuffleWitness<G>,
    soundness: usize,
    rng: &mut R,
) -> Result<ShuffleProof<G>, ShuffleError>
where
    G: Group,
    R: RngCore + CryptoRng + ?Sized,
{
    if soundness == 0 {
        return Err(ShuffleError::ZeroSoundness);
    }
    let blocks = uniform_blocks(stmt.input)?;
    if shuffle_with(stmt.pk, stmt.input, witness)? != stmt.output {
        return Err(ShuffleError::WitnessMismatch);
    }
    let group = stmt.pk.group();
    let n = stmt.input.len();
    let shadow_witnesses: Vec<ShuffleWitness<G>> = (0..soundness)
        .map(|_| ShuffleWitness::random(group, n, blocks, rng))
        .collect();
    let shadows = shadow_witnesses
        .par_iter()
        .map(|w| shuffle_with(stmt.pk, stmt.input, w))
        .collect::<Result<Vec<_>, _>>()?;
    let challenge = challenge_bits(stmt, &shadows);
    let responses = shadow_witnesses
        .into_iter()
        .zip(&challenge)
        .map(|(shadow, &bit)| {
            if !bit {
                return Response::Open(shadow);
            }
            // Output i came from input phi[i], which sits at position
            // shadow_inv[phi[i]] of the shadow.
            let shadow_inv = shadow.phi.inverse();
            let psi: Vec<usize> = witness
                .phi
                .as_slice()
                .iter()
                .map(|&src| shadow_inv.as_slice()[src])
                .collect();
            let s = psi
                .iter()
                .zip(&witness.s)
                .map(|(&j, real)| {
                    real.iter()
                        .zip(&shadow.s[j])
                        .map(|(a, b)| group.scalar_sub(a, b))
                        .collect()
                })
                .collect();
            Response::Link(ShuffleWitness {
                phi: Permutation(psi),
                s,
            })
        })
        .collect();
    Ok(ShuffleProof {
        shadows,
        challenge,
        responses,
    })
}

/// Check every response against the challenge bits stored in the proof,
/// without recomputing them.
pub fn verify_responses<G: Group>(stmt: &ShuffleStatement<'_, G>, proof: &ShuffleProof<G>) -> bool {
    let k = proof.shadows.len();
    if k == 0
        || proof.challenge.len() != k
        || proof.responses.len() != k
        || stmt.input.is_empty()
        || stmt.input.len() != stmt.output.len()
    {
        return false;
    }
    if uniform_blocks(stmt.input).is_err() {
        return false;
    }
    proof
        .shadows
        .par_iter()
        .zip(&proof.challenge)
        .zip(&proof.responses)
        .all(|((shadow, &bit), response)| match (bit, response) {
            (false, Response::Open(w)) => shuffle_with(stmt.pk, stmt.input, w).is_ok_and(|d| d == *shadow),
            (true, Response::Link(w)) => shuffle_with(stmt.pk, shadow, w).is_ok_and(|out| out == stmt.output),
            _ => false,
        })
}

/// Full verification: recompute the Fiat-Shamir challenge, then check the
/// responses.
pub fn verify_shuffle<G: Group>(stmt: &ShuffleStatement<'_, G>, proof: &ShuffleProof<G>) -> bool {
    if proof.shadows.is_empty() || challenge_bits(stmt, &proof.shadows) != proof.challenge {
        return false;
    }
    verify_responses(stmt, proof)
}

/// Build an accepting transcript for chosen challenge bits without any
/// witness. Used to check the zero-knowledge property, and by cheating
/// provers in adversary simulations.
pub fn simulate_proof<G, R>(
    stmt: &ShuffleStatement<'_, G>,
    bits: &[bool],
    rng: &mut R,
) -> Result<ShuffleProof<G>, ShuffleError>
where
    G: Group,
    R: RngCore + CryptoRng + ?Sized,
{
    if bits.is_empty() {
        return Err(ShuffleError::ZeroSoundness);
    }
    let blocks = uniform_blocks(stmt.input)?;
    if stmt.output.len() != stmt.input.len() {
        return Err(ShuffleError::SizeMismatch {
            inputs: stmt.input.len(),
            perm: stmt.output.len(),
        });
    }
    let group = stmt.pk.group();
    let n = stmt.input.len();
    let mut shadows = Vec::with_capacity(bits.len());
    let mut responses = Vec::with_capacity(bits.len());
    for &bit in bits {
        let w = ShuffleWitness::random(group, n, blocks, rng);
        if !bit {
            shadows.push(shuffle_with(stmt.pk, stmt.input, &w)?);
            responses.push(Response::Open(w));
        } else {
            // Place ReEnc(output[i], -s_i) at position phi[i] so that
            // applying (phi, s) to the shadow lands exactly on the output.
            let mut shadow: Vec<Option<Ciphertext<G>>> = vec![None; n];
            for (i, &pos) in w.phi.as_slice().iter().enumerate() {
                let neg: Vec<G::Scalar> = w.s[i].iter().map(|s| group.scalar_neg(s)).collect();
                shadow[pos] = Some(reencrypt_with(stmt.pk, &stmt.output[i], &neg)?);
            }
            shadows.push(shadow.into_iter().map(|c| c.expect("permutation covers all")).collect());
            responses.push(Response::Link(w));
        }
    }
    Ok(ShuffleProof {
        shadows,
        challenge: bits.to_vec(),
        responses,
    })
}

/// A cheating prover for an output that is not a shuffle of the input: it
/// guesses every challenge bit in advance and succeeds only if the
/// Fiat-Shamir hash agrees with all `soundness` guesses.
pub fn forge_proof<G, R>(
    stmt: &ShuffleStatement<'_, G>,
    soundness: usize,
    rng: &mut R,
) -> Result<ShuffleProof<G>, ShuffleError>
where
    G: Group,
    R: RngCore + CryptoRng + ?Sized,
{
    let guesses: Vec<bool> = (0..soundness).map(|_| rng.next_u32() & 1 == 1).collect();
    let mut proof = simulate_proof(stmt, &guesses, rng)?;
    proof.challenge = challenge_bits(stmt, &proof.shadows);
    Ok(proof)
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

impl<G: Group> ShuffleProof<G> {
    pub fn soundness(&self) -> usize {
        self.shadows.len()
    }

    pub fn write(&self, group: &G, w: &mut Writer) {
        w.len_prefix(self.shadows.len());
        for shadow in &self.shadows {
            write_ciphertexts(group, shadow, w);
        }
        w.u32(self.challenge.len() as u32);
        w.bytes(&pack_bits(&self.challenge));
        w.len_prefix(self.responses.len());
        for response in &self.responses {
            match response {
                Response::Open(wit) => {
                    w.u8(0);
                    wit.write(group, w);
                }
                Response::Link(wit) => {
                    w.u8(1);
                    wit.write(group, w);
                }
            }
        }
    }

    pub fn read(group: &G, r: &mut Reader<'_>) -> Result<Self, ShuffleError> {
        let k = r.len_prefix("shadows")?;
        let shadows = (0..k)
            .map(|_| read_ciphertexts(group, r))
            .collect::<Result<Vec<_>, _>>()?;
        let nbits = r.u32("challenge length")? as usize;
        let packed = r.bytes("challenge")?;
        if packed.len() != nbits.div_ceil(8) {
            return Err(WireError::Invalid("challenge").into());
        }
        let challenge = (0..nbits).map(|i| (packed[i / 8] >> (i % 8)) & 1 == 1).collect();
        let m = r.len_prefix("responses")?;
        let responses = (0..m)
            .map(|_| match r.u8("response tag")? {
                0 => Ok(Response::Open(ShuffleWitness::read(group, r)?)),
                1 => Ok(Response::Link(ShuffleWitness::read(group, r)?)),
                _ => Err(WireError::Invalid("response tag").into()),
            })
            .collect::<Result<Vec<_>, ShuffleError>>()?;
        Ok(Self {
            shadows,
            challenge,
            responses,
        })
    }

    pub fn to_bytes(&self, group: &G) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(group, &mut w);
        w.finish()
    }

    pub fn from_bytes(group: &G, bytes: &[u8]) -> Result<Self, ShuffleError> {
        let mut r = Reader::new(bytes);
        let proof = Self::read(group, &mut r)?;
        r.finish()?;
        Ok(proof)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{decrypt, encrypt, keygen_threshold, EncKeyPair, Ristretto, SecretKey};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Fixture {
        kp: EncKeyPair<Ristretto>,
        sk: SecretKey<Ristretto>,
        rng: ChaCha20Rng,
    }

    fn fixture(seed: u64) -> Fixture {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let kp = keygen_threshold(&Ristretto, 1, 1, &mut rng).unwrap();
        let sk = SecretKey { x: kp.shares[0].value };
        Fixture { kp, sk, rng }
    }

    fn batch(f: &mut Fixture, w: usize, blocks: usize) -> Vec<Ciphertext<Ristretto>> {
        (0..w)
            .map(|i| encrypt(&f.kp.public, format!("msg-{i}").as_bytes(), blocks, &mut f.rng).unwrap())
            .collect()
    }

    fn plaintexts(f: &Fixture, batch: &[Ciphertext<Ristretto>]) -> Vec<Vec<u8>> {
        let mut v: Vec<_> = batch.iter().map(|c| decrypt(&Ristretto, &f.sk, c).unwrap()).collect();
        v.sort();
        v
    }

    #[test]
    fn single_element_batch() {
        let mut f = fixture(1);
        let c = batch(&mut f, 1, 1);
        let (out, w) = shuffle(&f.kp.public, &c, Permutation::identity(1), &mut f.rng).unwrap();
        assert_ne!(out, c);
        assert_eq!(w.phi.as_slice(), &[0]);
        assert_eq!(plaintexts(&f, &out), plaintexts(&f, &c));
    }

    #[test]
    fn identity_with_zero_randomness() {
        let mut f = fixture(2);
        let c = batch(&mut f, 4, 2);
        let w = ShuffleWitness::<Ristretto> {
            phi: Permutation::identity(4),
            s: vec![vec![Ristretto.scalar_zero(); 2]; 4],
        };
        assert_eq!(shuffle_with(&f.kp.public, &c, &w).unwrap(), c);
    }

    #[test]
    fn shuffle_preserves_plaintext_multiset() {
        let mut f = fixture(3);
        for _ in 0..5 {
            let c = batch(&mut f, 8, 2);
            let phi = Permutation::random(8, &mut f.rng);
            let (out, w) = shuffle(&f.kp.public, &c, phi, &mut f.rng).unwrap();
            for (i, &src) in w.phi.as_slice().iter().enumerate() {
                assert_eq!(
                    decrypt(&Ristretto, &f.sk, &out[i]).unwrap(),
                    decrypt(&Ristretto, &f.sk, &c[src]).unwrap()
                );
            }
            assert_eq!(plaintexts(&f, &out), plaintexts(&f, &c));
        }
    }

    #[test]
    fn shuffle_errors() {
        let mut f = fixture(4);
        let c = batch(&mut f, 3, 1);
        assert!(matches!(
            shuffle(&f.kp.public, &c, Permutation::identity(2), &mut f.rng),
            Err(ShuffleError::SizeMismatch { inputs: 3, perm: 2 })
        ));
        assert_eq!(
            shuffle(&f.kp.public, &[], Permutation::identity(0), &mut f.rng).unwrap_err(),
            ShuffleError::Empty
        );
        let mut ragged = c.clone();
        ragged.push(encrypt(&f.kp.public, b"x", 2, &mut f.rng).unwrap());
        assert_eq!(
            shuffle(&f.kp.public, &ragged, Permutation::identity(4), &mut f.rng).unwrap_err(),
            ShuffleError::RaggedBatch
        );
        assert!(Permutation::from_vec(vec![0, 0, 1]).is_err());
        assert!(Permutation::from_vec(vec![0, 3]).is_err());
    }

    #[test]
    fn honest_proof_verifies_and_round_trips() {
        let mut f = fixture(5);
        let c = batch(&mut f, 6, 2);
        let phi = Permutation::random(6, &mut f.rng);
        let (out, w) = shuffle(&f.kp.public, &c, phi, &mut f.rng).unwrap();
        let stmt = ShuffleStatement {
            pk: &f.kp.public,
            context: b"ctr=1 mix=1",
            input: &c,
            output: &out,
        };
        let proof = prove_shuffle(&stmt, &w, 16, &mut f.rng).unwrap();
        assert_eq!(proof.soundness(), 16);
        assert!(verify_shuffle(&stmt, &proof));
        let bytes = proof.to_bytes(&Ristretto);
        assert_eq!(ShuffleProof::from_bytes(&Ristretto, &bytes).unwrap(), proof);

        // Proofs do not transfer to another context.
        let other = ShuffleStatement {
            context: b"ctr=2 mix=1",
            ..stmt
        };
        assert!(!verify_shuffle(&other, &proof));
    }

    #[test]
    fn inconsistent_witness_is_refused() {
        let mut f = fixture(6);
        let c = batch(&mut f, 3, 1);
        let (out, mut w) = shuffle(&f.kp.public, &c, Permutation::random(3, &mut f.rng), &mut f.rng).unwrap();
        w.s[0][0] = Ristretto.scalar_from_u64(5);
        let stmt = ShuffleStatement {
            pk: &f.kp.public,
            context: b"",
            input: &c,
            output: &out,
        };
        assert_eq!(
            prove_shuffle(&stmt, &w, 4, &mut f.rng).unwrap_err(),
            ShuffleError::WitnessMismatch
        );
        assert_eq!(
            prove_shuffle(&stmt, &w, 0, &mut f.rng).unwrap_err(),
            ShuffleError::ZeroSoundness
        );
    }

    #[test]
    fn proof_size_is_linear_in_k_and_w() {
        let mut f = fixture(7);
        let mut size = |w: usize, k: usize| {
            let c = batch(&mut f, w, 1);
            let (out, wit) = shuffle(&f.kp.public, &c, Permutation::random(w, &mut f.rng), &mut f.rng).unwrap();
            let stmt = ShuffleStatement {
                pk: &f.kp.public,
                context: b"",
                input: &c,
                output: &out,
            };
            prove_shuffle(&stmt, &wit, k, &mut f.rng)
                .unwrap()
                .to_bytes(&Ristretto)
                .len()
        };
        let base = size(4, 8);
        let double_k = size(4, 16);
        let double_w = size(8, 8);
        // Fixed overhead is a few dozen bytes against kilobytes of payload.
        assert!((double_k as f64 / base as f64 - 2.0).abs() < 0.05);
        assert!((double_w as f64 / base as f64 - 2.0).abs() < 0.1);
    }

    #[test]
    fn tampered_or_reordered_output_is_rejected() {
        let mut f = fixture(8);
        let c = batch(&mut f, 5, 1);
        let (out, w) = shuffle(&f.kp.public, &c, Permutation::random(5, &mut f.rng), &mut f.rng).unwrap();
        let stmt = ShuffleStatement {
            pk: &f.kp.public,
            context: b"",
            input: &c,
            output: &out,
        };
        let proof = prove_shuffle(&stmt, &w, 16, &mut f.rng).unwrap();

        let mut swapped = out.clone();
        swapped.swap(0, 1);
        assert!(!verify_shuffle(
            &ShuffleStatement {
                output: &swapped,
                ..stmt
            },
            &proof
        ));

        let mut accepted = 0;
        for _ in 0..200 {
            let mut tampered = out.clone();
            tampered[2] = encrypt(&f.kp.public, b"injected", 1, &mut f.rng).unwrap();
            if verify_shuffle(
                &ShuffleStatement {
                    output: &tampered,
                    ..stmt
                },
                &proof,
            ) {
                accepted += 1;
            }
        }
        assert!(accepted <= 1);
    }

    #[test]
    fn simulated_transcripts_pass_response_checks() {
        let mut f = fixture(9);
        let c = batch(&mut f, 4, 2);
        let (out, _) = shuffle(&f.kp.public, &c, Permutation::random(4, &mut f.rng), &mut f.rng).unwrap();
        let stmt = ShuffleStatement {
            pk: &f.kp.public,
            context: b"sim",
            input: &c,
            output: &out,
        };
        let bits = [true, false, true, true, false, false, true, false];
        let sim = simulate_proof(&stmt, &bits, &mut f.rng).unwrap();
        assert_eq!(sim.challenge, bits);
        assert!(verify_responses(&stmt, &sim));
        // Only the recomputed Fiat-Shamir challenge separates it from a real proof.
        assert_eq!(verify_shuffle(&stmt, &sim), challenge_bits(&stmt, &sim.shadows) == bits);
    }

    #[test]
    fn mismatched_response_kind_is_rejected() {
        let mut f = fixture(10);
        let c = batch(&mut f, 3, 1);
        let (out, w) = shuffle(&f.kp.public, &c, Permutation::random(3, &mut f.rng), &mut f.rng).unwrap();
        let stmt = ShuffleStatement {
            pk: &f.kp.public,
            context: b"",
            input: &c,
            output: &out,
        };
        let mut proof = prove_shuffle(&stmt, &w, 8, &mut f.rng).unwrap();
        proof.responses[0] = match proof.responses[0].clone() {
            Response::Open(x) => Response::Link(x),
            Response::Link(x) => Response::Open(x),
        };
        assert!(!verify_shuffle(&stmt, &proof));
    }
}
