//! Joint coin tossing and the next-hop assignment it keys.
//!
//! `Rand` is the XOR of every routing entity's opened string. `H` turns it
//! into a permutation of output positions, and `Map` hands consecutive runs
//! of that permutation to next-layer mixes in proportion to throughput.

mod entity;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::board::BoardError;
use crate::crypto::{hash_tagged, verify_open, Digest, Domain, Opening};
use crate::wire::{Reader, WireError, Writer};

pub use entity::RoutingEntity;

pub type Rand = [u8; 32];

#[derive(Debug, Error)]
pub enum RoutingError {
    #[error("no mixes to route to")]
    NoTargets,
    #[error("total throughput of the target layer is zero")]
    ZeroThroughput,
    #[error("no surviving mixes in layer {0}")]
    NoSurvivors(u32),
    #[error("cannot open {session}: commitments missing from {missing:?}")]
    OpenBeforeCommit { session: SessionId, missing: Vec<u32> },
    #[error("no pending commitment for {0}")]
    UnknownSession(SessionId),
    #[error(transparent)]
    Board(#[from] BoardError),
}

/// A mix and its throughput `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Capacity {
    pub mix: u32,
    pub throughput: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Purpose {
    /// Route a mix's verified output batch to the next layer.
    Forward,
    /// Redistribute the inputs of a failed batch.
    Reassign,
}

/// Identifies one coin-tossing attempt for one batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SessionId {
    pub ctr: u32,
    pub purpose: Purpose,
    pub source: u32,
    pub batch: u32,
    pub attempt: u32,
}

/// A session without its attempt number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SessionKey {
    pub ctr: u32,
    pub purpose: Purpose,
    pub source: u32,
    pub batch: u32,
}

impl SessionId {
    pub fn key(&self) -> SessionKey {
        SessionKey {
            ctr: self.ctr,
            purpose: self.purpose,
            source: self.source,
            batch: self.batch,
        }
    }

    pub fn write(&self, w: &mut Writer) {
        w.u32(self.ctr)
            .u8(match self.purpose {
                Purpose::Forward => 0,
                Purpose::Reassign => 1,
            })
            .u32(self.source)
            .u32(self.batch)
            .u32(self.attempt);
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let ctr = r.u32("session layer")?;
        let purpose = match r.u8("session purpose")? {
            0 => Purpose::Forward,
            1 => Purpose::Reassign,
            _ => return Err(WireError::Invalid("session purpose")),
        };
        Ok(Self {
            ctr,
            purpose,
            source: r.u32("session source")?,
            batch: r.u32("session batch")?,
            attempt: r.u32("session attempt")?,
        })
    }
}

impl SessionKey {
    pub fn attempt(&self, attempt: u32) -> SessionId {
        SessionId {
            ctr: self.ctr,
            purpose: self.purpose,
            source: self.source,
            batch: self.batch,
            attempt,
        }
    }
}

impl std::fmt::Display for Purpose {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Purpose::Forward => "forward",
            Purpose::Reassign => "reassign",
        })
    }
}

impl std::fmt::Display for SessionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}(ctr={}, mix-{}, batch={})",
            self.purpose, self.ctr, self.source, self.batch
        )
    }
}

impl std::fmt::Display for SessionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}(ctr={}, mix-{}, batch={}, attempt={})",
            self.purpose, self.ctr, self.source, self.batch, self.attempt
        )
    }
}

/// `SUM` over opened strings: bitwise XOR.
pub fn combine_randomness(openings: &[Rand]) -> Rand {
    openings.iter().fold([0u8; 32], |mut acc, r| {
        for (a, b) in acc.iter_mut().zip(r) {
            *a ^= b;
        }
        acc
    })
}

/// `H`: a permutation `z` of `1..=w` derived from `rand`.
///
/// `z_i = (h(0x52 ‖ rand ‖ i ‖ j) mod w) + 1` for the smallest `j` giving an
/// unused value, with `i` and `j` as 8-byte big-endian integers.
pub fn permute_indices(rand: &Rand, w: usize) -> Vec<usize> {
    let mut used = vec![false; w + 1];
    let mut z = Vec::with_capacity(w);
    for i in 1..=w as u64 {
        let mut j = 0u64;
        loop {
            let d = hash_tagged(Domain::Routing, &[rand, &i.to_be_bytes(), &j.to_be_bytes()]);
            let zi = crate::crypto::hash::digest_mod(&d, w as u64) as usize + 1;
            if !used[zi] {
                used[zi] = true;
                z.push(zi);
                break;
            }
            j += 1;
        }
    }
    z
}

/// Largest-remainder apportionment of `w` items over `throughputs`; ties in
/// the remainder go to the lower index.
pub fn quotas(w: usize, throughputs: &[u64]) -> Result<Vec<usize>, RoutingError> {
    if throughputs.is_empty() {
        return Err(RoutingError::NoTargets);
    }
    let total: u128 = throughputs.iter().map(|&b| u128::from(b)).sum();
    if total == 0 {
        return Err(RoutingError::ZeroThroughput);
    }
    let w128 = w as u128;
    let mut quota: Vec<usize> = throughputs
        .iter()
        .map(|&b| (w128 * u128::from(b) / total) as usize)
        .collect();
    let leftover = w - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..throughputs.len()).collect();
    order.sort_by_key(|&j| std::cmp::Reverse(w128 * u128::from(throughputs[j]) % total));
    for &j in order.iter().take(leftover) {
        quota[j] += 1;
    }
    Ok(quota)
}

/// Positions (1-based, into the source's output list) fetched by one mix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FetchSlice {
    pub mix: u32,
    pub positions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FetchPlan {
    pub slices: Vec<FetchSlice>,
}

/// `Map`: mix `j` (ascending mix index) takes the next `quota_j` entries of
/// `z`, i.e. ciphertexts `c_{z_s}, ..., c_{z_{s+quota_j-1}}`.
pub fn map_ciphertexts(z: &[usize], capacities: &[Capacity]) -> Result<FetchPlan, RoutingError> {
    let mut caps = capacities.to_vec();
    caps.sort();
    let q = quotas(z.len(), &caps.iter().map(|c| c.throughput).collect::<Vec<_>>())?;
    let mut start = 0;
    let slices = caps
        .iter()
        .zip(q)
        .map(|(cap, n)| {
            let positions = z[start..start + n].to_vec();
            start += n;
            FetchSlice {
                mix: cap.mix,
                positions,
            }
        })
        .collect();
    Ok(FetchPlan { slices })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssignmentList {
    pub z: Vec<usize>,
    pub plan: FetchPlan,
}

impl AssignmentList {
    /// Mix fetching each output position, indexed from 0.
    pub fn owners(&self) -> Vec<u32> {
        let mut owner = vec![0; self.z.len()];
        for slice in &self.plan.slices {
            for &p in &slice.positions {
                owner[p - 1] = slice.mix;
            }
        }
        owner
    }

    pub fn positions_for(&self, mix: u32) -> &[usize] {
        self.plan
            .slices
            .iter()
            .find(|s| s.mix == mix)
            .map(|s| s.positions.as_slice())
            .unwrap_or(&[])
    }
}

/// `Assign = Map ∘ H` over a batch of `w` outputs.
pub fn assign(rand: &Rand, w: usize, capacities: &[Capacity]) -> Result<AssignmentList, RoutingError> {
    let z = permute_indices(rand, w);
    let plan = map_ciphertexts(&z, capacities)?;
    Ok(AssignmentList { z, plan })
}

/// Targets for redistributing a failed batch across its layer's survivors.
pub fn reassign_targets(layer: u32, survivors: &[Capacity]) -> Result<Vec<Capacity>, RoutingError> {
    let mut targets: Vec<Capacity> = survivors.iter().copied().filter(|c| c.throughput > 0).collect();
    if targets.is_empty() {
        return Err(RoutingError::NoSurvivors(layer));
    }
    targets.sort();
    Ok(targets)
}

/// Commitments and openings of one session, keyed by routing entity.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct JointRandomness {
    pub commitments: BTreeMap<u32, Digest>,
    pub openings: BTreeMap<u32, (Rand, [u8; 32])>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RandCheck {
    Valid(Rand),
    /// Some committed entity has not opened.
    Missing(u32),
    /// An opening does not match its commitment.
    Mismatch(u32),
}

impl JointRandomness {
    /// `VerifyRand`: every commitment opened correctly; returns the XOR.
    pub fn verify(&self) -> RandCheck {
        if self.commitments.is_empty() {
            return RandCheck::Missing(0);
        }
        let mut rands = Vec::with_capacity(self.commitments.len());
        for (&re, value) in &self.commitments {
            let Some((rand, nonce)) = self.openings.get(&re) else {
                return RandCheck::Missing(re);
            };
            let opening = Opening {
                payload: rand.to_vec(),
                nonce: *nonce,
            };
            if !verify_open(value, &opening) {
                return RandCheck::Mismatch(re);
            }
            rands.push(*rand);
        }
        if let Some(&re) = self.openings.keys().find(|re| !self.commitments.contains_key(re)) {
            return RandCheck::Mismatch(re);
        }
        RandCheck::Valid(combine_randomness(&rands))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RoutingVerdict {
    Accept,
    CommitmentError,
    RoutingError(u32),
    Incomplete,
}

/// Routing verification for one source batch: check the randomness, then
/// that every output was signed as input by the mix it was assigned to.
pub fn verify_routing<T>(
    joint: &JointRandomness,
    outputs: &[T],
    targets: &[Capacity],
    signed_by: impl Fn(u32, &T) -> bool,
) -> Result<RoutingVerdict, RoutingError> {
    let rand = match joint.verify() {
        RandCheck::Valid(r) => r,
        RandCheck::Missing(_) => return Ok(RoutingVerdict::Incomplete),
        RandCheck::Mismatch(_) => return Ok(RoutingVerdict::CommitmentError),
    };
    let owners = assign(&rand, outputs.len(), targets)?.owners();
    for (c, mix) in outputs.iter().zip(owners) {
        if !signed_by(mix, c) {
            return Ok(RoutingVerdict::RoutingError(mix));
        }
    }
    Ok(RoutingVerdict::Accept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::commit;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn caps(bs: &[u64]) -> Vec<Capacity> {
        bs.iter()
            .enumerate()
            .map(|(i, &b)| Capacity {
                mix: i as u32 + 1,
                throughput: b,
            })
            .collect()
    }

    #[test]
    fn frozen_permutations() {
        // Values from an independent straight-line transcription of H.
        assert_eq!(permute_indices(&[0; 32], 3), vec![3, 1, 2]);
        assert_eq!(permute_indices(&[0; 32], 8), vec![5, 6, 3, 4, 8, 2, 7, 1]);
        assert_eq!(permute_indices(&[0xff; 32], 5), vec![4, 3, 2, 1, 5]);
        let ramp: Rand = std::array::from_fn(|i| i as u8);
        assert_eq!(permute_indices(&ramp, 10), vec![2, 3, 4, 10, 7, 8, 5, 1, 9, 6]);
    }

    #[test]
    fn single_position() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..10 {
            let mut r = [0u8; 32];
            rng.fill_bytes(&mut r);
            assert_eq!(permute_indices(&r, 1), vec![1]);
        }
    }

    #[test]
    fn xor_laws() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut a = [0u8; 32];
        let mut b = [0u8; 32];
        rng.fill_bytes(&mut a);
        rng.fill_bytes(&mut b);
        assert_eq!(combine_randomness(&[a, a]), [0; 32]);
        assert_eq!(combine_randomness(&[a, [0; 32]]), a);
        assert_eq!(combine_randomness(&[a, b]), combine_randomness(&[b, a]));
        assert_eq!(combine_randomness(&[a]), a);
    }

    #[test]
    fn quota_examples() {
        assert_eq!(quotas(10, &[1, 1, 2]).unwrap(), vec![3, 2, 5]);
        assert_eq!(quotas(999, &[1, 2]).unwrap(), vec![333, 666]);
        assert_eq!(quotas(1000, &[1, 2]).unwrap(), vec![333, 667]);
        assert_eq!(quotas(900, &[1, 1, 1]).unwrap(), vec![300, 300, 300]);
        assert_eq!(quotas(7, &[5]).unwrap(), vec![7]);
        assert!(matches!(quotas(3, &[]), Err(RoutingError::NoTargets)));
        assert!(matches!(quotas(3, &[0, 0]), Err(RoutingError::ZeroThroughput)));
    }

    #[test]
    fn figure_two_example() {
        // z = (2, 1, 3) with capacities (1, 2).
        let plan = map_ciphertexts(&[2, 1, 3], &caps(&[1, 2])).unwrap();
        assert_eq!(
            plan.slices[0],
            FetchSlice {
                mix: 1,
                positions: vec![2]
            }
        );
        assert_eq!(
            plan.slices[1],
            FetchSlice {
                mix: 2,
                positions: vec![1, 3]
            }
        );
    }

    #[test]
    fn single_target_fetches_everything() {
        let a = assign(&[3; 32], 6, &caps(&[4])).unwrap();
        assert_eq!(a.owners(), vec![1; 6]);
        let mut p = a.positions_for(1).to_vec();
        p.sort();
        assert_eq!(p, (1..=6).collect::<Vec<_>>());
    }

    #[test]
    fn uniform_capacities_split_exactly() {
        let a = assign(&[9; 32], 12, &caps(&[1, 1, 1, 1])).unwrap();
        for m in 1..=4 {
            assert_eq!(a.positions_for(m).len(), 3);
        }
    }

    #[test]
    fn plan_ignores_capacity_order() {
        let mut reversed = caps(&[1, 2, 3]);
        reversed.reverse();
        assert_eq!(
            assign(&[5; 32], 9, &reversed).unwrap(),
            assign(&[5; 32], 9, &caps(&[1, 2, 3])).unwrap()
        );
    }

    #[test]
    fn reassignment_needs_survivors() {
        assert!(matches!(reassign_targets(2, &[]), Err(RoutingError::NoSurvivors(2))));
        let t = reassign_targets(2, &caps(&[1, 1])).unwrap();
        let q = quotas(7, &t.iter().map(|c| c.throughput).collect::<Vec<_>>()).unwrap();
        assert_eq!(q, vec![4, 3]);
    }

    fn session(rng: &mut ChaCha20Rng, v: usize) -> JointRandomness {
        let mut j = JointRandomness::default();
        for re in 1..=v as u32 {
            let mut r = [0u8; 32];
            rng.fill_bytes(&mut r);
            let (c, o) = commit(&r, rng);
            j.commitments.insert(re, c.value);
            j.openings.insert(re, (r, o.nonce));
        }
        j
    }

    #[test]
    fn verify_routing_verdicts() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let joint = session(&mut rng, 3);
        let RandCheck::Valid(rand) = joint.verify() else {
            panic!()
        };
        let outputs: Vec<u32> = (100..110).collect();
        let targets = caps(&[1, 2]);
        let owners = assign(&rand, outputs.len(), &targets).unwrap().owners();
        let honest = |mix: u32, c: &u32| owners[(*c - 100) as usize] == mix;
        assert_eq!(
            verify_routing(&joint, &outputs, &targets, honest).unwrap(),
            RoutingVerdict::Accept
        );

        // Mix 2 drops one of its ciphertexts.
        let dropped = outputs.iter().position(|c| owners[(*c - 100) as usize] == 2).unwrap() as u32 + 100;
        let lossy = |mix: u32, c: &u32| owners[(*c - 100) as usize] == mix && !(mix == 2 && *c == dropped);
        assert_eq!(
            verify_routing(&joint, &outputs, &targets, lossy).unwrap(),
            RoutingVerdict::RoutingError(2)
        );

        let mut tampered = joint.clone();
        tampered.openings.get_mut(&2).unwrap().0[0] ^= 1;
        assert_eq!(
            verify_routing(&tampered, &outputs, &targets, honest).unwrap(),
            RoutingVerdict::CommitmentError
        );

        let mut partial = joint.clone();
        partial.openings.remove(&3);
        assert_eq!(
            verify_routing(&partial, &outputs, &targets, honest).unwrap(),
            RoutingVerdict::Incomplete
        );
    }

    #[test]
    fn session_id_round_trip() {
        let id = SessionId {
            ctr: 3,
            purpose: Purpose::Reassign,
            source: 7,
            batch: 2,
            attempt: 1,
        };
        let mut w = Writer::new();
        id.write(&mut w);
        let bytes = w.finish();
        assert_eq!(SessionId::read(&mut Reader::new(&bytes)).unwrap(), id);
        assert_eq!(id.key().attempt(1), id);
    }
}
