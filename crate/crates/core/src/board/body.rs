//! Typed entry bodies and their versioned binary encoding.

use crate::crypto::elgamal::{read_ciphertexts, write_ciphertexts};
use crate::crypto::{Ciphertext, Digest, Group, GroupId, PublicKey};
use crate::routing::{Capacity, SessionId};
use crate::shuffle::ShuffleProof;
use crate::wire::{Reader, WireError, Writer};

use super::ids::{EntryKind, Role, ServerId};
use super::BoardError;

pub const BODY_VERSION: u8 = 1;

/// A server's self-signed announcement of its verification key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Registration {
    pub group: GroupId,
    pub role: Role,
    pub pkv: Vec<u8>,
    /// Layer for mixes, 1-based.
    pub layer: Option<u32>,
    pub throughput: u64,
    pub org: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InputSource {
    Users,
    Routed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FailureReason {
    Routing,
    Mixing,
    Timeout,
    Commitment,
    Abort,
    VotedOut,
}

impl FailureReason {
    fn to_byte(self) -> u8 {
        match self {
            FailureReason::Routing => 1,
            FailureReason::Mixing => 2,
            FailureReason::Timeout => 3,
            FailureReason::Commitment => 4,
            FailureReason::Abort => 5,
            FailureReason::VotedOut => 6,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => FailureReason::Routing,
            2 => FailureReason::Mixing,
            3 => FailureReason::Timeout,
            4 => FailureReason::Commitment,
            5 => FailureReason::Abort,
            6 => FailureReason::VotedOut,
            _ => return None,
        })
    }
}

/// Where a coin-tossing session sends its items.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionPlan {
    pub target_ctr: u32,
    pub target_batch: u32,
    pub targets: Vec<Capacity>,
}

/// Time-frame parameters published by the key dealer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Setup<G: Group> {
    pub pke: PublicKey<G>,
    pub auditors: u32,
    pub threshold: u32,
    pub layers: u32,
    pub blocks: u32,
    pub soundness: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Body<G: Group> {
    Registration(Registration),
    Setup(Setup<G>),
    Inputs {
        batch: u32,
        source: InputSource,
        ciphertexts: Vec<Ciphertext<G>>,
    },
    Outputs {
        batch: u32,
        ciphertexts: Vec<Ciphertext<G>>,
    },
    Proof {
        batch: u32,
        proof: ShuffleProof<G>,
    },
    Commit {
        session: SessionId,
        plan: SessionPlan,
        value: Digest,
    },
    Open {
        session: SessionId,
        rand: [u8; 32],
        nonce: [u8; 32],
    },
    Failure {
        subject: ServerId,
        batch: u32,
        reason: FailureReason,
    },
    /// Items of a failed batch handed to a new session. A `target_ctr`
    /// past the last layer sends them straight to decryption.
    Reassign {
        session: SessionId,
        target_ctr: u32,
        items: Vec<Ciphertext<G>>,
    },
    EntryPoints {
        layer: u32,
        mixes: Vec<u32>,
    },
}

fn tag<G: Group>(body: &Body<G>) -> u8 {
    match body {
        Body::Registration(_) => 1,
        Body::Setup(_) => 2,
        Body::Inputs { .. } => 3,
        Body::Outputs { .. } => 4,
        Body::Proof { .. } => 5,
        Body::Commit { .. } => 6,
        Body::Open { .. } => 7,
        Body::Failure { .. } => 8,
        Body::Reassign { .. } => 9,
        Body::EntryPoints { .. } => 10,
    }
}

/// Group id from a registration body, read without knowing the group.
pub fn registration_group(bytes: &[u8]) -> Option<GroupId> {
    match bytes {
        [BODY_VERSION, 1, id, ..] => GroupId::from_byte(*id),
        _ => None,
    }
}

impl<G: Group> Body<G> {
    pub fn kind(&self) -> EntryKind {
        match self {
            Body::Registration(_) | Body::Setup(_) => EntryKind::PublicKey,
            Body::Inputs { .. } => EntryKind::InputCiphertexts,
            Body::Outputs { .. } => EntryKind::OutputCiphertexts,
            Body::Proof { .. } => EntryKind::ShuffleProof,
            Body::Commit { .. } => EntryKind::RandCommitment,
            Body::Open { .. } => EntryKind::RandOpening,
            Body::Failure { .. } => EntryKind::VerificationFailure,
            Body::Reassign { .. } | Body::EntryPoints { .. } => EntryKind::Reassignment,
        }
    }

    pub fn encode(&self, group: &G) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(BODY_VERSION).u8(tag(self));
        match self {
            Body::Registration(reg) => {
                w.u8(reg.group.to_byte())
                    .u8(reg.role.to_byte())
                    .bytes(&reg.pkv)
                    .u32(reg.layer.unwrap_or(0))
                    .u64(reg.throughput)
                    .str(&reg.org);
            }
            Body::Setup(s) => {
                w.bytes(&s.pke.to_bytes())
                    .u32(s.auditors)
                    .u32(s.threshold)
                    .u32(s.layers)
                    .u32(s.blocks)
                    .u32(s.soundness);
            }
            Body::Inputs {
                batch,
                source,
                ciphertexts,
            } => {
                w.u32(*batch).u8(match source {
                    InputSource::Users => 0,
                    InputSource::Routed => 1,
                });
                write_ciphertexts(group, ciphertexts, &mut w);
            }
            Body::Outputs { batch, ciphertexts } => {
                w.u32(*batch);
                write_ciphertexts(group, ciphertexts, &mut w);
            }
            Body::Proof { batch, proof } => {
                w.u32(*batch);
                proof.write(group, &mut w);
            }
            Body::Commit { session, plan, value } => {
                session.write(&mut w);
                w.u32(plan.target_ctr).u32(plan.target_batch);
                w.len_prefix(plan.targets.len());
                for t in &plan.targets {
                    w.u32(t.mix).u64(t.throughput);
                }
                w.fixed(value);
            }
            Body::Open { session, rand, nonce } => {
                session.write(&mut w);
                w.fixed(rand).fixed(nonce);
            }
            Body::Failure { subject, batch, reason } => {
                subject.write(&mut w);
                w.u32(*batch).u8(reason.to_byte());
            }
            Body::Reassign {
                session,
                target_ctr,
                items,
            } => {
                session.write(&mut w);
                w.u32(*target_ctr);
                write_ciphertexts(group, items, &mut w);
            }
            Body::EntryPoints { layer, mixes } => {
                w.u32(*layer).len_prefix(mixes.len());
                for m in mixes {
                    w.u32(*m);
                }
            }
        }
        w.finish()
    }

    /// Decode a body and check it matches the entry kind it was posted under.
    pub fn decode(group: &G, kind: EntryKind, bytes: &[u8]) -> Result<Self, BoardError> {
        let mut r = Reader::new(bytes);
        let version = r.u8("body version")?;
        if version != BODY_VERSION {
            return Err(WireError::Version(version).into());
        }
        let body = match r.u8("body tag")? {
            1 => {
                let gid = GroupId::from_byte(r.u8("group")?).ok_or(WireError::Invalid("group"))?;
                let role = Role::from_byte(r.u8("role")?).ok_or(WireError::Invalid("role"))?;
                let pkv = r.bytes("pkv")?.to_vec();
                let layer = match r.u32("layer")? {
                    0 => None,
                    l => Some(l),
                };
                Body::Registration(Registration {
                    group: gid,
                    role,
                    pkv,
                    layer,
                    throughput: r.u64("throughput")?,
                    org: r.str("organization")?,
                })
            }
            2 => {
                let pke = PublicKey::from_bytes(group.clone(), r.bytes("pke")?)?;
                Body::Setup(Setup {
                    pke,
                    auditors: r.u32("auditors")?,
                    threshold: r.u32("threshold")?,
                    layers: r.u32("layers")?,
                    blocks: r.u32("blocks")?,
                    soundness: r.u32("soundness")?,
                })
            }
            3 => {
                let batch = r.u32("batch")?;
                let source = match r.u8("input source")? {
                    0 => InputSource::Users,
                    1 => InputSource::Routed,
                    _ => return Err(WireError::Invalid("input source").into()),
                };
                Body::Inputs {
                    batch,
                    source,
                    ciphertexts: read_ciphertexts(group, &mut r)?,
                }
            }
            4 => Body::Outputs {
                batch: r.u32("batch")?,
                ciphertexts: read_ciphertexts(group, &mut r)?,
            },
            5 => {
                let batch = r.u32("batch")?;
                let proof = ShuffleProof::read(group, &mut r).map_err(|e| BoardError::Body(e.to_string()))?;
                Body::Proof { batch, proof }
            }
            6 => {
                let session = SessionId::read(&mut r)?;
                let target_ctr = r.u32("target layer")?;
                let target_batch = r.u32("target batch")?;
                let n = r.len_prefix("targets")?;
                let targets = (0..n)
                    .map(|_| {
                        Ok(Capacity {
                            mix: r.u32("target mix")?,
                            throughput: r.u64("target throughput")?,
                        })
                    })
                    .collect::<Result<Vec<_>, WireError>>()?;
                Body::Commit {
                    session,
                    plan: SessionPlan {
                        target_ctr,
                        target_batch,
                        targets,
                    },
                    value: r.array32("commitment")?,
                }
            }
            7 => Body::Open {
                session: SessionId::read(&mut r)?,
                rand: r.array32("rand")?,
                nonce: r.array32("nonce")?,
            },
            8 => Body::Failure {
                subject: ServerId::read(&mut r)?,
                batch: r.u32("batch")?,
                reason: FailureReason::from_byte(r.u8("reason")?).ok_or(WireError::Invalid("reason"))?,
            },
            9 => Body::Reassign {
                session: SessionId::read(&mut r)?,
                target_ctr: r.u32("target layer")?,
                items: read_ciphertexts(group, &mut r)?,
            },
            10 => {
                let layer = r.u32("layer")?;
                let n = r.len_prefix("entry points")?;
                let mixes = (0..n).map(|_| r.u32("mix")).collect::<Result<Vec<_>, _>>()?;
                Body::EntryPoints { layer, mixes }
            }
            _ => return Err(WireError::Invalid("body tag").into()),
        };
        r.finish()?;
        if body.kind() != kind {
            return Err(BoardError::KindMismatch {
                declared: kind,
                actual: body.kind(),
            });
        }
        Ok(body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{encrypt, keygen_threshold, Ristretto};
    use crate::routing::Purpose;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn round_trip(body: Body<Ristretto>) {
        let bytes = body.encode(&Ristretto);
        assert_eq!(Body::decode(&Ristretto, body.kind(), &bytes).unwrap(), body);
    }

    #[test]
    fn every_variant_round_trips() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let kp = keygen_threshold(&Ristretto, 3, 2, &mut rng).unwrap();
        let cts: Vec<_> = (0..3)
            .map(|i| encrypt(&kp.public, &[i as u8; 5], 1, &mut rng).unwrap())
            .collect();
        let session = SessionId {
            ctr: 2,
            purpose: Purpose::Forward,
            source: 4,
            batch: 0,
            attempt: 1,
        };
        round_trip(Body::Registration(Registration {
            group: GroupId::Ristretto255,
            role: Role::Mix,
            pkv: vec![9; 32],
            layer: Some(2),
            throughput: 3,
            org: "acme".into(),
        }));
        round_trip(Body::Setup(Setup {
            pke: kp.public.clone(),
            auditors: 3,
            threshold: 2,
            layers: 4,
            blocks: 1,
            soundness: 16,
        }));
        round_trip(Body::Inputs {
            batch: 0,
            source: InputSource::Users,
            ciphertexts: cts.clone(),
        });
        round_trip(Body::Outputs {
            batch: 2,
            ciphertexts: cts.clone(),
        });
        round_trip(Body::Commit {
            session,
            plan: SessionPlan {
                target_ctr: 3,
                target_batch: 0,
                targets: vec![Capacity { mix: 5, throughput: 1 }, Capacity { mix: 6, throughput: 2 }],
            },
            value: [7; 32],
        });
        round_trip(Body::Open {
            session,
            rand: [1; 32],
            nonce: [2; 32],
        });
        round_trip(Body::Failure {
            subject: ServerId::mix(4),
            batch: 1,
            reason: FailureReason::Timeout,
        });
        round_trip(Body::Reassign {
            session,
            target_ctr: 3,
            items: cts,
        });
        round_trip(Body::EntryPoints {
            layer: 2,
            mixes: vec![3, 4],
        });
    }

    #[test]
    fn wrong_kind_or_version_is_rejected() {
        let body: Body<Ristretto> = Body::EntryPoints {
            layer: 2,
            mixes: vec![],
        };
        let mut bytes = body.encode(&Ristretto);
        assert!(matches!(
            Body::decode(&Ristretto, EntryKind::PublicKey, &bytes),
            Err(BoardError::KindMismatch { .. })
        ));
        bytes[0] = 2;
        assert!(Body::<Ristretto>::decode(&Ristretto, EntryKind::Reassignment, &bytes).is_err());
    }
}
