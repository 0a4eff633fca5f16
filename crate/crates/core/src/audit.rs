//! Verification from board contents alone.
//!
//! [`BoardView`] indexes decoded entries and recomputes everything an
//! auditor needs: session randomness, assignments, the inputs each mix was
//! supposed to fetch, and shuffle-proof checks. The engine's auditors and
//! the standalone transcript verifier share this code.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::board::{Body, BulletinBoard, FailureReason, InputSource, Role, ServerId, SessionPlan, Setup};
use crate::crypto::{Ciphertext, Digest, Group};
use crate::routing::{
    assign, verify_routing, AssignmentList, Capacity, JointRandomness, Purpose, Rand, RandCheck, RoutingVerdict,
    SessionKey,
};
use crate::shuffle::{verify_shuffle, ShuffleProof, ShuffleStatement};
use crate::wire::Writer;

/// One mix's batch within a layer. Batch 0 is the regular pass; later
/// batches carry resubmitted or reassigned ciphertexts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BatchKey {
    pub ctr: u32,
    pub mix: u32,
    pub batch: u32,
}

impl fmt::Display for BatchKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ctr={} mix-{} batch={}", self.ctr, self.mix, self.batch)
    }
}

/// Bytes binding a shuffle proof to its layer, mix and batch.
pub fn proof_context(key: BatchKey) -> Vec<u8> {
    let mut w = Writer::new();
    w.fixed(b"mpr-shuffle").u32(key.ctr).u32(key.mix).u32(key.batch);
    w.finish()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    RoutingError(u32),
    MixingError(u32),
    CommitmentError,
    /// The mix went silent; recorded by an auditor and recovered from.
    Unavailable,
    Incomplete(String),
}

impl Verdict {
    pub fn is_integrity_failure(&self) -> bool {
        matches!(
            self,
            Verdict::RoutingError(_) | Verdict::MixingError(_) | Verdict::CommitmentError
        )
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Accept => f.write_str("accept"),
            Verdict::RoutingError(m) => write!(f, "Routing error (mix-{m})"),
            Verdict::MixingError(m) => write!(f, "Mixing error (mix-{m})"),
            Verdict::CommitmentError => f.write_str("Commitment error"),
            Verdict::Unavailable => f.write_str("unavailable"),
            Verdict::Incomplete(why) => write!(f, "incomplete: {why}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct InputsRecord<G: Group> {
    pub seq: u64,
    pub source: InputSource,
    pub ciphertexts: Vec<Ciphertext<G>>,
}

#[derive(Clone, Debug, Default)]
pub struct Attempt {
    pub commits: BTreeMap<u32, (u64, SessionPlan, Digest)>,
    pub opens: BTreeMap<u32, (u64, Rand, [u8; 32])>,
}

#[derive(Clone, Debug)]
pub struct ReassignRecord<G: Group> {
    pub seq: u64,
    pub target_ctr: u32,
    pub items: Vec<Ciphertext<G>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FailureRecord {
    pub seq: u64,
    pub ctr: u32,
    pub subject: ServerId,
    pub batch: u32,
    pub reason: FailureReason,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolvedSession {
    pub attempt: u32,
    pub plan: SessionPlan,
    pub rand: Rand,
    pub assignment: AssignmentList,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SessionState {
    Valid(ResolvedSession),
    CommitmentError(u32),
    Incomplete(String),
}

type AssignKey = (Rand, usize, Vec<Capacity>);

/// Decoded, indexed board contents.
pub struct BoardView<G: Group> {
    synced: usize,
    pub setup: Option<Setup<G>>,
    pub inputs: BTreeMap<BatchKey, InputsRecord<G>>,
    pub outputs: BTreeMap<BatchKey, (u64, Vec<Ciphertext<G>>)>,
    pub proofs: BTreeMap<BatchKey, (u64, ShuffleProof<G>)>,
    pub sessions: BTreeMap<SessionKey, BTreeMap<u32, Attempt>>,
    pub reassigns: BTreeMap<SessionKey, ReassignRecord<G>>,
    pub failures: Vec<FailureRecord>,
    pub entry_points: Vec<(u64, u32, Vec<u32>)>,
    /// Mix index to (layer, throughput).
    pub mixes: BTreeMap<u32, (u32, u64)>,
    /// Entries that could not be placed, by sequence number.
    pub problems: Vec<(u64, String)>,
    assign_cache: Mutex<HashMap<AssignKey, AssignmentList>>,
}

impl<G: Group> Default for BoardView<G> {
    fn default() -> Self {
        Self {
            synced: 0,
            setup: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            proofs: BTreeMap::new(),
            sessions: BTreeMap::new(),
            reassigns: BTreeMap::new(),
            failures: Vec::new(),
            entry_points: Vec::new(),
            mixes: BTreeMap::new(),
            problems: Vec::new(),
            assign_cache: Mutex::new(HashMap::new()),
        }
    }
}

impl<G: Group> BoardView<G> {
    pub fn new(board: &BulletinBoard<G>) -> Self {
        let mut view = Self::default();
        view.sync(board);
        view
    }

    /// Index entries appended since the last sync.
    pub fn sync(&mut self, board: &BulletinBoard<G>) {
        let group = board.group();
        for entry in &board.entries()[self.synced..] {
            let seq = entry.seq;
            let body = match Body::<G>::decode(group, entry.kind, &entry.body) {
                Ok(b) => b,
                Err(e) => {
                    self.problems.push((seq, e.to_string()));
                    continue;
                }
            };
            let author = entry.author;
            let expected_role = match &body {
                Body::Registration(_) => author.role,
                Body::Inputs { .. } | Body::Outputs { .. } | Body::Proof { .. } => Role::Mix,
                Body::Commit { .. } | Body::Open { .. } => Role::RoutingEntity,
                Body::Setup(_) | Body::Failure { .. } | Body::Reassign { .. } | Body::EntryPoints { .. } => {
                    Role::Auditor
                }
            };
            if author.role != expected_role {
                self.problems
                    .push((seq, format!("{} cannot post {}", author, entry.kind)));
                continue;
            }
            let key = BatchKey {
                ctr: entry.ctr,
                mix: author.index,
                batch: 0,
            };
            match body {
                Body::Registration(reg) => {
                    if let (Role::Mix, Some(layer)) = (reg.role, reg.layer) {
                        self.mixes.insert(author.index, (layer, reg.throughput));
                    }
                }
                Body::Setup(s) => {
                    if self.setup.is_some() {
                        self.problems.push((seq, "second setup entry".into()));
                    } else {
                        self.setup = Some(s);
                    }
                }
                Body::Inputs {
                    batch,
                    source,
                    ciphertexts,
                } => {
                    let key = BatchKey { batch, ..key };
                    if self.mixes.get(&key.mix).map(|m| m.0) != Some(key.ctr) {
                        self.problems
                            .push((seq, format!("{author} posted inputs outside its layer")));
                    } else {
                        match self.inputs.entry(key) {
                            Entry::Occupied(_) => self.problems.push((seq, format!("duplicate inputs for {key}"))),
                            Entry::Vacant(slot) => {
                                slot.insert(InputsRecord {
                                    seq,
                                    source,
                                    ciphertexts,
                                });
                            }
                        }
                    }
                }
                Body::Outputs { batch, ciphertexts } => {
                    let key = BatchKey { batch, ..key };
                    match self.outputs.entry(key) {
                        Entry::Occupied(_) => self.problems.push((seq, format!("duplicate outputs for {key}"))),
                        Entry::Vacant(slot) => {
                            slot.insert((seq, ciphertexts));
                        }
                    }
                }
                Body::Proof { batch, proof } => {
                    let key = BatchKey { batch, ..key };
                    if self.proofs.insert(key, (seq, proof)).is_some() {
                        self.problems.push((seq, format!("duplicate proof for {key}")));
                    }
                }
                Body::Commit { session, plan, value } => {
                    let attempt = self
                        .sessions
                        .entry(session.key())
                        .or_default()
                        .entry(session.attempt)
                        .or_default();
                    if session.ctr != entry.ctr || attempt.commits.contains_key(&author.index) {
                        self.problems.push((seq, format!("misplaced commitment for {session}")));
                    } else {
                        attempt.commits.insert(author.index, (seq, plan, value));
                    }
                }
                Body::Open { session, rand, nonce } => {
                    let attempt = self
                        .sessions
                        .entry(session.key())
                        .or_default()
                        .entry(session.attempt)
                        .or_default();
                    if session.ctr != entry.ctr || attempt.opens.contains_key(&author.index) {
                        self.problems.push((seq, format!("misplaced opening for {session}")));
                    } else {
                        attempt.opens.insert(author.index, (seq, rand, nonce));
                    }
                }
                Body::Failure { subject, batch, reason } => self.failures.push(FailureRecord {
                    seq,
                    ctr: entry.ctr,
                    subject,
                    batch,
                    reason,
                }),
                Body::Reassign {
                    session,
                    target_ctr,
                    items,
                } => {
                    if session.purpose != Purpose::Reassign || self.reassigns.contains_key(&session.key()) {
                        self.problems.push((seq, format!("invalid reassignment for {session}")));
                    } else {
                        self.reassigns
                            .insert(session.key(), ReassignRecord { seq, target_ctr, items });
                    }
                }
                Body::EntryPoints { layer, mixes } => self.entry_points.push((seq, layer, mixes)),
            }
        }
        self.synced = board.len();
    }

    pub fn layers(&self) -> u32 {
        self.setup.as_ref().map_or(0, |s| s.layers)
    }

    /// Registered mixes of a layer as capacities, ascending by index.
    pub fn layer_capacities(&self, layer: u32) -> Vec<Capacity> {
        self.mixes
            .iter()
            .filter(|(_, (l, _))| *l == layer)
            .map(|(&mix, &(_, throughput))| Capacity { mix, throughput })
            .collect()
    }

    pub fn failure_for(&self, key: BatchKey) -> Option<&FailureRecord> {
        self.failures
            .iter()
            .find(|f| f.subject == ServerId::mix(key.mix) && f.ctr == key.ctr && f.batch == key.batch)
    }

    /// Mixes of `layer` with a recorded failure at or before `before_seq`.
    pub fn failed_mixes(&self, layer: u32, before_seq: u64) -> BTreeSet<u32> {
        self.failures
            .iter()
            .filter(|f| f.subject.role == Role::Mix && f.ctr == layer && f.seq < before_seq)
            .map(|f| f.subject.index)
            .collect()
    }

    fn allows_user_inputs(&self, key: BatchKey) -> bool {
        key.ctr == 1
            || self
                .entry_points
                .iter()
                .any(|(_, layer, mixes)| *layer == key.ctr && mixes.contains(&key.mix))
    }

    pub fn session_items(&self, key: &SessionKey) -> Option<&[Ciphertext<G>]> {
        match key.purpose {
            Purpose::Forward => self
                .outputs
                .get(&BatchKey {
                    ctr: key.ctr,
                    mix: key.source,
                    batch: key.batch,
                })
                .map(|(_, c)| c.as_slice()),
            Purpose::Reassign => self.reassigns.get(key).map(|r| r.items.as_slice()),
        }
    }

    fn cached_assign(&self, rand: &Rand, w: usize, targets: &[Capacity]) -> Option<AssignmentList> {
        let key = (*rand, w, targets.to_vec());
        if let Some(hit) = self.assign_cache.lock().expect("cache lock").get(&key) {
            return Some(hit.clone());
        }
        let fresh = assign(rand, w, targets).ok()?;
        self.assign_cache.lock().expect("cache lock").insert(key, fresh.clone());
        Some(fresh)
    }

    fn plan_problem(&self, key: &SessionKey, plan: &SessionPlan, first_seq: u64) -> Option<String> {
        match key.purpose {
            Purpose::Forward if plan.target_ctr != key.ctr + 1 || plan.target_batch != 0 => {
                return Some("forward session must target the next layer's first batch".into());
            }
            Purpose::Reassign => {
                let Some(record) = self.reassigns.get(key) else {
                    return Some("no reassignment entry".into());
                };
                if record.target_ctr != plan.target_ctr || !(key.ctr..=key.ctr + 1).contains(&plan.target_ctr) {
                    return Some("reassignment targets the wrong layer".into());
                }
            }
            _ => {}
        }
        if plan.targets.is_empty() {
            return Some("no targets".into());
        }
        if plan.targets.windows(2).any(|w| w[0].mix >= w[1].mix) {
            return Some("targets not in canonical order".into());
        }
        let failed = self.failed_mixes(plan.target_ctr, first_seq);
        for t in &plan.targets {
            if self.mixes.get(&t.mix) != Some(&(plan.target_ctr, t.throughput)) {
                return Some(format!(
                    "mix-{} is not registered in layer {} with b={}",
                    t.mix, plan.target_ctr, t.throughput
                ));
            }
            if failed.contains(&t.mix) {
                return Some(format!("mix-{} had already failed", t.mix));
            }
        }
        None
    }

    /// Resolve the latest attempt of a session.
    pub fn session_state(&self, key: &SessionKey) -> SessionState {
        let Some((&attempt, att)) = self.sessions.get(key).and_then(|a| a.last_key_value()) else {
            return SessionState::Incomplete("no commitments".into());
        };
        let Some((_, (first_seq, plan, _))) = att.commits.first_key_value() else {
            return SessionState::Incomplete("no commitments".into());
        };
        if att.commits.values().any(|(_, p, _)| p != plan) {
            return SessionState::Incomplete("committers disagree on the plan".into());
        }
        let first_seq = att.commits.values().map(|c| c.0).min().unwrap_or(*first_seq);
        if let Some(problem) = self.plan_problem(key, plan, first_seq) {
            return SessionState::Incomplete(problem);
        }
        let joint = JointRandomness {
            commitments: att.commits.iter().map(|(&re, (_, _, v))| (re, *v)).collect(),
            openings: att.opens.iter().map(|(&re, (_, r, n))| (re, (*r, *n))).collect(),
        };
        let rand = match joint.verify() {
            RandCheck::Valid(r) => r,
            RandCheck::Missing(re) => return SessionState::Incomplete(format!("re-{re} did not open")),
            RandCheck::Mismatch(re) => return SessionState::CommitmentError(re),
        };
        let Some(items) = self.session_items(key) else {
            return SessionState::Incomplete("session items missing".into());
        };
        match self.cached_assign(&rand, items.len(), &plan.targets) {
            Some(assignment) => SessionState::Valid(ResolvedSession {
                attempt,
                plan: plan.clone(),
                rand,
                assignment,
            }),
            None => SessionState::Incomplete("assignment failed".into()),
        }
    }

    /// Sessions (latest attempts) whose plan targets `(ctr, batch)`.
    pub fn sessions_into(&self, ctr: u32, batch: u32) -> Vec<(SessionKey, SessionState)> {
        self.sessions
            .keys()
            .filter_map(|k| {
                let att = self.sessions[k].last_key_value()?.1;
                let plan = &att.commits.first_key_value()?.1 .1;
                (plan.target_ctr == ctr && plan.target_batch == batch).then(|| (*k, self.session_state(k)))
            })
            .collect()
    }

    /// Ciphertexts that `key.mix` should fetch for this batch, in fetch order.
    pub fn expected_inputs(&self, key: BatchKey) -> Result<Vec<Ciphertext<G>>, Verdict> {
        let mut out = Vec::new();
        for (skey, state) in self.sessions_into(key.ctr, key.batch) {
            match state {
                SessionState::Valid(s) => {
                    let items = self.session_items(&skey).expect("valid session has items");
                    out.extend(
                        s.assignment
                            .positions_for(key.mix)
                            .iter()
                            .map(|&p| items[p - 1].clone()),
                    );
                }
                SessionState::CommitmentError(_) => return Err(Verdict::CommitmentError),
                SessionState::Incomplete(why) => return Err(Verdict::Incomplete(why)),
            }
        }
        Ok(out)
    }

    /// Mixes given at least one ciphertext for `(ctr, batch)`.
    pub fn batch_targets(&self, ctr: u32, batch: u32) -> BTreeSet<u32> {
        self.sessions_into(ctr, batch)
            .into_iter()
            .filter_map(|(_, s)| match s {
                SessionState::Valid(s) => Some(s),
                _ => None,
            })
            .flat_map(|s| {
                s.assignment
                    .plan
                    .slices
                    .into_iter()
                    .filter(|sl| !sl.positions.is_empty())
                    .map(|sl| sl.mix)
            })
            .collect()
    }

    /// Routing check for every mix that posted inputs for `(ctr, batch)`.
    pub fn routing_check(&self, ctr: u32, batch: u32) -> BTreeMap<u32, Verdict> {
        let posted: BTreeMap<u32, &InputsRecord<G>> = self
            .inputs
            .iter()
            .filter(|(k, _)| k.ctr == ctr && k.batch == batch)
            .map(|(k, r)| (k.mix, r))
            .collect();
        let mut verdicts: BTreeMap<u32, Verdict> = BTreeMap::new();
        let mut flag = |mix: u32, v: Verdict| {
            let slot = verdicts.entry(mix).or_insert(Verdict::Accept);
            if *slot == Verdict::Accept {
                *slot = v;
            }
        };

        // Published assignments must each appear in the assigned mix's
        // signed inputs. Mixes that never posted are liveness failures.
        for (skey, state) in self.sessions_into(ctr, batch) {
            let SessionState::Valid(s) = state else {
                for &mix in posted.keys() {
                    flag(
                        mix,
                        match &state {
                            SessionState::CommitmentError(_) => Verdict::CommitmentError,
                            SessionState::Incomplete(why) => Verdict::Incomplete(why.clone()),
                            SessionState::Valid(_) => unreachable!(),
                        },
                    );
                }
                continue;
            };
            let items = self.session_items(&skey).expect("valid session has items");
            let att = &self.sessions[&skey][&s.attempt];
            let joint = JointRandomness {
                commitments: att.commits.iter().map(|(&re, (_, _, v))| (re, *v)).collect(),
                openings: att.opens.iter().map(|(&re, (_, r, n))| (re, (*r, *n))).collect(),
            };
            let signed_by = |mix: u32, c: &Ciphertext<G>| match posted.get(&mix) {
                None => true,
                Some(r) => r.ciphertexts.contains(c),
            };
            match verify_routing(&joint, items, &s.plan.targets, signed_by) {
                Ok(RoutingVerdict::Accept) => {}
                Ok(RoutingVerdict::RoutingError(mix)) => flag(mix, Verdict::RoutingError(mix)),
                Ok(RoutingVerdict::CommitmentError) => {
                    for &mix in posted.keys() {
                        flag(mix, Verdict::CommitmentError);
                    }
                }
                Ok(RoutingVerdict::Incomplete) | Err(_) => {
                    for &mix in posted.keys() {
                        flag(mix, Verdict::Incomplete("routing session unresolved".into()));
                    }
                }
            }
        }

        // Each mix's inputs must also be exactly what it was assigned.
        for (&mix, record) in &posted {
            let key = BatchKey { ctr, mix, batch };
            let verdict = match record.source {
                InputSource::Users if self.allows_user_inputs(key) => Verdict::Accept,
                InputSource::Users => Verdict::RoutingError(mix),
                InputSource::Routed => match self.expected_inputs(key) {
                    Ok(expected) if same_multiset(self.group(), &expected, &record.ciphertexts) => Verdict::Accept,
                    Ok(_) => Verdict::RoutingError(mix),
                    Err(v) => v,
                },
            };
            flag(mix, verdict);
        }
        verdicts
    }

    fn group(&self) -> Option<&G> {
        self.setup.as_ref().map(|s| s.pke.group())
    }

    /// Shuffle-proof check for a batch whose inputs passed routing.
    pub fn proof_check(&self, key: BatchKey) -> Verdict {
        let (Some(setup), Some(inputs)) = (&self.setup, self.inputs.get(&key)) else {
            return Verdict::Incomplete("no inputs".into());
        };
        let (Some((_, outputs)), Some((_, proof))) = (self.outputs.get(&key), self.proofs.get(&key)) else {
            return match self.failure_for(key) {
                Some(f) if f.reason == FailureReason::Timeout => Verdict::Unavailable,
                _ => Verdict::Incomplete("no outputs or proof".into()),
            };
        };
        if proof.soundness() != setup.soundness as usize {
            return Verdict::MixingError(key.mix);
        }
        let context = proof_context(key);
        let stmt = ShuffleStatement {
            pk: &setup.pke,
            context: &context,
            input: &inputs.ciphertexts,
            output: outputs,
        };
        if verify_shuffle(&stmt, proof) {
            Verdict::Accept
        } else {
            Verdict::MixingError(key.mix)
        }
    }

    /// Ciphertexts a failed batch leaves behind.
    pub fn stranded_items(&self, key: BatchKey) -> Vec<Ciphertext<G>> {
        match self.inputs.get(&key) {
            Some(r) if r.source == InputSource::Users => r.ciphertexts.clone(),
            _ => self.expected_inputs(key).unwrap_or_default(),
        }
    }
}

fn same_multiset<G: Group>(group: Option<&G>, a: &[Ciphertext<G>], b: &[Ciphertext<G>]) -> bool {
    let Some(group) = group else { return false };
    if a.len() != b.len() {
        return false;
    }
    let sorted = |xs: &[Ciphertext<G>]| {
        let mut v: Vec<Vec<u8>> = xs.iter().map(|c| c.to_bytes(group)).collect();
        v.sort();
        v
    };
    sorted(a) == sorted(b)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchVerdict {
    pub key: BatchKey,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditReport {
    pub layers: u32,
    pub batches: Vec<BatchVerdict>,
    pub sessions: Vec<(SessionKey, String)>,
    pub issues: Vec<String>,
    pub final_outputs: usize,
}

impl AuditReport {
    /// True iff every check accepted; silent mixes whose work was recovered
    /// do not count against the transcript.
    pub fn passed(&self) -> bool {
        self.issues.is_empty()
            && self.sessions.is_empty()
            && self
                .batches
                .iter()
                .all(|b| matches!(b.verdict, Verdict::Accept | Verdict::Unavailable))
    }

    /// Mixes named by a routing or mixing verdict.
    pub fn misbehaving(&self) -> BTreeSet<u32> {
        self.batches
            .iter()
            .filter_map(|b| match b.verdict {
                Verdict::RoutingError(m) | Verdict::MixingError(m) => Some(m),
                _ => None,
            })
            .collect()
    }
}

/// Verify a whole board: signatures are checked on append, so this covers
/// routing, shuffle proofs, commitments and recovery bookkeeping.
pub fn audit<G: Group>(board: &BulletinBoard<G>) -> AuditReport {
    let view = BoardView::new(board);
    let mut issues: Vec<String> = view
        .problems
        .iter()
        .map(|(seq, p)| format!("entry {seq}: {p}"))
        .collect();
    let layers = view.layers();
    if view.setup.is_none() {
        issues.push("no setup entry".into());
    }

    // Every batch that exists or should exist.
    let mut keys: BTreeSet<BatchKey> = view.inputs.keys().copied().collect();
    let target_batches: BTreeSet<(u32, u32)> = view
        .sessions
        .values()
        .filter_map(|a| {
            a.last_key_value()?
                .1
                .commits
                .first_key_value()
                .map(|c| (c.1 .1.target_ctr, c.1 .1.target_batch))
        })
        .collect();
    for &(ctr, batch) in &target_batches {
        for mix in view.batch_targets(ctr, batch) {
            keys.insert(BatchKey { ctr, mix, batch });
        }
    }
    for f in &view.failures {
        if f.subject.role == Role::Mix {
            keys.insert(BatchKey {
                ctr: f.ctr,
                mix: f.subject.index,
                batch: f.batch,
            });
        }
    }

    let routing: BTreeMap<(u32, u32), BTreeMap<u32, Verdict>> = keys
        .iter()
        .map(|k| (k.ctr, k.batch))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|(ctr, batch)| ((ctr, batch), view.routing_check(ctr, batch)))
        .collect();

    let to_prove: Vec<BatchKey> = keys
        .iter()
        .copied()
        .filter(|k| routing[&(k.ctr, k.batch)].get(&k.mix) == Some(&Verdict::Accept))
        .collect();
    let proofs: BTreeMap<BatchKey, Verdict> = to_prove.par_iter().map(|&k| (k, view.proof_check(k))).collect();

    let mut batches = Vec::new();
    let mut final_outputs = 0;
    for &key in &keys {
        let verdict = match routing[&(key.ctr, key.batch)].get(&key.mix) {
            None => match view.failure_for(key) {
                Some(f) if f.reason == FailureReason::Timeout => Verdict::Unavailable,
                _ => Verdict::Incomplete("no inputs posted".into()),
            },
            Some(Verdict::Accept) => proofs[&key].clone(),
            Some(v) => v.clone(),
        };

        if verdict == Verdict::Accept {
            if key.ctr >= layers {
                final_outputs += view.outputs[&key].1.len();
            } else {
                let forward = SessionKey {
                    ctr: key.ctr,
                    purpose: Purpose::Forward,
                    source: key.mix,
                    batch: key.batch,
                };
                if !matches!(view.session_state(&forward), SessionState::Valid(_)) {
                    issues.push(format!("{key}: verified outputs were never routed"));
                }
            }
        } else {
            let stranded = view.stranded_items(key);
            if !stranded.is_empty() {
                let rkey = SessionKey {
                    ctr: key.ctr,
                    purpose: Purpose::Reassign,
                    source: key.mix,
                    batch: key.batch,
                };
                match view.reassigns.get(&rkey) {
                    Some(r) if same_multiset(view.group(), &r.items, &stranded) => {
                        if r.target_ctr > layers {
                            final_outputs += r.items.len();
                        } else if !matches!(view.session_state(&rkey), SessionState::Valid(_)) {
                            issues.push(format!("{key}: reassignment session unresolved"));
                        }
                    }
                    Some(_) => issues.push(format!("{key}: reassigned items do not match the failed batch")),
                    None => issues.push(format!("{key}: inputs of failed batch were not reassigned")),
                }
            }
        }
        batches.push(BatchVerdict { key, verdict });
    }

    let mut sessions = Vec::new();
    for key in view.sessions.keys() {
        match view.session_state(key) {
            SessionState::Valid(_) => {}
            SessionState::CommitmentError(re) => sessions.push((*key, format!("Commitment error (re-{re})"))),
            SessionState::Incomplete(why) => sessions.push((*key, format!("incomplete: {why}"))),
        }
        if key.purpose == Purpose::Forward {
            let source = BatchKey {
                ctr: key.ctr,
                mix: key.source,
                batch: key.batch,
            };
            if batches.iter().any(|b| b.key == source && b.verdict != Verdict::Accept) {
                issues.push(format!("{source}: rejected outputs were routed onward"));
            }
        }
    }

    AuditReport {
        layers,
        batches,
        sessions,
        issues,
        final_outputs,
    }
}
