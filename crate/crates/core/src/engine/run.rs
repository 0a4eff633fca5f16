use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::adversary::{adversary_grind, GrindSession};
use super::config::{payload, ConfigError, FaultTarget, MixBehavior, Phase, ReBehavior, TimeFrameConfig};
use super::topology::{build_topology, LayerTopology, TopologyError};
use crate::audit::{proof_context, BatchKey, BoardView, SessionState, Verdict};
use crate::board::{BoardError, Body, BulletinBoard, FailureReason, InputSource, Role, ServerId, SessionPlan, Setup};
use crate::crypto::{
    combine_decrypt, encrypt, hash_tagged, keygen_threshold, partial_decrypt, reconstruct_secret, reencrypt,
    Ciphertext, CryptoError, Domain, Group, GroupId, KeyShare, ModP768, PublicKey, Ristretto, SecretKey, SigKeyPair,
};
use crate::routing::{quotas, Capacity, Purpose, Rand, RoutingEntity, RoutingError, SessionId};
use crate::shuffle::{forge_proof, prove_shuffle, shuffle, Permutation, ShuffleError, ShuffleStatement};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Board(#[from] BoardError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Shuffle(#[from] ShuffleError),
    #[error("internal: {0}")]
    Internal(String),
    /// The run cannot continue; the partial transcript is still reported.
    #[error("{0}")]
    Halted(String),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Delivery {
    pub receiver: String,
    pub message: String,
}

impl Delivery {
    pub fn parse(bytes: &[u8]) -> Self {
        let text = String::from_utf8_lossy(bytes);
        match text.split_once('|') {
            Some((r, m)) => Delivery {
                receiver: r.to_owned(),
                message: m.to_owned(),
            },
            None => Delivery {
                receiver: String::new(),
                message: text.into_owned(),
            },
        }
    }
}

impl fmt::Display for Delivery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.receiver, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LayerStats {
    pub layer: u32,
    pub batches: u32,
    pub steps: u64,
    pub micros: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VerdictRecord {
    pub layer: u32,
    pub mix: u32,
    pub batch: u32,
    pub verdict: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct TimeFrameResult {
    pub seed: u64,
    pub group: GroupId,
    pub layers: u32,
    pub submitted: Vec<Delivery>,
    pub delivered: Vec<Delivery>,
    pub verdicts: Vec<VerdictRecord>,
    pub log: Vec<String>,
    pub reassignments: usize,
    pub layer_stats: Vec<LayerStats>,
    #[serde(skip)]
    pub transcript: String,
    pub failure: Option<String>,
}

impl TimeFrameResult {
    /// Delivered and submitted multisets agree.
    pub fn conserved(&self) -> bool {
        let mut a = self.submitted.clone();
        let mut b = self.delivered.clone();
        a.sort();
        b.sort();
        a == b
    }

    /// Mixes named in a routing or mixing verdict.
    pub fn flagged(&self) -> BTreeSet<u32> {
        self.verdicts
            .iter()
            .filter(|v| v.verdict.starts_with("Routing error") || v.verdict.starts_with("Mixing error"))
            .map(|v| v.mix)
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("record,layer,mix,batch,value\n");
        let mut row = |rec: &str, layer: String, mix: String, batch: String, value: String| {
            out.push_str(&format!("{rec},{layer},{mix},{batch},{value}\n"));
        };
        let none = String::new;
        row("seed", none(), none(), none(), self.seed.to_string());
        row("layers", none(), none(), none(), self.layers.to_string());
        row("submitted", none(), none(), none(), self.submitted.len().to_string());
        row("delivered", none(), none(), none(), self.delivered.len().to_string());
        row("conserved", none(), none(), none(), self.conserved().to_string());
        row("reassignments", none(), none(), none(), self.reassignments.to_string());
        for v in &self.verdicts {
            row(
                "verdict",
                v.layer.to_string(),
                v.mix.to_string(),
                v.batch.to_string(),
                v.verdict.clone(),
            );
        }
        for s in &self.layer_stats {
            row("layer_steps", s.layer.to_string(), none(), none(), s.steps.to_string());
            row(
                "layer_micros",
                s.layer.to_string(),
                none(),
                none(),
                s.micros.to_string(),
            );
        }
        if let Some(f) = &self.failure {
            row(
                "failure",
                none(),
                none(),
                none(),
                format!("\"{}\"", f.replace('"', "'")),
            );
        }
        out
    }
}

/// A finished run in a concrete group, with the dealer's full secret key
/// kept as a test oracle.
pub struct Outcome<G: Group> {
    pub result: TimeFrameResult,
    pub board: BulletinBoard<G>,
    pub secret: SecretKey<G>,
}

/// Deterministic per-party generator.
pub fn party_rng(seed: u64, label: &str) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(hash_tagged(Domain::Derive, &[&seed.to_be_bytes(), label.as_bytes()]))
}

pub fn run_timeframe(cfg: &TimeFrameConfig) -> Result<TimeFrameResult, EngineError> {
    Ok(match cfg.group {
        GroupId::Ristretto255 => run_in(Ristretto, cfg)?.result,
        GroupId::Modp768 => run_in(ModP768, cfg)?.result,
    })
}

pub fn run_in<G: Group>(group: G, cfg: &TimeFrameConfig) -> Result<Outcome<G>, EngineError> {
    cfg.validate()?;
    let l = cfg.layer_count();
    let min_mixes = if cfg.availability { 2 } else { 1 };
    let topo = build_topology(&cfg.mix_specs(), l, min_mixes)?;
    let mut run = Run::new(group, cfg, topo)?;
    let failure = match run.execute() {
        Ok(()) => None,
        Err(EngineError::Halted(why)) => {
            run.log.push(format!("halted: {why}"));
            Some(why)
        }
        Err(e) => return Err(e),
    };
    Ok(run.finish(failure))
}

fn live(out_from: Option<Phase>, phase: Phase) -> bool {
    out_from.is_none_or(|p| phase < p)
}

fn take_out(slot: &mut Option<Phase>, phase: Phase) {
    *slot = Some(slot.map_or(phase, |p| p.min(phase)));
}

struct MixNode<G: Group> {
    layer: u32,
    key: SigKeyPair<G>,
    rng: ChaCha20Rng,
    behavior: MixBehavior,
    out_from: Option<Phase>,
}

struct ReNode<G: Group> {
    entity: RoutingEntity<G>,
    rng: ChaCha20Rng,
    behavior: ReBehavior,
    out_from: Option<Phase>,
    aborts: u32,
    voted_out: bool,
}

struct AuditorNode<G: Group> {
    key: SigKeyPair<G>,
    share: KeyShare<G>,
    corrupt: bool,
    out_from: Option<Phase>,
}

struct Run<'c, G: Group> {
    cfg: &'c TimeFrameConfig,
    topo: LayerTopology,
    l: u32,
    board: BulletinBoard<G>,
    view: BoardView<G>,
    pke: PublicKey<G>,
    secret: SecretKey<G>,
    mixes: BTreeMap<u32, MixNode<G>>,
    res: BTreeMap<u32, ReNode<G>>,
    auditors: BTreeMap<u32, AuditorNode<G>>,
    user_cts: Vec<Ciphertext<G>>,
    user_rng: ChaCha20Rng,
    grind_rng: ChaCha20Rng,
    inbox: BTreeMap<BatchKey, Vec<usize>>,
    queues: BTreeMap<u32, BTreeSet<u32>>,
    next_batch: BTreeMap<u32, u32>,
    entry_layer: u32,
    final_cts: Vec<Ciphertext<G>>,
    delivered: Vec<Delivery>,
    log: Vec<String>,
    verdicts: Vec<VerdictRecord>,
    reassignments: usize,
    steps: u64,
    layer_stats: Vec<LayerStats>,
}

impl<'c, G: Group> Run<'c, G> {
    fn new(group: G, cfg: &'c TimeFrameConfig, topo: LayerTopology) -> Result<Self, EngineError> {
        let seed = cfg.seed;
        let mut dealer = party_rng(seed, "dealer");
        let keys = keygen_threshold(&group, cfg.auditors as usize, cfg.threshold as usize, &mut dealer)?;
        let secret = reconstruct_secret(&group, &keys.shares[..keys.threshold])?;
        let adv = &cfg.adversary;

        let mut mixes = BTreeMap::new();
        for (i, layer) in topo.layers.iter().enumerate() {
            for m in layer {
                let mut rng = party_rng(seed, &format!("mix-{}", m.id));
                let key = SigKeyPair::generate(&group, &mut rng);
                let behavior = if adv.mixes.contains(&m.id) {
                    adv.behavior
                } else {
                    MixBehavior::Passive
                };
                mixes.insert(
                    m.id,
                    MixNode {
                        layer: i as u32 + 1,
                        key,
                        rng,
                        behavior,
                        out_from: None,
                    },
                );
            }
        }
        let mut res = BTreeMap::new();
        for i in 1..=cfg.routing_entities {
            let mut rng = party_rng(seed, &format!("re-{i}"));
            let key = SigKeyPair::generate(&group, &mut rng);
            let behavior = if adv.routing_entities.contains(&i) {
                adv.re_behavior
            } else {
                ReBehavior::Honest
            };
            res.insert(
                i,
                ReNode {
                    entity: RoutingEntity::new(i, key),
                    rng,
                    behavior,
                    out_from: None,
                    aborts: 0,
                    voted_out: false,
                },
            );
        }
        let mut auditors = BTreeMap::new();
        for (i, share) in keys.shares.into_iter().enumerate() {
            let index = i as u32 + 1;
            let mut rng = party_rng(seed, &format!("as-{index}"));
            auditors.insert(
                index,
                AuditorNode {
                    key: SigKeyPair::generate(&group, &mut rng),
                    share,
                    corrupt: adv.auditors.contains(&index),
                    out_from: None,
                },
            );
        }

        for fault in &cfg.faults {
            match fault.target {
                FaultTarget::Layer(layer) => {
                    for node in mixes.values_mut().filter(|n| n.layer == layer) {
                        take_out(&mut node.out_from, fault.phase);
                    }
                }
                FaultTarget::Server(id) => {
                    let slot = match id.role {
                        Role::Mix => mixes.get_mut(&id.index).map(|n| &mut n.out_from),
                        Role::RoutingEntity => res.get_mut(&id.index).map(|n| &mut n.out_from),
                        Role::Auditor => auditors.get_mut(&id.index).map(|n| &mut n.out_from),
                        Role::User => None,
                    };
                    match slot {
                        Some(slot) => take_out(slot, fault.phase),
                        None => {
                            return Err(ConfigError::Invalid {
                                field: "faults",
                                message: format!("no server {id}"),
                            }
                            .into())
                        }
                    }
                }
            }
        }

        let l = topo.layer_count();
        Ok(Self {
            cfg,
            topo,
            l,
            board: BulletinBoard::new(group),
            view: BoardView::default(),
            pke: keys.public,
            secret,
            mixes,
            res,
            auditors,
            user_cts: Vec::new(),
            user_rng: party_rng(seed, "users"),
            grind_rng: party_rng(seed, "grind"),
            inbox: BTreeMap::new(),
            queues: BTreeMap::new(),
            next_batch: BTreeMap::new(),
            entry_layer: 1,
            final_cts: Vec::new(),
            delivered: Vec::new(),
            log: Vec::new(),
            verdicts: Vec::new(),
            reassignments: 0,
            steps: 0,
            layer_stats: Vec::new(),
        })
    }

    fn finish(self, failure: Option<String>) -> Outcome<G> {
        let result = TimeFrameResult {
            seed: self.cfg.seed,
            group: self.board.group().id(),
            layers: self.l,
            submitted: (0..self.cfg.messages).map(|i| Delivery::parse(&payload(i))).collect(),
            delivered: self.delivered,
            verdicts: self.verdicts,
            log: self.log,
            reassignments: self.reassignments,
            layer_stats: self.layer_stats,
            transcript: self.board.to_jsonl(),
            failure,
        };
        Outcome {
            result,
            board: self.board,
            secret: self.secret,
        }
    }

    fn execute(&mut self) -> Result<(), EngineError> {
        self.setup()?;
        for ctr in 1..=self.l {
            let started = Instant::now();
            self.steps = 0;
            let mut batches = 0;
            while let Some(batch) = self.queues.get_mut(&ctr).and_then(|q| q.pop_first()) {
                self.process_batch(ctr, batch)?;
                batches += 1;
            }
            self.layer_stats.push(LayerStats {
                layer: ctr,
                batches,
                steps: self.steps,
                micros: started.elapsed().as_micros() as u64,
            });
        }
        self.decrypt()
    }

    fn setup(&mut self) -> Result<(), EngineError> {
        for layer in &self.topo.layers {
            for m in layer {
                let node = &self.mixes[&m.id];
                self.board
                    .register(ServerId::mix(m.id), &node.key, Some(node.layer), m.throughput, &m.org)?;
            }
        }
        for (&i, node) in &self.res {
            self.board
                .register(ServerId::routing_entity(i), node.entity.key(), None, 0, "")?;
        }
        for (&i, node) in &self.auditors {
            self.board.register(ServerId::auditor(i), &node.key, None, 0, "")?;
        }
        let setup = Body::Setup(Setup {
            pke: self.pke.clone(),
            auditors: self.cfg.auditors,
            threshold: self.cfg.threshold,
            layers: self.l,
            blocks: self.cfg.blocks,
            soundness: self.cfg.soundness,
        });
        self.board
            .post(&self.auditors[&1].key, ServerId::auditor(1), 0, &setup)?;

        let blocks = self.cfg.blocks as usize;
        for i in 0..self.cfg.messages {
            let c = encrypt(&self.pke, &payload(i), blocks, &mut self.user_rng)?;
            self.user_cts.push(c);
        }
        let users: Vec<usize> = (0..self.cfg.messages).collect();
        let entry = self.topo.capacities(1);
        self.distribute(1, 0, users, &entry)?;
        self.sync();
        Ok(())
    }

    fn sync(&mut self) {
        self.view.sync(&self.board);
    }

    /// Users pick entry mixes in proportion to throughput.
    fn distribute(
        &mut self,
        layer: u32,
        batch: u32,
        mut users: Vec<usize>,
        caps: &[Capacity],
    ) -> Result<(), EngineError> {
        users.shuffle(&mut self.user_rng);
        let counts = quotas(users.len(), &caps.iter().map(|c| c.throughput).collect::<Vec<_>>())?;
        let mut rest = users.as_slice();
        for (cap, n) in caps.iter().zip(counts) {
            let (mine, tail) = rest.split_at(n);
            rest = tail;
            if !mine.is_empty() {
                self.inbox.insert(
                    BatchKey {
                        ctr: layer,
                        mix: cap.mix,
                        batch,
                    },
                    mine.to_vec(),
                );
            }
        }
        self.queues.entry(layer).or_default().insert(batch);
        Ok(())
    }

    fn fresh_batch(&mut self, layer: u32) -> u32 {
        let next = self.next_batch.entry(layer).or_insert(1);
        let b = *next;
        *next += 1;
        b
    }

    fn wait(&mut self) {
        self.steps += self.cfg.timeout_steps as u64;
    }

    fn reporter(&self) -> Result<u32, EngineError> {
        self.auditors
            .iter()
            .find(|(_, a)| !a.corrupt && live(a.out_from, Phase::Audit))
            .map(|(&i, _)| i)
            .ok_or_else(|| EngineError::Halted("no honest auditor is online".into()))
    }

    fn post_auditor(&mut self, ctr: u32, body: &Body<G>) -> Result<u64, EngineError> {
        let i = self.reporter()?;
        Ok(self
            .board
            .post(&self.auditors[&i].key, ServerId::auditor(i), ctr, body)?)
    }

    fn post_mix(&mut self, mix: u32, ctr: u32, body: &Body<G>) -> Result<u64, EngineError> {
        let node = &self.mixes[&mix];
        Ok(self.board.post(&node.key, ServerId::mix(mix), ctr, body)?)
    }

    fn record(&mut self, key: BatchKey, verdict: &Verdict) {
        self.verdicts.push(VerdictRecord {
            layer: key.ctr,
            mix: key.mix,
            batch: key.batch,
            verdict: verdict.to_string(),
        });
    }

    fn fail_mix(&mut self, key: BatchKey, reason: FailureReason, verdict: Verdict) -> Result<(), EngineError> {
        self.post_auditor(
            key.ctr,
            &Body::Failure {
                subject: ServerId::mix(key.mix),
                batch: key.batch,
                reason,
            },
        )?;
        self.log.push(format!("{key}: {verdict}"));
        self.record(key, &verdict);
        Ok(())
    }

    fn process_batch(&mut self, ctr: u32, batch: u32) -> Result<(), EngineError> {
        self.sync();
        let mut from_users: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        let keys: Vec<BatchKey> = self
            .inbox
            .keys()
            .filter(|k| k.ctr == ctr && k.batch == batch)
            .copied()
            .collect();
        for k in keys {
            from_users.insert(k.mix, self.inbox.remove(&k).expect("key present"));
        }
        let mut posting: BTreeSet<u32> = self.view.batch_targets(ctr, batch);
        posting.extend(from_users.keys().copied());

        // Fetch and sign inputs.
        let mut silent = Vec::new();
        for &mix in &posting {
            self.steps += 1;
            let key = BatchKey { ctr, mix, batch };
            if !live(self.mixes[&mix].out_from, Phase::Input) {
                silent.push(mix);
                continue;
            }
            let (source, ciphertexts) = match from_users.get(&mix) {
                Some(users) => (
                    InputSource::Users,
                    users.iter().map(|&u| self.user_cts[u].clone()).collect(),
                ),
                None => (InputSource::Routed, self.fetch(key)?),
            };
            self.post_mix(
                mix,
                ctr,
                &Body::Inputs {
                    batch,
                    source,
                    ciphertexts,
                },
            )?;
        }
        if !silent.is_empty() {
            self.wait();
        }
        let mut failed = Vec::new();
        let mut stranded_users = Vec::new();
        for mix in silent {
            let key = BatchKey { ctr, mix, batch };
            self.fail_mix(key, FailureReason::Timeout, Verdict::Unavailable)?;
            match from_users.remove(&mix) {
                Some(users) => stranded_users.extend(users),
                None => failed.push(key),
            }
        }
        self.sync();

        // Routing verification.
        let mut to_mix = Vec::new();
        for (mix, verdict) in self.view.routing_check(ctr, batch) {
            let key = BatchKey { ctr, mix, batch };
            match verdict {
                Verdict::Accept => to_mix.push(mix),
                Verdict::RoutingError(m) => {
                    self.fail_mix(key, FailureReason::Routing, Verdict::RoutingError(m))?;
                    failed.push(key);
                }
                other => return Err(EngineError::Internal(format!("{key}: routing check gave {other}"))),
            }
        }

        // Mix and prove.
        let mut mixed = Vec::new();
        let mut silent = Vec::new();
        for mix in to_mix {
            self.steps += 1;
            let key = BatchKey { ctr, mix, batch };
            if live(self.mixes[&mix].out_from, Phase::Mix) {
                self.mix_and_prove(key)?;
                mixed.push(key);
            } else {
                silent.push(key);
            }
        }
        if !silent.is_empty() {
            self.wait();
        }
        for key in silent {
            self.fail_mix(key, FailureReason::Timeout, Verdict::Unavailable)?;
            failed.push(key);
        }
        self.sync();

        // Proof verification.
        self.steps += 1;
        let checks: Vec<(BatchKey, Verdict)> = mixed.par_iter().map(|&k| (k, self.view.proof_check(k))).collect();
        let mut accepted = Vec::new();
        for (key, verdict) in checks {
            match verdict {
                Verdict::Accept => {
                    self.record(key, &Verdict::Accept);
                    accepted.push(key);
                }
                Verdict::MixingError(m) => {
                    self.fail_mix(key, FailureReason::Mixing, Verdict::MixingError(m))?;
                    failed.push(key);
                }
                other => return Err(EngineError::Internal(format!("{key}: proof check gave {other}"))),
            }
        }
        self.sync();

        if !stranded_users.is_empty() {
            self.resubmit(ctr, stranded_users)?;
        }
        failed.sort();
        for key in failed {
            self.recover(key)?;
        }
        for key in accepted {
            if ctr < self.l {
                self.forward(key)?;
            } else {
                self.final_cts.extend(self.view.outputs[&key].1.iter().cloned());
            }
        }
        Ok(())
    }

    /// Ciphertexts a mix fetches for a routed batch; a wrong-routing mix
    /// swaps one assigned ciphertext for one that is not.
    fn fetch(&mut self, key: BatchKey) -> Result<Vec<Ciphertext<G>>, EngineError> {
        let mut cts = self
            .view
            .expected_inputs(key)
            .map_err(|v| EngineError::Internal(format!("{key}: inputs unresolved ({v})")))?;
        if self.mixes[&key.mix].behavior != MixBehavior::WrongRouting || cts.is_empty() {
            return Ok(cts);
        }
        let mut stolen = None;
        for (skey, state) in self.view.sessions_into(key.ctr, key.batch) {
            if let SessionState::Valid(s) = state {
                let items = self.view.session_items(&skey).expect("valid session has items");
                if let Some(i) = s.assignment.owners().iter().position(|&m| m != key.mix) {
                    stolen = Some(items[i].clone());
                    break;
                }
            }
        }
        let replacement = match stolen {
            Some(c) => c,
            None => reencrypt(&self.pke, &cts[0], &mut self.mixes.get_mut(&key.mix).expect("mix").rng).0,
        };
        cts[0] = replacement;
        self.log.push(format!("{key}: fetched an unassigned ciphertext"));
        Ok(cts)
    }

    fn mix_and_prove(&mut self, key: BatchKey) -> Result<(), EngineError> {
        let inputs = self.view.inputs[&key].ciphertexts.clone();
        let pke = self.pke.clone();
        let k = self.cfg.soundness as usize;
        let blocks = self.cfg.blocks as usize;
        let node = self.mixes.get_mut(&key.mix).expect("mix");
        let phi = Permutation::random(inputs.len(), &mut node.rng);
        let (mut outputs, witness) = shuffle(&pke, &inputs, phi, &mut node.rng)?;
        let context = proof_context(key);
        let proof = if node.behavior == MixBehavior::InvalidShuffle {
            outputs[0] = encrypt(&pke, b"tampered", blocks, &mut node.rng)?;
            let stmt = ShuffleStatement {
                pk: &pke,
                context: &context,
                input: &inputs,
                output: &outputs,
            };
            forge_proof(&stmt, k, &mut node.rng)?
        } else {
            let stmt = ShuffleStatement {
                pk: &pke,
                context: &context,
                input: &inputs,
                output: &outputs,
            };
            prove_shuffle(&stmt, &witness, k, &mut node.rng)?
        };
        let batch = key.batch;
        self.post_mix(
            key.mix,
            key.ctr,
            &Body::Outputs {
                batch,
                ciphertexts: outputs,
            },
        )?;
        self.post_mix(key.mix, key.ctr, &Body::Proof { batch, proof })?;
        Ok(())
    }

    /// Users whose entry mix never posted their ciphertexts try again.
    fn resubmit(&mut self, ctr: u32, users: Vec<usize>) -> Result<(), EngineError> {
        let failed = self.view.failed_mixes(self.entry_layer, u64::MAX);
        let live: Vec<Capacity> = self
            .topo
            .capacities(self.entry_layer)
            .into_iter()
            .filter(|c| !failed.contains(&c.mix))
            .collect();
        if !live.is_empty() {
            let layer = self.entry_layer;
            let batch = self.fresh_batch(layer);
            self.log.push(format!(
                "{} user(s) resubmitted to other entry mixes of layer {layer} (batch {batch})",
                users.len()
            ));
            return self.distribute(layer, batch, users, &live);
        }
        if self.entry_layer >= self.l {
            return Err(EngineError::Halted(format!(
                "every layer lost before {} user(s) could submit",
                users.len()
            )));
        }
        self.entry_layer += 1;
        let layer = self.entry_layer;
        let caps = self.topo.capacities(layer);
        self.post_auditor(
            ctr,
            &Body::EntryPoints {
                layer,
                mixes: caps.iter().map(|c| c.mix).collect(),
            },
        )?;
        let batch = self.fresh_batch(layer);
        self.log.push(format!(
            "entry layer lost; layer {layer} announced as entry point, {} user(s) resubmitted",
            users.len()
        ));
        self.distribute(layer, batch, users, &caps)
    }

    /// Hand a failed batch's ciphertexts to surviving mixes of its layer,
    /// or to the next layer when none survive.
    fn recover(&mut self, key: BatchKey) -> Result<(), EngineError> {
        self.sync();
        let items = self.view.stranded_items(key);
        if items.is_empty() {
            return Ok(());
        }
        let session = SessionId {
            ctr: key.ctr,
            purpose: Purpose::Reassign,
            source: key.mix,
            batch: key.batch,
            attempt: 0,
        };
        let failed = self.view.failed_mixes(key.ctr, u64::MAX);
        let survivors: Vec<Capacity> = self
            .topo
            .capacities(key.ctr)
            .into_iter()
            .filter(|c| !failed.contains(&c.mix))
            .collect();
        let n = items.len();
        self.reassignments += 1;
        let (target_ctr, target_batch, targets) = if !survivors.is_empty() {
            let batch = self.fresh_batch(key.ctr);
            self.log.push(format!(
                "{key}: {n} ciphertext(s) reassigned to {} surviving mix(es) (batch {batch})",
                survivors.len()
            ));
            (key.ctr, batch, survivors)
        } else if key.ctr < self.l {
            self.log.push(format!(
                "{key}: layer {} lost; layer {} takes over {n} ciphertext(s), which skip one mixing layer",
                key.ctr,
                key.ctr + 1
            ));
            (key.ctr + 1, 0, self.topo.capacities(key.ctr + 1))
        } else {
            self.log.push(format!(
                "{key}: last layer lost; {n} ciphertext(s) leave without their final mixing"
            ));
            self.post_auditor(
                key.ctr,
                &Body::Reassign {
                    session,
                    target_ctr: key.ctr + 1,
                    items: items.clone(),
                },
            )?;
            self.final_cts.extend(items);
            return Ok(());
        };
        self.post_auditor(
            key.ctr,
            &Body::Reassign {
                session,
                target_ctr,
                items,
            },
        )?;
        let plan = SessionPlan {
            target_ctr,
            target_batch,
            targets,
        };
        self.run_session(session, plan)?;
        self.queues.entry(target_ctr).or_default().insert(target_batch);
        Ok(())
    }

    fn forward(&mut self, key: BatchKey) -> Result<(), EngineError> {
        let session = SessionId {
            ctr: key.ctr,
            purpose: Purpose::Forward,
            source: key.mix,
            batch: key.batch,
            attempt: 0,
        };
        let plan = SessionPlan {
            target_ctr: key.ctr + 1,
            target_batch: 0,
            targets: self.topo.capacities(key.ctr + 1),
        };
        self.run_session(session, plan)?;
        self.queues.entry(key.ctr + 1).or_default().insert(0);
        Ok(())
    }

    fn post_re_failure(&mut self, ctr: u32, re: u32, batch: u32, reason: FailureReason) -> Result<(), EngineError> {
        self.post_auditor(
            ctr,
            &Body::Failure {
                subject: ServerId::routing_entity(re),
                batch,
                reason,
            },
        )?;
        Ok(())
    }

    /// Commit-reveal among the routing entities still in good standing,
    /// retried until one attempt opens cleanly.
    fn run_session(&mut self, base: SessionId, plan: SessionPlan) -> Result<(), EngineError> {
        let mut attempt = 0;
        loop {
            let committee: Vec<u32> = self.res.iter().filter(|(_, r)| !r.voted_out).map(|(&i, _)| i).collect();
            if committee.is_empty() {
                return Err(EngineError::Halted("every routing entity was voted out".into()));
            }
            let sid = SessionId { attempt, ..base };
            let mut silent = Vec::new();
            for &re in &committee {
                self.steps += 1;
                let node = self.res.get_mut(&re).expect("re");
                if !live(node.out_from, Phase::Commit) {
                    silent.push(re);
                    continue;
                }
                node.entity.toss_commit(&mut self.board, sid, &plan, &mut node.rng)?;
                if !live(node.out_from, Phase::Open) {
                    node.out_from = Some(Phase::Commit);
                }
            }
            if silent.is_empty() {
                self.maybe_grind(sid, &plan, &committee)?;
                for &re in &committee {
                    self.steps += 1;
                    let node = self.res.get_mut(&re).expect("re");
                    let withheld = node.behavior == ReBehavior::AbortAfterCommit || !live(node.out_from, Phase::Open);
                    if withheld {
                        silent.push(re);
                    } else if node.behavior == ReBehavior::BadOpening {
                        let mut rand = node.entity.committed(&sid).expect("committed");
                        rand[0] ^= 1;
                        let mut nonce = [0u8; 32];
                        node.rng.fill_bytes(&mut nonce);
                        let body = Body::Open {
                            session: sid,
                            rand,
                            nonce,
                        };
                        self.board.post(node.entity.key(), node.entity.id(), sid.ctr, &body)?;
                    } else {
                        node.entity.toss_open(&mut self.board, sid, &committee)?;
                    }
                }
            }
            if !silent.is_empty() {
                self.wait();
            }
            self.sync();
            match self.view.session_state(&sid.key()) {
                SessionState::Valid(_) if silent.is_empty() => return Ok(()),
                SessionState::CommitmentError(re) => {
                    self.post_re_failure(sid.ctr, re, sid.batch, FailureReason::Commitment)?;
                    self.res.get_mut(&re).expect("re").voted_out = true;
                    self.log
                        .push(format!("{sid}: re-{re} opened a value it did not commit to; voted out"));
                }
                _ if !silent.is_empty() => {
                    for re in silent {
                        self.post_re_failure(sid.ctr, re, sid.batch, FailureReason::Abort)?;
                        let node = self.res.get_mut(&re).expect("re");
                        node.aborts += 1;
                        let mut note = format!("{sid}: re-{re} aborted");
                        if node.aborts >= 2 {
                            node.voted_out = true;
                            note.push_str(" again; voted out");
                            self.post_re_failure(sid.ctr, re, sid.batch, FailureReason::VotedOut)?;
                        }
                        self.log.push(note);
                    }
                }
                other => {
                    return Err(EngineError::Internal(format!(
                        "{sid}: unexpected session state {other:?}"
                    )))
                }
            }
            self.sync();
            attempt += 1;
        }
    }

    /// A grinding entity can only open what it committed to, so the run
    /// stays honest; what its precomputed candidates would have achieved
    /// is logged.
    fn maybe_grind(&mut self, sid: SessionId, plan: &SessionPlan, committee: &[u32]) -> Result<(), EngineError> {
        let adv = &self.cfg.adversary;
        if adv.re_behavior != ReBehavior::Grind {
            return Ok(());
        }
        let Some(&grinder) = committee.iter().rev().find(|re| adv.routing_entities.contains(re)) else {
            return Ok(());
        };
        let Some(&target_mix) = plan.targets.iter().map(|c| &c.mix).find(|m| adv.mixes.contains(m)) else {
            return Ok(());
        };
        let Some(items) = self.view.session_items(&sid.key()).map(|i| i.len()) else {
            return Ok(());
        };
        let honest: Vec<Rand> = committee
            .iter()
            .filter(|re| !adv.routing_entities.contains(re))
            .filter_map(|re| self.res[re].entity.committed(&sid))
            .collect();
        let session = GrindSession {
            honest: &honest,
            items,
            target: 1,
            capacities: &plan.targets,
            adversary_mix: target_mix,
        };
        let hit = adversary_grind(&session, adv.grind_attempts, &mut self.grind_rng);
        self.log.push(format!(
            "{sid}: re-{grinder} grinding with {} candidate(s) would {}steer position 1 to mix-{target_mix}; binding forces its committed value",
            adv.grind_attempts,
            if hit { "" } else { "not " }
        ));
        Ok(())
    }

    fn decrypt(&mut self) -> Result<(), EngineError> {
        let z = self.cfg.threshold as usize;
        let online: Vec<&KeyShare<G>> = self
            .auditors
            .values()
            .filter(|a| live(a.out_from, Phase::Decrypt))
            .map(|a| &a.share)
            .take(z)
            .collect();
        if online.len() < z {
            return Err(EngineError::Halted(format!(
                "threshold failure: {} decryption share(s) available, {z} needed",
                online.len()
            )));
        }
        let group = self.board.group();
        let delivered: Result<Vec<Delivery>, CryptoError> = self
            .final_cts
            .par_iter()
            .map(|c| {
                let shares = online
                    .iter()
                    .map(|s| partial_decrypt(group, s, c))
                    .collect::<Result<Vec<_>, _>>()?;
                combine_decrypt(group, z, &shares, c).map(|p| Delivery::parse(&p))
            })
            .collect();
        self.delivered = delivered?;
        self.log.push(format!("decrypted {} message(s)", self.delivered.len()));
        Ok(())
    }
}
