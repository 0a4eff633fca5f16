//! Append-only bulletin board with signed, layer-indexed entries.

pub mod body;
pub mod ids;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{verify_sig, CryptoError, Group, GroupId, SigKeyPair, Signature};
use crate::wire::{WireError, Writer};

pub use body::{Body, FailureReason, InputSource, Registration, SessionPlan, Setup};
pub use ids::{EntryKind, ParseIdError, Role, ServerId};

#[derive(Debug, Error)]
pub enum BoardError {
    #[error("users cannot write to the board ({0})")]
    UserWrite(ServerId),
    #[error("author {0} is not registered")]
    Unregistered(ServerId),
    #[error("author {0} is already registered")]
    AlreadyRegistered(ServerId),
    #[error("role mismatch: {id} registered as {claimed:?}")]
    RoleMismatch { id: ServerId, claimed: Role },
    #[error("bad signature on entry {seq} by {author}")]
    BadSignature { seq: u64, author: ServerId },
    #[error("entry {seq}: {source}")]
    Entry { seq: u64, source: Box<BoardError> },
    #[error("entry declared as {declared} but body is {actual}")]
    KindMismatch { declared: EntryKind, actual: EntryKind },
    #[error("registration group {found} does not match board group {expected}")]
    GroupMismatch { expected: GroupId, found: GroupId },
    #[error("timed out after {steps} steps waiting for the board")]
    Timeout { steps: usize },
    #[error("sequence numbers out of order at line {line}: expected {expected}, found {found}")]
    Sequence { line: usize, expected: u64, found: u64 },
    #[error("transcript line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("malformed body: {0}")]
    Body(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One immutable board record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub seq: u64,
    pub ctr: u32,
    pub author: ServerId,
    pub kind: EntryKind,
    pub body: Vec<u8>,
    pub signature: Vec<u8>,
}

/// Bytes covered by an entry signature.
pub fn signed_message(author: ServerId, ctr: u32, kind: EntryKind, body: &[u8]) -> Vec<u8> {
    let mut w = Writer::new();
    w.fixed(b"mpr-entry");
    author.write(&mut w);
    w.u32(ctr).u8(kind.to_byte()).bytes(body);
    w.finish()
}

impl Entry {
    /// Sign a new entry. The board assigns `seq` on append.
    pub fn signed<G: Group>(
        key: &SigKeyPair<G>,
        group: &G,
        author: ServerId,
        ctr: u32,
        kind: EntryKind,
        body: Vec<u8>,
    ) -> Self {
        let signature = key.sign(&signed_message(author, ctr, kind, &body)).to_bytes(group);
        Self {
            seq: 0,
            ctr,
            author,
            kind,
            body,
            signature,
        }
    }

    fn verify<G: Group>(&self, group: &G, pkv: &G::Element) -> bool {
        Signature::from_bytes(group, &self.signature).is_ok_and(|sig| {
            verify_sig(
                group,
                pkv,
                &signed_message(self.author, self.ctr, self.kind, &self.body),
                &sig,
            )
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegisteredServer<G: Group> {
    pub id: ServerId,
    pub pkv: G::Element,
    pub layer: Option<u32>,
    pub throughput: u64,
    pub org: String,
}

/// Filter for [`BulletinBoard::read`]; `None` matches anything.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Query {
    pub ctr: Option<u32>,
    pub kind: Option<EntryKind>,
    pub author: Option<ServerId>,
}

impl Query {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn ctr(mut self, ctr: u32) -> Self {
        self.ctr = Some(ctr);
        self
    }

    pub fn kind(mut self, kind: EntryKind) -> Self {
        self.kind = Some(kind);
        self
    }

    pub fn author(mut self, author: ServerId) -> Self {
        self.author = Some(author);
        self
    }

    pub fn matches(&self, e: &Entry) -> bool {
        self.ctr.is_none_or(|c| c == e.ctr)
            && self.kind.is_none_or(|k| k == e.kind)
            && self.author.is_none_or(|a| a == e.author)
    }
}

#[derive(Clone, Debug)]
pub struct BulletinBoard<G: Group> {
    group: G,
    entries: Vec<Entry>,
    registry: BTreeMap<ServerId, RegisteredServer<G>>,
}

#[derive(Serialize, Deserialize)]
struct JsonEntry {
    seq: u64,
    ctr: u32,
    author: ServerId,
    kind: EntryKind,
    body: String,
    signature: String,
}

impl<G: Group> BulletinBoard<G> {
    pub fn new(group: G) -> Self {
        Self {
            group,
            entries: Vec::new(),
            registry: BTreeMap::new(),
        }
    }

    pub fn group(&self) -> &G {
        &self.group
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn registry(&self) -> &BTreeMap<ServerId, RegisteredServer<G>> {
        &self.registry
    }

    pub fn server(&self, id: ServerId) -> Option<&RegisteredServer<G>> {
        self.registry.get(&id)
    }

    /// Mixes registered for `layer`, ordered by index.
    pub fn layer_mixes(&self, layer: u32) -> Vec<&RegisteredServer<G>> {
        self.registry
            .values()
            .filter(|s| s.id.role == Role::Mix && s.layer == Some(layer))
            .collect()
    }

    /// Self-signed registration, posted at ctr 0.
    pub fn register(
        &mut self,
        id: ServerId,
        key: &SigKeyPair<G>,
        layer: Option<u32>,
        throughput: u64,
        org: &str,
    ) -> Result<u64, BoardError> {
        let body = Body::<G>::Registration(Registration {
            group: self.group.id(),
            role: id.role,
            pkv: self.group.encode_element(key.public()),
            layer,
            throughput,
            org: org.to_string(),
        });
        let entry = Entry::signed(key, &self.group, id, 0, EntryKind::PublicKey, body.encode(&self.group));
        self.append(entry)
    }

    /// Sign and append a typed body.
    pub fn post(&mut self, key: &SigKeyPair<G>, author: ServerId, ctr: u32, body: &Body<G>) -> Result<u64, BoardError> {
        let entry = Entry::signed(key, &self.group, author, ctr, body.kind(), body.encode(&self.group));
        self.append(entry)
    }

    /// Validate and append; returns the assigned sequence number.
    pub fn append(&mut self, mut entry: Entry) -> Result<u64, BoardError> {
        if entry.author.role == Role::User {
            return Err(BoardError::UserWrite(entry.author));
        }
        let seq = self.entries.len() as u64;
        entry.seq = seq;
        match self.registry.get(&entry.author) {
            Some(server) => {
                if !entry.verify(&self.group, &server.pkv) {
                    return Err(BoardError::BadSignature {
                        seq,
                        author: entry.author,
                    });
                }
            }
            None => {
                let server = self.registration(&entry)?;
                self.registry.insert(entry.author, server);
            }
        }
        self.entries.push(entry);
        Ok(seq)
    }

    fn registration(&self, entry: &Entry) -> Result<RegisteredServer<G>, BoardError> {
        if entry.kind != EntryKind::PublicKey || entry.ctr != 0 {
            return Err(BoardError::Unregistered(entry.author));
        }
        let Body::Registration(reg) = Body::<G>::decode(&self.group, entry.kind, &entry.body)? else {
            return Err(BoardError::Unregistered(entry.author));
        };
        if reg.group != self.group.id() {
            return Err(BoardError::GroupMismatch {
                expected: self.group.id(),
                found: reg.group,
            });
        }
        if reg.role != entry.author.role {
            return Err(BoardError::RoleMismatch {
                id: entry.author,
                claimed: reg.role,
            });
        }
        let pkv = self.group.decode_element(&reg.pkv)?;
        if !entry.verify(&self.group, &pkv) {
            return Err(BoardError::BadSignature {
                seq: self.entries.len() as u64,
                author: entry.author,
            });
        }
        Ok(RegisteredServer {
            id: entry.author,
            pkv,
            layer: reg.layer,
            throughput: reg.throughput,
            org: reg.org,
        })
    }

    pub fn read(&self, query: Query) -> Vec<&Entry> {
        self.entries.iter().filter(|e| query.matches(e)).collect()
    }

    /// Scheduling barrier: run `step` once per simulation step until `ready`
    /// holds, giving up after `max_steps` steps. Returns the steps taken.
    pub fn await_until<P, S>(&mut self, max_steps: usize, mut ready: P, mut step: S) -> Result<usize, BoardError>
    where
        P: FnMut(&Self) -> bool,
        S: FnMut(&mut Self, usize),
    {
        let mut taken = 0;
        loop {
            if ready(self) {
                return Ok(taken);
            }
            if taken == max_steps {
                return Err(BoardError::Timeout { steps: taken });
            }
            step(self, taken);
            taken += 1;
        }
    }

    /// Barrier over a query: returns the matching entries once `done` accepts them.
    pub fn await_query<P, S>(
        &mut self,
        query: Query,
        max_steps: usize,
        mut done: P,
        step: S,
    ) -> Result<Vec<Entry>, BoardError>
    where
        P: FnMut(&[&Entry]) -> bool,
        S: FnMut(&mut Self, usize),
    {
        self.await_until(max_steps, |b| done(&b.read(query)), step)?;
        Ok(self.read(query).into_iter().cloned().collect())
    }

    /// Re-check every stored signature against the registry.
    pub fn verify_all(&self) -> Result<(), BoardError> {
        for entry in &self.entries {
            let server = self
                .registry
                .get(&entry.author)
                .ok_or(BoardError::Unregistered(entry.author))?;
            if !entry.verify(&self.group, &server.pkv) {
                return Err(BoardError::BadSignature {
                    seq: entry.seq,
                    author: entry.author,
                });
            }
        }
        Ok(())
    }

    pub fn export_jsonl<W: Write>(&self, mut out: W) -> Result<(), BoardError> {
        for e in &self.entries {
            let line = JsonEntry {
                seq: e.seq,
                ctr: e.ctr,
                author: e.author,
                kind: e.kind,
                body: B64.encode(&e.body),
                signature: B64.encode(&e.signature),
            };
            serde_json::to_writer(&mut out, &line).map_err(|err| BoardError::Io(err.into()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = Vec::new();
        self.export_jsonl(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("json is utf-8")
    }

    /// Rebuild a board from an exported transcript, re-validating every entry.
    pub fn import_jsonl<R: BufRead>(group: G, input: R) -> Result<Self, BoardError> {
        let mut board = Self::new(group);
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse = |message: String| BoardError::Parse { line: i + 1, message };
            let raw: JsonEntry = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
            let expected = board.entries.len() as u64;
            if raw.seq != expected {
                return Err(BoardError::Sequence {
                    line: i + 1,
                    expected,
                    found: raw.seq,
                });
            }
            let entry = Entry {
                seq: raw.seq,
                ctr: raw.ctr,
                author: raw.author,
                kind: raw.kind,
                body: B64.decode(&raw.body).map_err(|e| parse(e.to_string()))?,
                signature: B64.decode(&raw.signature).map_err(|e| parse(e.to_string()))?,
            };
            board.append(entry).map_err(|e| BoardError::Entry {
                seq: raw.seq,
                source: Box::new(e),
            })?;
        }
        Ok(board)
    }
}

/// Group named by the first registration in a transcript.
pub fn transcript_group(jsonl: &str) -> Result<GroupId, BoardError> {
    for (i, line) in jsonl.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: JsonEntry = serde_json::from_str(line).map_err(|e| BoardError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if raw.kind == EntryKind::PublicKey {
            let body = B64.decode(&raw.body).map_err(|e| BoardError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if let Some(g) = body::registration_group(&body) {
                return Ok(g);
            }
        }
    }
    Err(BoardError::Parse {
        line: 0,
        message: "no registration entry".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Ristretto;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn setup() -> (BulletinBoard<Ristretto>, SigKeyPair<Ristretto>, SigKeyPair<Ristretto>) {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mix = SigKeyPair::generate(&Ristretto, &mut rng);
        let re = SigKeyPair::generate(&Ristretto, &mut rng);
        let mut board = BulletinBoard::new(Ristretto);
        board.register(ServerId::mix(1), &mix, Some(1), 1, "a").unwrap();
        board.register(ServerId::routing_entity(1), &re, None, 0, "").unwrap();
        (board, mix, re)
    }

    fn outputs(batch: u32) -> Body<Ristretto> {
        Body::Outputs {
            batch,
            ciphertexts: vec![],
        }
    }

    #[test]
    fn append_and_read() {
        let (mut board, mix, _) = setup();
        let seq = board.post(&mix, ServerId::mix(1), 1, &outputs(0)).unwrap();
        assert_eq!(seq, 2);
        let found = board.read(
            Query::all()
                .ctr(1)
                .kind(EntryKind::OutputCiphertexts)
                .author(ServerId::mix(1)),
        );
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].seq, 2);
        assert!(board.read(Query::all().ctr(2)).is_empty());
        let seqs: Vec<u64> = board.read(Query::all()).iter().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![0, 1, 2]);
    }

    #[test]
    fn mutated_body_is_rejected() {
        let (mut board, mix, _) = setup();
        let mut entry = Entry::signed(
            &mix,
            &Ristretto,
            ServerId::mix(1),
            1,
            EntryKind::OutputCiphertexts,
            outputs(0).encode(&Ristretto),
        );
        entry.body[2] ^= 1;
        assert!(matches!(board.append(entry), Err(BoardError::BadSignature { .. })));
    }

    #[test]
    fn users_and_strangers_cannot_write() {
        let (mut board, mix, re) = setup();
        let entry = Entry::signed(
            &mix,
            &Ristretto,
            ServerId::user(1),
            1,
            EntryKind::InputCiphertexts,
            vec![],
        );
        assert!(matches!(board.append(entry), Err(BoardError::UserWrite(_))));
        let entry = Entry::signed(
            &mix,
            &Ristretto,
            ServerId::mix(9),
            1,
            EntryKind::OutputCiphertexts,
            outputs(0).encode(&Ristretto),
        );
        assert!(matches!(board.append(entry), Err(BoardError::Unregistered(_))));
        // Signing with someone else's key.
        assert!(matches!(
            board.post(&re, ServerId::mix(1), 1, &outputs(0)),
            Err(BoardError::BadSignature { .. })
        ));
    }

    #[test]
    fn await_behaviour() {
        let (mut board, mix, _) = setup();
        let q = Query::all().kind(EntryKind::OutputCiphertexts);
        let got = board.await_query(q, 3, |_| true, |_, _| unreachable!()).unwrap();
        assert!(got.is_empty());

        let got = board
            .await_query(
                q,
                3,
                |es| es.len() == 2,
                |b, step| {
                    b.post(&mix, ServerId::mix(1), 1, &outputs(step as u32)).unwrap();
                },
            )
            .unwrap();
        assert_eq!(got.len(), 2);

        let err = board.await_query(q, 3, |es| es.len() == 10, |_, _| {}).unwrap_err();
        assert!(matches!(err, BoardError::Timeout { steps: 3 }));
    }

    #[test]
    fn jsonl_round_trip_is_bit_exact() {
        let (mut board, mix, _) = setup();
        board.post(&mix, ServerId::mix(1), 1, &outputs(0)).unwrap();
        let text = board.to_jsonl();
        assert_eq!(transcript_group(&text).unwrap(), GroupId::Ristretto255);
        let back = BulletinBoard::import_jsonl(Ristretto, text.as_bytes()).unwrap();
        assert_eq!(back.entries(), board.entries());
        assert_eq!(back.to_jsonl(), text);
        back.verify_all().unwrap();
    }

    #[test]
    fn import_names_the_corrupt_entry() {
        let (mut board, mix, _) = setup();
        board.post(&mix, ServerId::mix(1), 1, &outputs(0)).unwrap();
        board.post(&mix, ServerId::mix(1), 1, &outputs(1)).unwrap();
        let text = board.to_jsonl();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut raw: JsonEntry = serde_json::from_str(&lines[3]).unwrap();
        let mut body = B64.decode(&raw.body).unwrap();
        body[3] ^= 0x40;
        raw.body = B64.encode(&body);
        lines[3] = serde_json::to_string(&raw).unwrap();
        match BulletinBoard::import_jsonl(Ristretto, lines.join("\n").as_bytes()) {
            Err(BoardError::Entry { seq, .. }) => assert_eq!(seq, 3),
            other => panic!("expected entry error, got {other:?}"),
        }
    }
}
