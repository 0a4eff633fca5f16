use std::collections::HashMap;

use rand::{CryptoRng, RngCore};

use crate::board::{Body, BulletinBoard, EntryKind, Query, ServerId, SessionPlan};
use crate::crypto::{commit, Group, Opening, SigKeyPair};

use super::{Rand, RoutingError, SessionId};

/// A routing entity's local state: its signing key and unopened commitments.
pub struct RoutingEntity<G: Group> {
    pub index: u32,
    key: SigKeyPair<G>,
    pending: HashMap<SessionId, Opening>,
}

impl<G: Group> RoutingEntity<G> {
    pub fn new(index: u32, key: SigKeyPair<G>) -> Self {
        Self {
            index,
            key,
            pending: HashMap::new(),
        }
    }

    pub fn id(&self) -> ServerId {
        ServerId::routing_entity(self.index)
    }

    pub fn key(&self) -> &SigKeyPair<G> {
        &self.key
    }

    /// Draw a fresh 256-bit string and post a commitment to it.
    pub fn toss_commit<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        board: &mut BulletinBoard<G>,
        session: SessionId,
        plan: &SessionPlan,
        rng: &mut R,
    ) -> Result<u64, RoutingError> {
        let mut rand: Rand = [0; 32];
        rng.fill_bytes(&mut rand);
        let (c, opening) = commit(&rand, rng);
        let body = Body::Commit {
            session,
            plan: plan.clone(),
            value: c.value,
        };
        let seq = board.post(&self.key, self.id(), session.ctr, &body)?;
        self.pending.insert(session, opening);
        Ok(seq)
    }

    /// The value this entity committed to, if any.
    pub fn committed(&self, session: &SessionId) -> Option<Rand> {
        self.pending
            .get(session)
            .map(|o| o.payload.as_slice().try_into().expect("32-byte payload"))
    }

    /// Post the opening, refusing until every member of `committee` has
    /// committed for this session.
    pub fn toss_open(
        &mut self,
        board: &mut BulletinBoard<G>,
        session: SessionId,
        committee: &[u32],
    ) -> Result<u64, RoutingError> {
        let missing = missing_commitments(board, session, committee);
        if !missing.is_empty() {
            return Err(RoutingError::OpenBeforeCommit { session, missing });
        }
        let opening = self
            .pending
            .remove(&session)
            .ok_or(RoutingError::UnknownSession(session))?;
        let body = Body::Open {
            session,
            rand: opening.payload.as_slice().try_into().expect("32-byte payload"),
            nonce: opening.nonce,
        };
        Ok(board.post(&self.key, self.id(), session.ctr, &body)?)
    }
}

/// Committee members with no commitment for `session` on the board.
pub fn missing_commitments<G: Group>(board: &BulletinBoard<G>, session: SessionId, committee: &[u32]) -> Vec<u32> {
    let mut seen = Vec::new();
    for e in board.read(Query::all().ctr(session.ctr).kind(EntryKind::RandCommitment)) {
        if let Ok(Body::Commit { session: s, .. }) = Body::<G>::decode(board.group(), e.kind, &e.body) {
            if s == session {
                seen.push(e.author.index);
            }
        }
    }
    committee.iter().copied().filter(|re| !seen.contains(re)).collect()
}
