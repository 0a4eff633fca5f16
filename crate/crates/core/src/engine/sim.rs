//! Routing without cryptography: messages are tracked by index through
//! real commit-reveal sessions and assignments, so long Monte Carlo runs
//! stay cheap.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;

use super::run::party_rng;
use crate::crypto::{commit, verify_open};
use crate::routing::{assign, combine_randomness, quotas, Capacity, Rand, RoutingError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouteSim {
    pub layers: u32,
    /// Every layer has these capacities; ids are reused per layer.
    pub capacities: Vec<Capacity>,
    pub adversarial: BTreeSet<u32>,
    pub messages_per_frame: usize,
    pub routing_entities: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CaptureCount {
    pub messages: u64,
    pub captured: u64,
}

impl RouteSim {
    /// Run `frames` independent time-frames, each seeded from `(seed, frame)`.
    pub fn run(&self, frames: usize, seed: u64) -> Result<CaptureCount, RoutingError> {
        let counts: Result<Vec<CaptureCount>, RoutingError> = (0..frames)
            .into_par_iter()
            .map(|f| self.frame(seed, f as u64))
            .collect();
        Ok(counts?
            .into_iter()
            .fold(CaptureCount::default(), |acc, c| CaptureCount {
                messages: acc.messages + c.messages,
                captured: acc.captured + c.captured,
            }))
    }

    fn frame(&self, seed: u64, frame: u64) -> Result<CaptureCount, RoutingError> {
        let mut rng = party_rng(seed, &format!("route-frame-{frame}"));
        let throughputs: Vec<u64> = self.capacities.iter().map(|c| c.throughput).collect();
        let n = self.messages_per_frame;

        let mut users: Vec<usize> = (0..n).collect();
        users.shuffle(&mut rng);
        let mut batches: Vec<(u32, Vec<usize>)> = Vec::new();
        let mut rest = users.as_slice();
        for (cap, q) in self.capacities.iter().zip(quotas(n, &throughputs)?) {
            let (mine, tail) = rest.split_at(q);
            rest = tail;
            batches.push((cap.mix, mine.to_vec()));
        }
        let mut clean = vec![true; n];
        for layer in 1..=self.layers {
            for (mix, msgs) in &batches {
                if !self.adversarial.contains(mix) {
                    for &m in msgs {
                        clean[m] = false;
                    }
                }
            }
            if layer == self.layers {
                break;
            }
            let mut next: Vec<Vec<usize>> = vec![Vec::new(); self.capacities.len()];
            for (_, msgs) in &mut batches {
                if msgs.is_empty() {
                    continue;
                }
                msgs.shuffle(&mut rng);
                let rand = self.toss(&mut rng);
                let owners = assign(&rand, msgs.len(), &self.capacities)?.owners();
                for (&m, owner) in msgs.iter().zip(owners) {
                    let slot = self
                        .capacities
                        .iter()
                        .position(|c| c.mix == owner)
                        .expect("owner is a target");
                    next[slot].push(m);
                }
            }
            batches = self.capacities.iter().map(|c| c.mix).zip(next).collect();
        }
        Ok(CaptureCount {
            messages: n as u64,
            captured: clean.iter().filter(|&&c| c).count() as u64,
        })
    }

    fn toss<R: RngCore + rand::CryptoRng>(&self, rng: &mut R) -> Rand {
        let opened: Vec<Rand> = (0..self.routing_entities)
            .map(|_| {
                let mut r: Rand = [0; 32];
                rng.fill_bytes(&mut r);
                let (c, opening) = commit(&r, rng);
                debug_assert!(verify_open(&c.value, &opening));
                r
            })
            .collect();
        combine_randomness(&opened)
    }
}
