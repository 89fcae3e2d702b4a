//! Adversary strategies: who gets corrupted and when, how corrupted replicas
//! behave, and how long each message takes.
//!
//! Delay requests are advisory; the simulator clamps them into the partial
//! synchrony bound. Corrupted replicas can only sign with their own keys.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ba;
use crate::message::{Attachment, Message};
use crate::replica::{leader_of, ActionSet, Dest, Replica};
use crate::types::{
    validate_block, Block, BlockPayload, Mode, ProtocolParams, ReplicaId, Request, Time, ValidationMode,
    MAX_REQUESTS_PER_BLOCK,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    /// No corruptions, every message takes one tick.
    None,
    /// The f leaders of the next views go silent.
    SilentLeaders,
    /// Corrupted leaders split each proposal between two halves of the replicas.
    EquivocatingLeader,
    /// Pre-GST messages held until GST+Δ, post-GST messages take exactly Δ.
    MaxDelay,
    /// f corrupted replicas replace every vote with garbage.
    VoteWithholder,
    /// Before GST only a fast set of n−f replicas talks promptly.
    EpochDesync,
}

pub const CATALOG: [StrategyKind; 6] = [
    StrategyKind::None,
    StrategyKind::SilentLeaders,
    StrategyKind::EquivocatingLeader,
    StrategyKind::MaxDelay,
    StrategyKind::VoteWithholder,
    StrategyKind::EpochDesync,
];

pub fn strategy_catalog() -> &'static [StrategyKind] {
    &CATALOG
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::None => "none",
            StrategyKind::SilentLeaders => "silent_leaders",
            StrategyKind::EquivocatingLeader => "equivocating_leader",
            StrategyKind::MaxDelay => "max_delay",
            StrategyKind::VoteWithholder => "vote_withholder",
            StrategyKind::EpochDesync => "epoch_desync",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown strategy `{0}`")]
pub struct UnknownStrategy(pub String);

impl FromStr for StrategyKind {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CATALOG
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownStrategy(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Byzantine {
    /// Sends nothing, ignores everything.
    Silent,
    /// Honest core, but every proposal is split in two.
    Equivocate,
    /// Honest core, but votes become garbage.
    WithholdVotes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Delay {
    After(Time),
    /// As late as the adversary likes; the simulator clamps it.
    Forever,
}

pub struct Adversary {
    kind: StrategyKind,
    params: ProtocolParams,
    mode: Mode,
    gst: Time,
    rng: ChaCha8Rng,
    slow: BTreeSet<ReplicaId>,
    alt_counter: u64,
}

impl fmt::Debug for Adversary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Adversary").field("kind", &self.kind).finish_non_exhaustive()
    }
}

fn name_seed(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

impl Adversary {
    pub fn new(kind: StrategyKind, params: ProtocolParams, mode: Mode, gst: Time, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_seed(kind.name()));
        let mut slow = BTreeSet::new();
        if kind == StrategyKind::EpochDesync {
            let mut ids: Vec<u32> = (0..params.n).collect();
            ids.shuffle(&mut rng);
            slow = ids.into_iter().take(params.f as usize).map(ReplicaId).collect();
        }
        Adversary { kind, params, mode, gst, rng, slow, alt_counter: 0 }
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn behavior(&self) -> Byzantine {
        match self.kind {
            StrategyKind::EquivocatingLeader => Byzantine::Equivocate,
            StrategyKind::VoteWithholder => Byzantine::WithholdVotes,
            _ => Byzantine::Silent,
        }
    }

    /// Leaders of the first `count` distinct upcoming views after `pos`.
    fn upcoming_leaders(&self, pos: (u64, u64, Option<u64>), count: usize) -> Vec<ReplicaId> {
        let f = self.params.f as u64;
        let (se, mut e, v) = pos;
        let mut next = if e == 0 {
            e = 1;
            0
        } else {
            v.map_or(0, |x| x + 1)
        };
        let mut out = Vec::new();
        for _ in 0..(4 * (f + 1) + 4) {
            if out.len() == count {
                break;
            }
            if next > f {
                e += 1;
                next = 0;
            }
            let l = leader_of(self.mode, se, e, next, &self.params);
            if !out.contains(&l) {
                out.push(l);
            }
            next += 1;
        }
        out
    }

    /// Corruptions fixed before the run starts, as (replica, time).
    pub fn corruption_plan(&mut self) -> Vec<(ReplicaId, Time)> {
        let f = self.params.f as usize;
        match self.kind {
            StrategyKind::SilentLeaders if self.gst == 0 => {
                self.upcoming_leaders((1, 0, None), f).into_iter().map(|r| (r, 0)).collect()
            }
            StrategyKind::EquivocatingLeader => {
                self.upcoming_leaders((1, 0, None), f).into_iter().map(|r| (r, 0)).collect()
            }
            StrategyKind::VoteWithholder => {
                let mut ids: Vec<u32> = (0..self.params.n).collect();
                ids.shuffle(&mut self.rng);
                let mut pick: Vec<ReplicaId> = ids.into_iter().take(f).map(ReplicaId).collect();
                pick.sort();
                pick.into_iter().map(|r| (r, 0)).collect()
            }
            _ => Vec::new(),
        }
    }

    /// Corruptions decided at GST, given the positions of correct replicas.
    pub fn at_gst(&mut self, positions: &[(ReplicaId, (u64, u64, Option<u64>))]) -> Vec<ReplicaId> {
        if self.kind != StrategyKind::SilentLeaders || self.gst == 0 {
            return Vec::new();
        }
        let Some(top) = positions.iter().map(|(_, p)| *p).max() else {
            return Vec::new();
        };
        self.upcoming_leaders(top, self.params.f as usize)
    }

    fn uniform(&mut self, lo: Time, hi: Time) -> Delay {
        let lo = lo.max(1);
        Delay::After(self.rng.gen_range(lo..=hi.max(lo)))
    }

    pub fn delay(&mut self, now: Time, from: ReplicaId, to: ReplicaId) -> Delay {
        let d = self.params.delta;
        let pre = now < self.gst;
        match self.kind {
            StrategyKind::None => Delay::After(1),
            StrategyKind::SilentLeaders if pre => self.uniform(1, d),
            StrategyKind::SilentLeaders => self.uniform(d / 2, d),
            StrategyKind::MaxDelay if pre => Delay::Forever,
            StrategyKind::MaxDelay => Delay::After(d),
            StrategyKind::EpochDesync if pre => {
                if self.slow.contains(&from) || self.slow.contains(&to) {
                    Delay::Forever
                } else {
                    self.uniform(1, d / 2)
                }
            }
            StrategyKind::EquivocatingLeader | StrategyKind::VoteWithholder | StrategyKind::EpochDesync => {
                self.uniform(1, d)
            }
        }
    }

    /// Network sends of a corrupted replica that still runs the honest core.
    pub fn rewrite(&mut self, replica: &Replica, behavior: Byzantine, actions: &ActionSet) -> Vec<(ReplicaId, Arc<Message>)> {
        let me = replica.id();
        let others: Vec<ReplicaId> = (0..self.params.n).map(ReplicaId).filter(|r| *r != me).collect();
        let mut out = Vec::new();
        for s in &actions.sends {
            let targets = match s.dest {
                Dest::One(r) => vec![r],
                Dest::Broadcast => others.clone(),
            };
            match (&*s.msg, behavior) {
                (Message::Vote(_), Byzantine::WithholdVotes) => {
                    let junk = Arc::new(Message::Garbage(vec![0xde, 0xad]));
                    out.extend(targets.into_iter().map(|r| (r, junk.clone())));
                }
                (Message::Proposal { block, vc, attachment }, Byzantine::Equivocate) if s.dest == Dest::Broadcast => {
                    let alt = self.alternative(replica, block).map(|(b, att)| {
                        Arc::new(Message::Proposal {
                            block: b,
                            vc: vc.clone(),
                            attachment: match attachment {
                                Attachment::State(st) => Attachment::State(st.clone()),
                                _ => att,
                            },
                        })
                    });
                    let half = targets.len() / 2;
                    for (i, r) in targets.into_iter().enumerate() {
                        match &alt {
                            Some(a) if i >= half => out.push((r, a.clone())),
                            _ => out.push((r, s.msg.clone())),
                        }
                    }
                }
                _ => out.extend(targets.into_iter().map(|r| (r, s.msg.clone()))),
            }
        }
        out
    }

    fn fresh_requests(&mut self, me: ReplicaId) -> Vec<Request> {
        (0..MAX_REQUESTS_PER_BLOCK)
            .map(|_| {
                self.alt_counter += 1;
                Request((1 << 63) | ((me.0 as u64) << 40) | self.alt_counter)
            })
            .collect()
    }

    /// A second valid block for the same round: same parent with a different
    /// payload if the rules allow one, otherwise the grandparent as parent.
    fn alternative(&mut self, replica: &Replica, honest: &Block) -> Option<(Arc<Block>, Attachment)> {
        let k = replica.knowledge();
        let crypto = replica.crypto();
        let params = replica.params();
        let key = crypto.keypair(replica.id());
        let parent = k.block(&honest.parent?)?.clone();
        let mut candidates: Vec<(Arc<Block>, BlockPayload)> = Vec::new();
        match self.mode {
            Mode::Smr => candidates.push((parent.clone(), BlockPayload::Requests(self.fresh_requests(replica.id())))),
            Mode::SuperEpoch if parent.is_genesis() || parent.round.super_epoch < honest.round.super_epoch => {
                candidates.push((parent.clone(), BlockPayload::Requests(self.fresh_requests(replica.id()))))
            }
            Mode::Ba if parent.is_genesis() => {
                let inputs: Vec<_> = replica.inputs().values().rev().take(params.quorum() as usize).cloned().collect();
                if let Ok(decision) = ba::decision_value(&inputs, params, crypto) {
                    candidates.push((parent.clone(), BlockPayload::BaInputs { inputs, decision }));
                }
            }
            _ => {}
        }
        if let Some(gp) = parent.parent.and_then(|h| k.block(&h).cloned()) {
            let payload = match self.mode {
                Mode::Smr => Some(BlockPayload::Requests(self.fresh_requests(replica.id()))),
                Mode::SuperEpoch if !gp.is_genesis() && gp.round.super_epoch == honest.round.super_epoch => {
                    Some(BlockPayload::Requests(gp.requests().to_vec()))
                }
                Mode::SuperEpoch => Some(BlockPayload::Requests(self.fresh_requests(replica.id()))),
                Mode::Ba if gp.is_genesis() => {
                    ba::genesis_child_payload(replica.inputs(), params, crypto)
                }
                Mode::Ba => gp.decision().map(BlockPayload::BaDecision),
            };
            if let Some(p) = payload {
                candidates.push((gp, p));
            }
        }
        for (par, payload) in candidates {
            let b = Block::propose(crypto, &key, &par.hash, honest.round, payload);
            if b.hash == honest.hash {
                continue;
            }
            let vm = match self.mode {
                Mode::Smr => ValidationMode::Smr,
                Mode::Ba => ValidationMode::Ba,
                Mode::SuperEpoch => ValidationMode::SuperEpoch(k.ledger()),
            };
            if validate_block(&b, k.store(), vm, crypto, params).is_valid() {
                let att = match k.best_qc(&par.hash) {
                    Some(q) if !par.is_genesis() => Attachment::Certified { block: par.clone(), qc: q.clone() },
                    _ => Attachment::None,
                };
                return Some((Arc::new(b), att));
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: u32) -> ProtocolParams {
        ProtocolParams::new(n, ProtocolParams::default_f(n), 10, 256).unwrap()
    }

    #[test]
    fn names_round_trip_and_unknown_rejected() {
        for k in strategy_catalog() {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), *k);
        }
        assert_eq!("bogus".parse::<StrategyKind>(), Err(UnknownStrategy("bogus".into())));
    }

    #[test]
    fn silent_leaders_at_gst_zero_take_early_leaders() {
        let mut a = Adversary::new(StrategyKind::SilentLeaders, params(7), Mode::Smr, 0, 1);
        assert_eq!(a.corruption_plan(), vec![(ReplicaId(1), 0), (ReplicaId(2), 0)]);
        let mut later = Adversary::new(StrategyKind::SilentLeaders, params(7), Mode::Smr, 100, 1);
        assert!(later.corruption_plan().is_empty());
        // from epoch 3 view 1 the next views are (3,2) and (4,0)
        let picked = later.at_gst(&[(ReplicaId(0), (1, 3, Some(1))), (ReplicaId(3), (1, 2, Some(2)))]);
        assert_eq!(picked, vec![ReplicaId(5), ReplicaId(4)]);
    }

    #[test]
    fn corruption_count_never_exceeds_f() {
        for n in [4, 7, 10, 13, 16] {
            for k in strategy_catalog() {
                for seed in 0..5 {
                    let mut a = Adversary::new(*k, params(n), Mode::Smr, 0, seed);
                    let plan = a.corruption_plan();
                    assert!(plan.len() <= params(n).f as usize);
                    let distinct: BTreeSet<_> = plan.iter().map(|(r, _)| *r).collect();
                    assert_eq!(distinct.len(), plan.len());
                }
            }
        }
    }

    #[test]
    fn max_delay_requests() {
        let mut a = Adversary::new(StrategyKind::MaxDelay, params(4), Mode::Smr, 100, 1);
        assert_eq!(a.delay(5, ReplicaId(0), ReplicaId(1)), Delay::Forever);
        assert_eq!(a.delay(150, ReplicaId(0), ReplicaId(1)), Delay::After(10));
    }
}
