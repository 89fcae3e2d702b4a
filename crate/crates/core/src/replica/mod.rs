//! The protocol state machine of one replica.
//!
//! [`Replica::step`] consumes one event and returns everything the replica
//! wants done: network sends, timer requests, confirmations and transition
//! notes. Messages a replica sends to itself are handled inside the same step.

mod knowledge;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::rc::Rc;
use std::sync::Arc;

pub use knowledge::Knowledge;

use crate::ba;
use crate::crypto::{Crypto, Digest, KeyPair, Signature};
use crate::message::{Attachment, Message};
use crate::super_epoch::{self, RequestSource};
use crate::types::{
    epoch_message_bytes, view_message_bytes, BaInput, Block, BlockPayload, CertKind, Certificate, Mode,
    ProtocolParams, ReplicaId, RoundId, Time, Validity, Value, Vote,
};

/// Which QC a stage-1 vote compares the proposal's justification against when
/// the proposal does not extend the lock.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum VoteRule {
    /// Highest QC this replica has seen.
    #[default]
    Literal,
    /// The QC that justified the current lock.
    LockQc,
}

#[derive(Clone, Debug)]
pub struct ReplicaConfig {
    pub mode: Mode,
    pub vote_rule: VoteRule,
    /// Agreement input; required in BA mode.
    pub input: Option<Value>,
}

#[derive(Clone, Debug)]
pub enum ReplicaEvent {
    Start,
    Deliver { from: ReplicaId, msg: Arc<Message> },
    Timer(TimerTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TimerTag {
    /// Personal timer reaches 12·v·Δ; `view` = f+1 is the epoch trigger.
    Trigger { super_epoch: u64, epoch: u64, view: u64 },
    /// BA leader's Δ grace period for proposing.
    ProposeRetry { super_epoch: u64, epoch: u64, view: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dest {
    One(ReplicaId),
    /// Every other replica; the self copy is handled locally.
    Broadcast,
}

#[derive(Clone, Debug)]
pub struct Outgoing {
    pub dest: Dest,
    pub msg: Arc<Message>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Note {
    WishEpoch(RoundId),
    EnterEpoch(RoundId),
    WishView(RoundId),
    EnterView(RoundId),
    EnterSuperEpoch(RoundId),
    /// A leader gave up proposing in this view.
    Omitted(RoundId),
    Dropped { from: ReplicaId, kind: &'static str, reason: &'static str },
}

#[derive(Clone, Debug, Default)]
pub struct ActionSet {
    pub sends: Vec<Outgoing>,
    /// Absolute fire times.
    pub timers: Vec<(Time, TimerTag)>,
    /// Newly confirmed blocks, ancestors first.
    pub confirmations: Vec<(Digest, RoundId)>,
    pub notes: Vec<Note>,
    pub terminated: Option<Value>,
}

/// 12·v·Δ.
pub fn trigger_time(v: u64, params: &ProtocolParams) -> Time {
    12 * v * params.delta
}

/// Leaders of epoch `e`: (e+j) mod n for j in 0..=f.
pub fn leaders_of_epoch(e: u64, params: &ProtocolParams) -> Vec<ReplicaId> {
    (0..=params.f as u64).map(|j| ReplicaId(((e + j) % params.n as u64) as u32)).collect()
}

/// Leader of view `v` of epoch `e` (of super-epoch `se` in that mode).
pub fn leader_of(mode: Mode, se: u64, e: u64, v: u64, params: &ProtocolParams) -> ReplicaId {
    match mode {
        Mode::SuperEpoch => super_epoch::leader(se, e, v, params),
        _ => ReplicaId(((e + v) % params.n as u64) as u32),
    }
}

#[derive(Debug, Default)]
struct ViewState {
    chosen: Option<Digest>,
    stage1_done: bool,
    voted: [bool; 3],
}

#[derive(Debug, Default)]
struct LeaderState {
    vc: Option<Certificate>,
    proposal: Option<Arc<Block>>,
    votes: [Vec<Signature>; 3],
    qcs_formed: u8,
    deadline: Option<Time>,
    omitted: bool,
}

type EpochKey = (u64, u64);
type ViewKey = (u64, u64, u64);

pub struct Replica {
    id: ReplicaId,
    params: ProtocolParams,
    crypto: Rc<Crypto>,
    key: KeyPair,
    cfg: ReplicaConfig,
    started: bool,
    terminated: Option<Value>,
    k: Knowledge,

    se: u64,
    epoch: u64,
    view: Option<u64>,
    wished_epoch: EpochKey,
    wished_view: Option<u64>,
    timer_origin: Time,
    lock: Digest,
    lock_qc: Certificate,

    epoch_msgs: BTreeMap<EpochKey, Vec<Signature>>,
    ecs: BTreeMap<EpochKey, Certificate>,
    view_msgs: BTreeMap<ViewKey, Vec<Signature>>,
    vcs: BTreeMap<ViewKey, Certificate>,
    proposals: BTreeMap<ViewKey, Vec<Arc<Block>>>,
    vs: ViewState,
    ls: LeaderState,
    inputs: BTreeMap<ReplicaId, BaInput>,
    requests: RequestSource,
    announced: BTreeSet<u64>,

    now: Time,
    out: ActionSet,
    inbox: VecDeque<Arc<Message>>,
}

impl std::fmt::Debug for Replica {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Replica")
            .field("id", &self.id)
            .field("se", &self.se)
            .field("epoch", &self.epoch)
            .field("view", &self.view)
            .finish_non_exhaustive()
    }
}

impl Replica {
    pub fn new(
        id: ReplicaId,
        params: ProtocolParams,
        crypto: Rc<Crypto>,
        genesis: Arc<Block>,
        cfg: ReplicaConfig,
    ) -> Self {
        let key = crypto.keypair(id);
        let lock = genesis.hash;
        let lock_qc = Certificate::genesis_qc(lock);
        Replica {
            id,
            params,
            key,
            cfg,
            started: false,
            terminated: None,
            k: Knowledge::new(genesis),
            se: 1,
            epoch: 0,
            view: None,
            wished_epoch: (1, 0),
            wished_view: None,
            timer_origin: 0,
            lock,
            lock_qc,
            epoch_msgs: BTreeMap::new(),
            ecs: BTreeMap::new(),
            view_msgs: BTreeMap::new(),
            vcs: BTreeMap::new(),
            proposals: BTreeMap::new(),
            vs: ViewState::default(),
            ls: LeaderState::default(),
            inputs: BTreeMap::new(),
            requests: RequestSource::new(id),
            announced: BTreeSet::new(),
            now: 0,
            out: ActionSet::default(),
            inbox: VecDeque::new(),
            crypto,
        }
    }

    pub fn id(&self) -> ReplicaId {
        self.id
    }

    pub fn mode(&self) -> Mode {
        self.cfg.mode
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn crypto(&self) -> &Rc<Crypto> {
        &self.crypto
    }

    /// (super-epoch, epoch, view). Epoch 0 means not yet in any epoch.
    pub fn position(&self) -> (u64, u64, Option<u64>) {
        (self.se, self.epoch, self.view)
    }

    pub fn lock(&self) -> Digest {
        self.lock
    }

    pub fn knowledge(&self) -> &Knowledge {
        &self.k
    }

    pub fn inputs(&self) -> &BTreeMap<ReplicaId, BaInput> {
        &self.inputs
    }

    pub fn output(&self) -> Option<Value> {
        self.terminated
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated.is_some()
    }

    /// Blocks holding a stage-3 QC, closed under known predecessors.
    pub fn confirmed_blocks(&self) -> BTreeSet<Digest> {
        self.k.confirmed().iter().copied().collect()
    }

    pub fn step(&mut self, event: ReplicaEvent, now: Time) -> ActionSet {
        self.now = now;
        if self.terminated.is_some() {
            return ActionSet::default();
        }
        match event {
            ReplicaEvent::Start => self.start(),
            ReplicaEvent::Deliver { from, msg } => self.handle(from, &msg),
            ReplicaEvent::Timer(_) => {}
        }
        loop {
            while let Some(m) = self.inbox.pop_front() {
                if self.terminated.is_some() {
                    self.inbox.clear();
                    break;
                }
                self.handle(self.id, &m);
            }
            if self.terminated.is_some() || (!self.advance() && self.inbox.is_empty()) {
                break;
            }
        }
        self.out.confirmations.extend(self.k.drain_confirmed());
        std::mem::take(&mut self.out)
    }

    fn start(&mut self) {
        if self.started {
            return;
        }
        self.started = true;
        if self.cfg.mode == Mode::Ba {
            if let Some(v) = self.cfg.input {
                let input = BaInput::new(&self.crypto, &self.key, v);
                self.broadcast(Message::Input(input));
            }
        }
        self.wish_epoch(1);
    }

    fn leader(&self, se: u64, e: u64, v: u64) -> ReplicaId {
        leader_of(self.cfg.mode, se, e, v, &self.params)
    }

    fn is_epoch_leader(&self, se: u64, e: u64) -> bool {
        (0..=self.params.f as u64).any(|v| self.leader(se, e, v) == self.id)
    }

    fn quorum(&self) -> usize {
        self.params.quorum() as usize
    }

    fn drop_note(&mut self, from: ReplicaId, kind: &'static str, reason: &'static str) {
        self.out.notes.push(Note::Dropped { from, kind, reason });
    }

    fn send_to(&mut self, to: ReplicaId, msg: Message) {
        let msg = Arc::new(msg);
        if to == self.id {
            self.inbox.push_back(msg);
        } else {
            self.out.sends.push(Outgoing { dest: Dest::One(to), msg });
        }
    }

    fn broadcast(&mut self, msg: Message) {
        let msg = Arc::new(msg);
        self.inbox.push_back(msg.clone());
        self.out.sends.push(Outgoing { dest: Dest::Broadcast, msg });
    }

    fn attachment(&mut self) -> Attachment {
        match self.cfg.mode {
            Mode::Smr => Attachment::State(self.k.snapshot()),
            _ => {
                let q = self.k.highest_qc().clone();
                match q.block.and_then(|h| self.k.block(&h).cloned()) {
                    Some(b) if !q.is_genesis() => Attachment::Certified { block: b, qc: q },
                    _ => Attachment::None,
                }
            }
        }
    }

    fn merge(&mut self, att: &Attachment) {
        match att {
            Attachment::None => {}
            Attachment::State(st) => self.k.merge_state(st, self.cfg.mode, &self.crypto, &self.params),
            Attachment::Certified { block, qc } => {
                self.k.admit_certified(block, qc, &self.crypto, &self.params);
            }
        }
    }

    fn handle(&mut self, from: ReplicaId, msg: &Message) {
        let kappa = self.crypto.kappa();
        match msg {
            Message::Epoch { super_epoch, epoch, sig } => {
                let key = (*super_epoch, *epoch);
                if !self.is_epoch_leader(key.0, key.1) || key <= (self.se, self.epoch) {
                    return;
                }
                let ok = sig.signer == from
                    && self.crypto.verify(
                        &self.crypto.public_key(from),
                        &epoch_message_bytes(key.0, key.1, kappa),
                        sig,
                    );
                if !ok {
                    return self.drop_note(from, msg.kind(), "bad-signature");
                }
                let v = self.epoch_msgs.entry(key).or_default();
                if !v.iter().any(|s| s.signer == from) {
                    v.push(*sig);
                }
            }
            Message::EpochCert(c) => {
                let key = c.round.epoch_key();
                if c.kind != CertKind::Ec || key <= (self.se, self.epoch) || self.ecs.contains_key(&key) {
                    return;
                }
                if !c.verify(&self.crypto, &self.params, &self.k.genesis()) {
                    return self.drop_note(from, msg.kind(), "bad-certificate");
                }
                self.ecs.insert(key, c.clone());
            }
            Message::View { super_epoch, epoch, view, sig, attachment } => {
                let ok = sig.signer == from
                    && *view <= self.params.f as u64
                    && self.crypto.verify(
                        &self.crypto.public_key(from),
                        &view_message_bytes(*super_epoch, *epoch, *view, kappa),
                        sig,
                    );
                if !ok {
                    return self.drop_note(from, msg.kind(), "bad-signature");
                }
                self.merge(attachment);
                let key = (*super_epoch, *epoch, *view);
                if self.leader(key.0, key.1, key.2) == self.id && (key.0, key.1) >= (self.se, self.epoch) {
                    let v = self.view_msgs.entry(key).or_default();
                    if !v.iter().any(|s| s.signer == from) {
                        v.push(*sig);
                    }
                }
            }
            Message::Proposal { block, vc, attachment } => {
                let r = block.round;
                let shape = vc.kind == CertKind::Vc
                    && vc.round == r
                    && r.view <= self.params.f as u64
                    && block.proposer == self.leader(r.super_epoch, r.epoch, r.view);
                if !shape {
                    return self.drop_note(from, msg.kind(), "malformed");
                }
                let key = r.view_key();
                if (key.0, key.1) < (self.se, self.epoch) {
                    return;
                }
                if !self.vcs.contains_key(&key) {
                    if !vc.verify(&self.crypto, &self.params, &self.k.genesis()) {
                        return self.drop_note(from, msg.kind(), "bad-certificate");
                    }
                    self.vcs.insert(key, vc.clone());
                }
                self.merge(attachment);
                let list = self.proposals.entry(key).or_default();
                if !list.iter().any(|b| b.hash == block.hash) {
                    list.push(block.clone());
                }
            }
            Message::Vote(v) => {
                let Some(p) = &self.ls.proposal else {
                    return;
                };
                if v.block != p.hash || v.round.view_key() != p.round.view_key() || v.voter != from {
                    return;
                }
                let stage = v.round.stage;
                if !(1..=3).contains(&stage) || !v.verify(&self.crypto) {
                    return self.drop_note(from, msg.kind(), "bad-signature");
                }
                let list = &mut self.ls.votes[stage as usize - 1];
                if !list.iter().any(|s| s.signer == from) {
                    list.push(v.signature);
                }
            }
            Message::Qc(c) => {
                if self.k.learn_qc(c, &self.crypto, &self.params).is_err() {
                    self.drop_note(from, msg.kind(), "bad-certificate");
                }
            }
            Message::Confirmed { block, qc } => {
                if qc.round.stage != 3 || !self.k.admit_certified(block, qc, &self.crypto, &self.params) {
                    self.drop_note(from, msg.kind(), "bad-certificate");
                }
            }
            Message::Input(i) => {
                if self.cfg.mode != Mode::Ba || self.inputs.contains_key(&i.replica) {
                    return;
                }
                if i.replica != from || !i.verify(&self.crypto) {
                    return self.drop_note(from, msg.kind(), "bad-signature");
                }
                self.inputs.insert(i.replica, i.clone());
            }
            Message::Garbage(_) => self.drop_note(from, msg.kind(), "unparseable"),
        }
    }

    fn elapsed(&self) -> Time {
        self.now.saturating_sub(self.timer_origin)
    }

    /// In-epoch instructions run only while no higher epoch has been wished.
    fn epoch_active(&self) -> bool {
        self.epoch >= 1 && self.wished_epoch <= (self.se, self.epoch)
    }

    /// One pass over all instructions in priority order. Returns true if
    /// anything changed.
    fn advance(&mut self) -> bool {
        if !self.started {
            return false;
        }
        match self.cfg.mode {
            Mode::Ba => {
                if let Some(&h) = self.k.first_confirmed().values().next() {
                    self.terminate(h);
                    return false;
                }
            }
            Mode::SuperEpoch => {
                if self.advance_super_epoch() {
                    return true;
                }
            }
            Mode::Smr => {}
        }
        self.enter_epoch()
            || self.wish_next_epoch()
            || self.wish_view()
            || self.enter_view()
            || self.lead()
            || self.vote()
            || self.aggregate()
    }

    fn terminate(&mut self, h: Digest) {
        let block = self.k.block(&h).cloned().expect("confirmed block is stored");
        let qc = self.k.best_qc(&h).cloned().expect("confirmed block has a QC");
        let value = block.decision().unwrap_or_default();
        self.broadcast(Message::Confirmed { block, qc });
        self.inbox.clear();
        self.terminated = Some(value);
        self.out.terminated = Some(value);
    }

    fn advance_super_epoch(&mut self) -> bool {
        let fresh: Vec<(u64, Digest)> = self
            .k
            .first_confirmed()
            .iter()
            .filter(|(s, _)| !self.announced.contains(s))
            .map(|(s, h)| (*s, *h))
            .collect();
        if fresh.is_empty() {
            return false;
        }
        for (s, h) in &fresh {
            self.announced.insert(*s);
            let block = self.k.block(h).cloned().expect("confirmed block is stored");
            let qc = self.k.best_qc(h).cloned().expect("confirmed block has a QC");
            self.broadcast(Message::Confirmed { block, qc });
        }
        let top = *self.k.first_confirmed().keys().next_back().expect("nonempty");
        if top >= self.se {
            self.se = top + 1;
            self.out.notes.push(Note::EnterSuperEpoch(RoundId::new(self.se, 0, 0)));
            self.epoch = 0;
            self.view = None;
            self.wished_view = None;
            self.vs = ViewState::default();
            self.ls = LeaderState::default();
            self.prune();
            self.wish_epoch(1);
        }
        true
    }

    fn prune(&mut self) {
        let ek = (self.se, self.epoch);
        self.epoch_msgs = self.epoch_msgs.split_off(&(ek.0, ek.1 + 1));
        self.ecs = self.ecs.split_off(&(ek.0, ek.1 + 1));
        let vk = (ek.0, ek.1, 0);
        self.view_msgs = self.view_msgs.split_off(&vk);
        self.vcs = self.vcs.split_off(&vk);
        self.proposals = self.proposals.split_off(&vk);
    }

    fn wish_epoch(&mut self, e: u64) {
        let key = (self.se, e);
        if key <= self.wished_epoch {
            return;
        }
        self.wished_epoch = key;
        self.out.notes.push(Note::WishEpoch(RoundId::new(key.0, key.1, 0)));
        let sig = self.crypto.sign(&self.key, &epoch_message_bytes(key.0, key.1, self.crypto.kappa()));
        for v in 0..=self.params.f as u64 {
            let to = self.leader(key.0, key.1, v);
            self.send_to(to, Message::Epoch { super_epoch: key.0, epoch: key.1, sig });
        }
    }

    fn enter_epoch(&mut self) -> bool {
        let lo = (self.se, self.epoch + 1);
        let hi = (self.se, u64::MAX);
        let from_ec = self.ecs.range(lo..=hi).next_back().map(|(k, _)| k.1);
        let q = self.quorum();
        let formable = self
            .epoch_msgs
            .range(lo..=hi)
            .rev()
            .find(|(k, v)| v.len() >= q && self.is_epoch_leader(k.0, k.1))
            .map(|(k, _)| k.1);
        let target = match (from_ec, formable) {
            (None, None) => return false,
            (a, b) => a.max(b).expect("one is set"),
        };
        let ec = match self.ecs.get(&(self.se, target)) {
            Some(c) => c.clone(),
            None => {
                let shares = &self.epoch_msgs[&(self.se, target)];
                let sig = self.crypto.aggregate(shares, &self.params).expect("quorum of distinct shares");
                Certificate { kind: CertKind::Ec, round: RoundId::new(self.se, target, 0), block: None, sig: Some(sig) }
            }
        };
        self.epoch = target;
        self.view = None;
        self.wished_view = None;
        self.timer_origin = self.now;
        if self.wished_epoch < (self.se, target) {
            self.wished_epoch = (self.se, target);
        }
        self.vs = ViewState::default();
        self.ls = LeaderState::default();
        self.prune();
        self.out.notes.push(Note::EnterEpoch(RoundId::new(self.se, target, 0)));
        self.broadcast(Message::EpochCert(ec));
        for v in 1..=self.params.f as u64 + 1 {
            let tag = TimerTag::Trigger { super_epoch: self.se, epoch: target, view: v };
            self.out.timers.push((self.now + trigger_time(v, &self.params), tag));
        }
        self.send_view_message(0);
        true
    }

    fn wish_next_epoch(&mut self) -> bool {
        if !self.epoch_active() {
            return false;
        }
        let f = self.params.f as u64;
        if self.k.view_confirmed(self.se, self.epoch, f) || self.elapsed() >= trigger_time(f + 1, &self.params) {
            self.wish_epoch(self.epoch + 1);
            return true;
        }
        false
    }

    fn send_view_message(&mut self, v: u64) {
        self.wished_view = Some(v);
        let r = RoundId::new(self.se, self.epoch, v);
        self.out.notes.push(Note::WishView(r));
        let sig = self.crypto.sign(&self.key, &view_message_bytes(r.super_epoch, r.epoch, v, self.crypto.kappa()));
        let attachment = self.attachment();
        let to = self.leader(r.super_epoch, r.epoch, v);
        self.send_to(to, Message::View { super_epoch: r.super_epoch, epoch: r.epoch, view: v, sig, attachment });
    }

    fn wish_view(&mut self) -> bool {
        if !self.epoch_active() {
            return false;
        }
        let by_timer = self.elapsed() / trigger_time(1, &self.params);
        let target = (1..=self.params.f as u64)
            .rev()
            .find(|&v| v <= by_timer || self.k.view_confirmed(self.se, self.epoch, v - 1));
        let Some(v) = target else {
            return false;
        };
        if self.wished_view.is_some_and(|w| w >= v) || self.view.is_some_and(|c| c >= v) {
            return false;
        }
        self.send_view_message(v);
        true
    }

    fn may_enter_view(&self, v: u64) -> bool {
        self.view.is_none_or(|c| c < v) && self.wished_view.is_none_or(|w| w <= v)
    }

    fn enter_view(&mut self) -> bool {
        if !self.epoch_active() {
            return false;
        }
        let (se, e) = (self.se, self.epoch);
        let q = self.quorum();
        let as_leader = self
            .view_msgs
            .range((se, e, 0)..=(se, e, u64::MAX))
            .rev()
            .find(|(k, s)| s.len() >= q && self.leader(se, e, k.2) == self.id && self.may_enter_view(k.2))
            .map(|(k, _)| k.2);
        let by_vc = self
            .vcs
            .range((se, e, 0)..=(se, e, u64::MAX))
            .rev()
            .find(|(k, _)| self.leader(se, e, k.2) != self.id && self.may_enter_view(k.2))
            .map(|(k, _)| k.2);
        let v = match (as_leader, by_vc) {
            (None, None) => return false,
            (a, b) => a.max(b).expect("one is set"),
        };
        self.view = Some(v);
        self.vs = ViewState::default();
        self.ls = LeaderState::default();
        self.proposals = self.proposals.split_off(&(se, e, v));
        self.out.notes.push(Note::EnterView(RoundId::new(se, e, v)));
        if as_leader == Some(v) {
            let shares = &self.view_msgs[&(se, e, v)];
            let sig = self.crypto.aggregate(shares, &self.params).expect("quorum of distinct shares");
            self.ls.vc = Some(Certificate { kind: CertKind::Vc, round: RoundId::new(se, e, v), block: None, sig: Some(sig) });
            self.try_propose();
        }
        true
    }

    /// In-view instructions run only while no higher view or epoch is wished.
    fn view_active(&self) -> Option<u64> {
        let v = self.view?;
        (self.epoch_active() && self.wished_view.is_none_or(|w| w <= v)).then_some(v)
    }

    fn lead(&mut self) -> bool {
        let Some(v) = self.view_active() else {
            return false;
        };
        if self.ls.vc.is_none() || self.ls.proposal.is_some() || self.ls.omitted {
            return false;
        }
        debug_assert_eq!(self.leader(self.se, self.epoch, v), self.id);
        self.try_propose()
    }

    fn payload_for(&mut self, parent: &Block) -> Option<BlockPayload> {
        match self.cfg.mode {
            Mode::Smr => Some(BlockPayload::Requests(self.requests.fresh_batch())),
            Mode::SuperEpoch => {
                if !parent.is_genesis() && parent.round.super_epoch == self.se {
                    Some(BlockPayload::Requests(parent.requests().to_vec()))
                } else {
                    Some(BlockPayload::Requests(self.requests.fresh_batch()))
                }
            }
            Mode::Ba => {
                if parent.is_genesis() {
                    ba::genesis_child_payload(&self.inputs, &self.params, &self.crypto)
                } else {
                    parent.decision().map(BlockPayload::BaDecision)
                }
            }
        }
    }

    /// Proposes on the highest QC's block. In BA mode a leader lacking inputs
    /// waits up to Δ before omitting. Returns true if anything changed.
    fn try_propose(&mut self) -> bool {
        let v = self.view.expect("in a view");
        let q = self.k.highest_qc().clone();
        let parent = self.k.block(&q.block.expect("QC names a block")).cloned().expect("highest QC block is stored");
        let Some(payload) = self.payload_for(&parent) else {
            let tag = TimerTag::ProposeRetry { super_epoch: self.se, epoch: self.epoch, view: v };
            return match self.ls.deadline {
                None => {
                    let at = self.now + self.params.delta;
                    self.ls.deadline = Some(at);
                    self.out.timers.push((at, tag));
                    true
                }
                Some(at) if self.now >= at => {
                    self.ls.omitted = true;
                    self.out.notes.push(Note::Omitted(RoundId::new(self.se, self.epoch, v)));
                    true
                }
                Some(_) => false,
            };
        };
        let round = RoundId::new(self.se, self.epoch, v);
        let block = Arc::new(Block::propose(&self.crypto, &self.key, &parent.hash, round, payload));
        let attachment = match self.cfg.mode {
            Mode::Smr => Attachment::State(self.k.snapshot()),
            _ if parent.is_genesis() => Attachment::None,
            _ => Attachment::Certified { block: parent, qc: q },
        };
        self.ls.proposal = Some(block.clone());
        let vc = self.ls.vc.clone().expect("leader holds the VC");
        self.broadcast(Message::Proposal { block, vc, attachment });
        true
    }

    fn stage1_ok(&self, b: &Digest) -> (bool, Option<Certificate>) {
        if self.k.extends(&self.lock, b) {
            return (true, None);
        }
        let Some(j) = self.k.justify(b) else {
            return (false, None);
        };
        let bar = match self.cfg.vote_rule {
            VoteRule::Literal => self.k.highest_qc().round,
            VoteRule::LockQc => self.lock_qc.round,
        };
        let release = (j.round > self.lock_qc.round).then(|| j.clone());
        (j.round >= bar, release)
    }

    fn cast(&mut self, v: u64, stage: u8, block: Digest) {
        self.vs.voted[stage as usize - 1] = true;
        let round = RoundId::new(self.se, self.epoch, v).with_stage(stage);
        let vote = Vote::new(&self.crypto, &self.key, round, block);
        let to = self.leader(self.se, self.epoch, v);
        self.send_to(to, Message::Vote(vote));
    }

    fn vote(&mut self) -> bool {
        let Some(v) = self.view_active() else {
            return false;
        };
        let key = (self.se, self.epoch, v);
        if self.vs.chosen.is_none() {
            let Some(cands) = self.proposals.get(&key).cloned() else {
                return false;
            };
            let mut keep = Vec::new();
            for b in cands {
                if self.vs.chosen.is_some() {
                    keep.push(b);
                    continue;
                }
                match self.k.admit(&b, self.cfg.mode, &self.crypto, &self.params) {
                    Validity::Valid => self.vs.chosen = Some(b.hash),
                    Validity::Invalid(r) if r.is_retryable() => keep.push(b),
                    Validity::Invalid(_) => self.drop_note(b.proposer, "proposal", "invalid-block"),
                }
            }
            self.proposals.insert(key, keep);
            if self.vs.chosen.is_none() {
                return false;
            }
        }
        let b = self.vs.chosen.expect("chosen");
        if !self.vs.stage1_done {
            self.vs.stage1_done = true;
            let (ok, release) = self.stage1_ok(&b);
            if let Some(j) = release {
                self.lock = j.block.expect("QC names a block");
                self.lock_qc = j;
            }
            if ok {
                self.cast(v, 1, b);
            }
            return true;
        }
        let stage = self.k.best_qc(&b).map_or(0, |q| q.round.stage);
        if stage >= 1 && !self.vs.voted[1] {
            self.cast(v, 2, b);
            return true;
        }
        if stage >= 2 && !self.vs.voted[2] {
            let q = self.k.best_qc(&b).cloned().expect("stage-2 QC present");
            self.lock = b;
            self.lock_qc = q;
            self.cast(v, 3, b);
            return true;
        }
        false
    }

    fn aggregate(&mut self) -> bool {
        if self.view_active().is_none() {
            return false;
        }
        let Some(p) = self.ls.proposal.clone() else {
            return false;
        };
        let next = self.ls.qcs_formed + 1;
        if next > 3 || self.ls.votes[next as usize - 1].len() < self.quorum() {
            return false;
        }
        let sig = self
            .crypto
            .aggregate(&self.ls.votes[next as usize - 1], &self.params)
            .expect("quorum of distinct shares");
        self.ls.qcs_formed = next;
        let qc = Certificate { kind: CertKind::Qc, round: p.round.with_stage(next), block: Some(p.hash), sig: Some(sig) };
        self.broadcast(Message::Qc(qc));
        true
    }
}
