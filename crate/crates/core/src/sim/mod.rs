//! Deterministic discrete-event simulation of n replicas under partial
//! synchrony. A run is a pure function of its [`SimConfig`].

pub mod queue;
pub mod trace;

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::rc::Rc;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adversary::{Adversary, Byzantine, Delay, StrategyKind};
use crate::crypto::{Crypto, CryptoError, Digest};
use crate::message::Message;
use crate::replica::{ActionSet, Dest, Note, Replica, ReplicaConfig, ReplicaEvent, TimerTag, VoteRule};
use crate::types::{BlockPayload, Mode, ProtocolParams, ReplicaId, Time, Value};
use crate::wire::WireSize;

pub use queue::EventQueue;
pub use trace::{Kind, Record, Trace, TraceError, TraceHeader};

/// How BA inputs are assigned to replicas.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum InputSpec {
    AllEqual(u64),
    /// Seeded tokens drawn from a small domain so that values collide.
    #[default]
    Random,
    Explicit(Vec<u64>),
}

impl FromStr for InputSpec {
    type Err = String;

    /// `random`, `all-equal:<token>` (or `same:<token>`) or a comma separated
    /// token list.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "random" {
            return Ok(InputSpec::Random);
        }
        if let Some(t) = s.strip_prefix("all-equal:").or_else(|| s.strip_prefix("same:")) {
            return t.parse().map(InputSpec::AllEqual).map_err(|e| format!("bad input token `{t}`: {e}"));
        }
        s.split(',')
            .map(|t| t.trim().parse::<u64>().map_err(|e| format!("bad input token `{t}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(InputSpec::Explicit)
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub params: ProtocolParams,
    pub mode: Mode,
    pub strategy: StrategyKind,
    pub gst: Time,
    pub horizon: Time,
    pub seed: u64,
    /// Per-replica start times; everyone starts at 0 if empty.
    pub joins: Vec<Time>,
    pub vote_rule: VoteRule,
    pub inputs: InputSpec,
}

impl SimConfig {
    pub fn new(params: ProtocolParams, mode: Mode, strategy: StrategyKind) -> Self {
        SimConfig {
            params,
            mode,
            strategy,
            gst: 0,
            horizon: Self::default_horizon(0, &params),
            seed: 0,
            joins: Vec::new(),
            vote_rule: VoteRule::default(),
            inputs: InputSpec::default(),
        }
    }

    /// GST + 40(f+1)Δ.
    pub fn default_horizon(gst: Time, params: &ProtocolParams) -> Time {
        gst + 40 * (params.f as u64 + 1) * params.delta
    }

    pub fn with_gst(mut self, gst: Time) -> Self {
        self.gst = gst;
        self.horizon = Self::default_horizon(gst, &self.params);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.horizon <= self.gst {
            return bad(format!("horizon {} must exceed gst {}", self.horizon, self.gst));
        }
        if !self.joins.is_empty() {
            if self.joins.len() != self.params.n as usize {
                return bad(format!("{} join times for {} replicas", self.joins.len(), self.params.n));
            }
            if let Some(j) = self.joins.iter().find(|j| **j > self.gst) {
                return bad(format!("join time {j} is after gst {}", self.gst));
            }
        }
        if let InputSpec::Explicit(v) = &self.inputs {
            if self.mode == Mode::Ba && v.len() != self.params.n as usize {
                return bad(format!("{} inputs for {} replicas", v.len(), self.params.n));
            }
        }
        Ok(())
    }

    pub fn join_time(&self, r: ReplicaId) -> Time {
        self.joins.get(r.0 as usize).copied().unwrap_or(0)
    }

    fn input_tokens(&self) -> Vec<u64> {
        let n = self.params.n as usize;
        match &self.inputs {
            InputSpec::AllEqual(t) => vec![*t; n],
            InputSpec::Explicit(v) => v.clone(),
            InputSpec::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x696e_7075_7473);
                (0..n).map(|_| rng.gen_range(1..=3)).collect()
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("hash collision on digest {0}; rerun with a larger kappa")]
    HashCollision(Digest),
}

pub struct RunOutput {
    pub trace: Trace,
    pub replicas: Vec<Replica>,
    pub corrupted: BTreeSet<ReplicaId>,
    pub inputs: Vec<u64>,
}

impl RunOutput {
    pub fn correct(&self) -> impl Iterator<Item = &Replica> + '_ {
        self.replicas.iter().filter(|r| !self.corrupted.contains(&r.id()))
    }
}

#[derive(Debug)]
enum Event {
    Corrupt(ReplicaId),
    Join(ReplicaId),
    Gst,
    Timer(ReplicaId, TimerTag),
    Deliver { to: ReplicaId, from: ReplicaId, sent: Time, msg: Arc<Message> },
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    crypto: Rc<Crypto>,
    replicas: Vec<Replica>,
    byz: Vec<Option<Byzantine>>,
    adv: Adversary,
    queue: EventQueue<Event>,
    records: Vec<Record>,
    seen_blocks: HashSet<Digest>,
    script: Option<VecDeque<Time>>,
}

/// Forces a requested delivery time into [sent, max(sent, gst) + Δ]. The flag
/// says whether the request had to be changed.
pub fn clamp_delivery(sent: Time, gst: Time, delta: u64, requested: Time) -> (Time, bool) {
    let at = requested.clamp(sent, sent.max(gst) + delta);
    (at, at != requested)
}

/// Runs one simulation to its horizon.
pub fn run(cfg: &SimConfig) -> Result<RunOutput, SimError> {
    run_inner(cfg, None)
}

/// Runs with delivery times taken from `schedule`, one absolute time per
/// network send in send order, instead of the adversary's delays.
pub fn run_scripted(cfg: &SimConfig, schedule: Vec<Time>) -> Result<RunOutput, SimError> {
    run_inner(cfg, Some(schedule.into()))
}

/// The delivery schedule of a trace, usable with [`run_scripted`].
pub fn delivery_schedule(trace: &Trace) -> Vec<Time> {
    trace.records.iter().filter(|r| r.kind == Kind::Send).filter_map(|r| r.at).collect()
}

fn run_inner(cfg: &SimConfig, script: Option<VecDeque<Time>>) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let p = cfg.params;
    let crypto = Rc::new(Crypto::new(p.n, p.kappa, cfg.seed)?);
    let genesis = Arc::new(crate::types::Block::genesis(&crypto));
    let inputs = if cfg.mode == Mode::Ba { cfg.input_tokens() } else { Vec::new() };
    let replicas = (0..p.n)
        .map(|i| {
            let rc = ReplicaConfig {
                mode: cfg.mode,
                vote_rule: cfg.vote_rule,
                input: inputs.get(i as usize).map(|t| Value::from_token(*t)),
            };
            Replica::new(ReplicaId(i), p, crypto.clone(), genesis.clone(), rc)
        })
        .collect();
    let mut head = Record::new(0, Kind::Config);
    head.config = Some(TraceHeader {
        n: p.n,
        f: p.f,
        delta: p.delta,
        kappa: p.kappa,
        gst: cfg.gst,
        horizon: cfg.horizon,
        seed: cfg.seed,
        mode: cfg.mode,
        strategy: cfg.strategy.name().to_string(),
        genesis: genesis.hash,
        inputs: inputs.clone(),
    });
    let mut sim = Sim {
        cfg,
        crypto,
        replicas,
        byz: vec![None; p.n as usize],
        adv: Adversary::new(cfg.strategy, p, cfg.mode, cfg.gst, cfg.seed),
        queue: EventQueue::new(),
        records: vec![head],
        seen_blocks: HashSet::new(),
        script,
    };
    sim.seen_blocks.insert(genesis.hash);
    let mut plan = sim.adv.corruption_plan();
    plan.sort_by_key(|(r, t)| (*t, *r));
    for (r, t) in plan {
        sim.queue.push(t, Event::Corrupt(r));
    }
    for i in 0..p.n {
        sim.queue.push(cfg.join_time(ReplicaId(i)), Event::Join(ReplicaId(i)));
    }
    sim.queue.push(cfg.gst, Event::Gst);

    let mut end = cfg.horizon;
    let mut why = "horizon";
    loop {
        match sim.queue.peek_time() {
            Some(t) if t <= cfg.horizon => {}
            Some(_) => break,
            None => {
                end = sim.records.last().map_or(0, |r| r.time);
                why = "quiescent";
                break;
            }
        }
        let (now, _, ev) = sim.queue.pop().expect("peeked");
        sim.process(now, ev);
        if let Some(d) = sim.crypto.collision() {
            return Err(SimError::HashCollision(d));
        }
    }
    let mut last = Record::new(end, Kind::End);
    last.note = Some(why.into());
    sim.records.push(last);
    let corrupted = sim.byz.iter().enumerate().filter(|(_, b)| b.is_some()).map(|(i, _)| ReplicaId(i as u32)).collect();
    Ok(RunOutput { trace: Trace { records: sim.records }, replicas: sim.replicas, corrupted, inputs })
}

impl Sim<'_> {
    fn silent(&self, r: ReplicaId) -> bool {
        self.byz[r.0 as usize] == Some(Byzantine::Silent)
    }

    fn corrupt(&mut self, r: ReplicaId, now: Time) {
        let count = self.byz.iter().filter(|b| b.is_some()).count();
        if self.byz[r.0 as usize].is_some() || count >= self.cfg.params.f as usize {
            return;
        }
        self.byz[r.0 as usize] = Some(self.adv.behavior());
        let mut rec = Record::new(now, Kind::Corrupt);
        rec.from = Some(r.0);
        rec.note = Some(self.adv.kind().name().into());
        self.records.push(rec);
    }

    fn process(&mut self, now: Time, ev: Event) {
        match ev {
            Event::Corrupt(r) => self.corrupt(r, now),
            Event::Gst => {
                self.records.push(Record::new(now, Kind::Gst));
                let positions: Vec<_> = self
                    .replicas
                    .iter()
                    .filter(|r| self.byz[r.id().0 as usize].is_none())
                    .map(|r| (r.id(), r.position()))
                    .collect();
                for r in self.adv.at_gst(&positions) {
                    self.corrupt(r, now);
                }
            }
            Event::Join(r) => {
                if !self.silent(r) {
                    self.step(r, ReplicaEvent::Start, now);
                }
            }
            Event::Timer(r, tag) => {
                if !self.silent(r) {
                    self.step(r, ReplicaEvent::Timer(tag), now);
                }
            }
            Event::Deliver { to, from, sent, msg } => {
                let mut rec = Record::new(now, Kind::Deliver);
                rec.from = Some(from.0);
                rec.to = Some(to.0);
                rec.sent = Some(sent);
                rec.msg = Some(msg.kind().into());
                self.records.push(rec);
                if self.replicas[to.0 as usize].is_terminated() {
                    let mut rec = Record::new(now, Kind::Drop);
                    rec.from = Some(from.0);
                    rec.to = Some(to.0);
                    rec.msg = Some(msg.kind().into());
                    rec.note = Some("terminated".into());
                    self.records.push(rec);
                } else if !self.silent(to) {
                    self.step(to, ReplicaEvent::Deliver { from, msg }, now);
                }
            }
        }
    }

    fn step(&mut self, r: ReplicaId, ev: ReplicaEvent, now: Time) {
        let acts = self.replicas[r.0 as usize].step(ev, now);
        self.apply(r, acts, now);
    }

    fn apply(&mut self, r: ReplicaId, acts: ActionSet, now: Time) {
        for note in &acts.notes {
            let (kind, round) = match note {
                Note::WishEpoch(x) => (Kind::WishEpoch, Some(*x)),
                Note::EnterEpoch(x) => (Kind::EnterEpoch, Some(*x)),
                Note::EnterSuperEpoch(x) => (Kind::EnterSuperEpoch, Some(*x)),
                Note::WishView(x) => (Kind::WishView, Some(*x)),
                Note::EnterView(x) => (Kind::EnterView, Some(*x)),
                Note::Omitted(x) => (Kind::Omit, Some(*x)),
                Note::Dropped { .. } => (Kind::Drop, None),
            };
            let mut rec = Record::new(now, kind);
            rec.round = round;
            match note {
                Note::Dropped { from, kind, reason } => {
                    rec.from = Some(from.0);
                    rec.to = Some(r.0);
                    rec.msg = Some((*kind).into());
                    rec.note = Some((*reason).into());
                }
                _ => rec.from = Some(r.0),
            }
            self.records.push(rec);
        }
        for (h, round) in &acts.confirmations {
            let mut rec = Record::new(now, Kind::Confirm);
            rec.from = Some(r.0);
            rec.block = Some(*h);
            rec.round = Some(*round);
            self.records.push(rec);
        }
        for (at, tag) in &acts.timers {
            self.queue.push(*at, Event::Timer(r, *tag));
        }
        let sends: Vec<(ReplicaId, Arc<Message>)> = match self.byz[r.0 as usize] {
            Some(b) => self.adv.rewrite(&self.replicas[r.0 as usize], b, &acts),
            None => {
                let n = self.cfg.params.n;
                let mut out = Vec::new();
                for s in &acts.sends {
                    match s.dest {
                        Dest::One(to) => out.push((to, s.msg.clone())),
                        Dest::Broadcast => {
                            out.extend((0..n).map(ReplicaId).filter(|t| *t != r).map(|t| (t, s.msg.clone())))
                        }
                    }
                }
                out
            }
        };
        for (to, msg) in sends {
            self.send(r, to, msg, now);
        }
        if let Some(v) = acts.terminated {
            let mut rec = Record::new(now, Kind::Terminate);
            rec.from = Some(r.0);
            rec.value = Some(v.token());
            self.records.push(rec);
        }
    }

    fn record_blocks(&mut self, msg: &Message, now: Time) {
        for b in msg.carried_blocks() {
            if !self.seen_blocks.insert(b.hash) {
                continue;
            }
            let mut rec = Record::new(now, Kind::Block);
            rec.from = Some(b.proposer.0);
            rec.round = Some(b.round);
            rec.block = Some(b.hash);
            rec.parent = b.parent;
            match &b.payload {
                BlockPayload::Requests(rs) => rec.requests = Some(rs.iter().map(|q| q.0).collect()),
                BlockPayload::BaInputs { decision, .. } | BlockPayload::BaDecision(decision) => {
                    rec.value = Some(decision.token())
                }
                BlockPayload::Genesis => {}
            }
            self.records.push(rec);
        }
    }

    fn send(&mut self, from: ReplicaId, to: ReplicaId, msg: Arc<Message>, now: Time) {
        self.record_blocks(&msg, now);
        let delta = self.cfg.params.delta;
        let requested = match self.script.as_mut() {
            Some(s) => s.pop_front().unwrap_or(Time::MAX),
            None => match self.adv.delay(now, from, to) {
                Delay::After(d) => now + d,
                Delay::Forever => Time::MAX,
            },
        };
        let (at, clamped) = clamp_delivery(now, self.cfg.gst, delta, requested);
        if clamped {
            let mut rec = Record::new(now, Kind::Clamp);
            rec.from = Some(from.0);
            rec.to = Some(to.0);
            rec.at = Some(at);
            rec.note = Some(if requested == Time::MAX { "forever".into() } else { format!("requested {requested}").into() });
            self.records.push(rec);
        }
        let mut rec = Record::new(now, Kind::Send);
        rec.from = Some(from.0);
        rec.to = Some(to.0);
        rec.bits = Some(msg.wire_bits(self.cfg.params.kappa));
        rec.msg = Some(msg.kind().into());
        rec.round = msg.round();
        rec.block = msg.block();
        rec.at = Some(at);
        self.records.push(rec);
        self.queue.push(at, Event::Deliver { to, from, sent: now, msg });
    }
}
