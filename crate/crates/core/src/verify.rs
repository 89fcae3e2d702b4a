//! Invariant checks over a finished trace. Every check reads only the trace,
//! so stored traces can be re-verified later.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::crypto::Digest;
use crate::metrics::{epoch_change_bound, MetricsError, TraceView};
use crate::sim::{Kind, Trace};
use crate::types::{Mode, RoundId, Time};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Check {
    Safety,
    DeliveryBound,
    EpochCatchUp,
    EpochChangeBound,
    VoteUniqueness,
    Monotonicity,
    Agreement,
    Validity,
    Termination,
    SuperEpochRequests,
    Header,
}

impl Check {
    pub fn name(&self) -> &'static str {
        match self {
            Check::Safety => "safety",
            Check::DeliveryBound => "delivery-bound",
            Check::EpochCatchUp => "epoch-catch-up",
            Check::EpochChangeBound => "epoch-change-bound",
            Check::VoteUniqueness => "vote-uniqueness",
            Check::Monotonicity => "monotonicity",
            Check::Agreement => "agreement",
            Check::Validity => "validity",
            Check::Termination => "termination",
            Check::SuperEpochRequests => "super-epoch-requests",
            Check::Header => "header",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub check: Check,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.check.name(), self.detail)
    }
}

/// GST + 2Δ + 24(f+1)Δ + Δ.
pub fn ba_termination_bound(gst: Time, f: u32, delta: u64) -> Time {
    gst + 2 * delta + 24 * (f as u64 + 1) * delta + delta
}

/// 2Δ + 24(f+1)Δ.
pub fn first_confirmation_bound(f: u32, delta: u64) -> Time {
    2 * delta + 24 * (f as u64 + 1) * delta
}

struct Checker<'a> {
    trace: &'a Trace,
    view: TraceView<'a>,
    out: Vec<Violation>,
}

/// Runs every applicable check; an empty result means the trace is clean.
pub fn verify_trace(trace: &Trace) -> Vec<Violation> {
    let view = match TraceView::new(trace) {
        Ok(v) => v,
        Err(e @ (MetricsError::MissingHeader | MetricsError::MissingGst)) => {
            return vec![Violation { check: Check::Header, detail: e.to_string() }]
        }
        Err(e) => unreachable!("constructor only fails on header or gst: {e}"),
    };
    let mut c = Checker { trace, view, out: Vec::new() };
    c.safety();
    c.delivery_bound();
    c.epoch_catch_up();
    c.epoch_change_bound();
    c.vote_uniqueness();
    c.monotonicity();
    match c.view.header().mode {
        Mode::Ba => c.ba(),
        Mode::SuperEpoch => c.super_epoch(),
        Mode::Smr => {}
    }
    c.out
}

impl Checker<'_> {
    fn fail(&mut self, check: Check, detail: String) {
        self.out.push(Violation { check, detail });
    }

    fn end(&self) -> Time {
        self.trace.records.last().map_or(0, |r| r.time)
    }

    fn parents(&self) -> HashMap<Digest, Option<Digest>> {
        let mut m: HashMap<Digest, Option<Digest>> = self
            .trace
            .records
            .iter()
            .filter(|r| r.kind == Kind::Block)
            .filter_map(|r| r.block.map(|b| (b, r.parent)))
            .collect();
        m.insert(self.view.header().genesis, None);
        m
    }

    fn safety(&mut self) {
        let parents = self.parents();
        let confirmed: BTreeSet<Digest> = self.view.correct_confirms().filter_map(|r| r.block).collect();
        let mut depth: HashMap<Digest, u64> = HashMap::new();
        let mut chains: Vec<(u64, Digest)> = Vec::new();
        for b in &confirmed {
            let mut path = Vec::new();
            let mut cur = Some(*b);
            let base = loop {
                match cur {
                    None => break 0,
                    Some(h) => {
                        if let Some(d) = depth.get(&h) {
                            break *d + 1;
                        }
                        match parents.get(&h) {
                            Some(p) => {
                                path.push(h);
                                cur = *p;
                            }
                            None => {
                                self.fail(Check::Safety, format!("confirmed block {b} has unknown ancestry at {h}"));
                                return;
                            }
                        }
                    }
                }
            };
            for (i, h) in path.iter().rev().enumerate() {
                depth.insert(*h, base + i as u64);
            }
            chains.push((depth[b], *b));
        }
        chains.sort();
        for w in chains.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let mut cur = hi.1;
            while depth.get(&cur).is_some_and(|d| *d > lo.0) {
                cur = parents[&cur].expect("non-genesis has a parent");
            }
            if cur != lo.1 {
                self.fail(Check::Safety, format!("confirmed blocks {} and {} are incompatible", lo.1, hi.1));
                return;
            }
        }
    }

    fn delivery_bound(&mut self) {
        let gst = self.view.gst();
        let delta = self.view.header().delta;
        let mut bad = Vec::new();
        for r in &self.trace.records {
            let (sent, got) = match r.kind {
                Kind::Send => (r.time, r.at),
                Kind::Deliver => (r.sent.unwrap_or(r.time), Some(r.time)),
                _ => continue,
            };
            let Some(got) = got else { continue };
            if got < sent || got > sent.max(gst) + delta {
                bad.push(format!("message sent at {sent} delivered at {got}"));
            }
        }
        for d in bad {
            self.fail(Check::DeliveryBound, d);
        }
    }

    /// Per correct replica, the times at which its position changed.
    fn positions(&self) -> BTreeMap<u32, Vec<(Time, (u64, u64))>> {
        let mut out: BTreeMap<u32, Vec<(Time, (u64, u64))>> = BTreeMap::new();
        for r in &self.trace.records {
            let Some(from) = r.from else { continue };
            if !self.view.is_correct(from) {
                continue;
            }
            if let (Kind::EnterEpoch | Kind::EnterSuperEpoch, Some(x)) = (r.kind, r.round) {
                out.entry(from).or_default().push((r.time, (x.super_epoch, x.epoch)));
            }
        }
        out
    }

    fn epoch_catch_up(&mut self) {
        let n = self.view.header().n;
        let gst = self.view.gst();
        let delta = self.view.header().delta;
        let end = self.end();
        let terminated: BTreeSet<u32> =
            self.trace.records.iter().filter(|r| r.kind == Kind::Terminate).filter_map(|r| r.from).collect();
        let pos = self.positions();
        let at = |r: u32, t: Time| -> (u64, u64) {
            pos.get(&r)
                .and_then(|v| v.iter().take_while(|(pt, _)| *pt <= t).last())
                .map_or((1, 0), |(_, p)| *p)
        };
        let mut worst: BTreeMap<(u64, u64), Time> = BTreeMap::new();
        for list in pos.values() {
            for (t, p) in list {
                if p.1 >= 1 {
                    let e = worst.entry(*p).or_insert(*t);
                    *e = (*e).min(*t);
                }
            }
        }
        for (p, t) in worst {
            let deadline = t.max(gst) + delta;
            if deadline > end {
                continue;
            }
            for r in (0..n).filter(|r| self.view.is_correct(*r) && !terminated.contains(r)) {
                let have = at(r, deadline);
                if have < p {
                    self.fail(
                        Check::EpochCatchUp,
                        format!("replica {r} at {}.{} by {deadline}, but epoch {}.{} was entered at {t}", have.0, have.1, p.0, p.1),
                    );
                    return;
                }
            }
        }
    }

    fn epoch_change_bound(&mut self) {
        let h = self.view.header();
        let bound = epoch_change_bound(h.n, h.f);
        let over: Vec<_> = self.view.epoch_change_counts().into_iter().filter(|(_, c)| *c > bound).collect();
        for ((s, e), c) in over {
            self.fail(Check::EpochChangeBound, format!("epoch {s}.{e} cost {c} messages, bound {bound}"));
        }
    }

    fn vote_uniqueness(&mut self) {
        let mut seen: HashMap<(u32, RoundId), Digest> = HashMap::new();
        let mut bad = Vec::new();
        for s in self.view.correct_sends() {
            if s.msg.as_deref() != Some("vote") {
                continue;
            }
            let (Some(from), Some(round), Some(block)) = (s.from, s.round, s.block) else { continue };
            let prev = *seen.entry((from, round)).or_insert(block);
            if prev != block {
                bad.push(format!("replica {from} voted for {prev} and {block} in round {round}"));
            }
        }
        for d in bad {
            self.fail(Check::VoteUniqueness, d);
        }
    }

    fn monotonicity(&mut self) {
        let mut last_epoch: HashMap<u32, (u64, u64)> = HashMap::new();
        let mut last_view: HashMap<u32, (u64, u64, u64)> = HashMap::new();
        let mut bad = Vec::new();
        for r in &self.trace.records {
            let (Some(from), Some(x)) = (r.from, r.round) else { continue };
            if !self.view.is_correct(from) {
                continue;
            }
            match r.kind {
                Kind::EnterEpoch | Kind::EnterSuperEpoch => {
                    let k = (x.super_epoch, x.epoch);
                    if last_epoch.get(&from).is_some_and(|p| *p >= k) {
                        bad.push(format!("replica {from} moved back to epoch {}.{} at {}", k.0, k.1, r.time));
                    }
                    last_epoch.insert(from, k);
                }
                Kind::EnterView => {
                    let k = x.view_key();
                    if last_view.get(&from).is_some_and(|p| *p >= k) {
                        bad.push(format!("replica {from} moved back to view {x} at {}", r.time));
                    }
                    last_view.insert(from, k);
                }
                _ => {}
            }
        }
        for d in bad {
            self.fail(Check::Monotonicity, d);
        }
    }

    fn ba(&mut self) {
        let h = self.view.header().clone();
        let outputs: BTreeMap<u32, u64> = self
            .trace
            .records
            .iter()
            .filter(|r| r.kind == Kind::Terminate)
            .filter_map(|r| Some((r.from?, (r.value?, r.time))))
            .filter(|(f, _)| self.view.is_correct(*f))
            .map(|(f, (v, _))| (f, v))
            .collect();
        let values: BTreeSet<u64> = outputs.values().copied().collect();
        if values.len() > 1 {
            self.fail(Check::Agreement, format!("correct replicas output {values:?}"));
        }
        let correct_inputs: BTreeSet<u64> = h
            .inputs
            .iter()
            .enumerate()
            .filter(|(i, _)| self.view.is_correct(*i as u32))
            .map(|(_, v)| *v)
            .collect();
        if correct_inputs.len() == 1 {
            let u = *correct_inputs.iter().next().expect("one value");
            if values.iter().any(|v| *v != u) {
                self.fail(Check::Validity, format!("all correct inputs were {u} but outputs are {values:?}"));
            }
        }
        let bound = ba_termination_bound(self.view.gst(), h.f, h.delta);
        if bound <= self.end() {
            let terms: BTreeMap<u32, Time> = self
                .trace
                .records
                .iter()
                .filter(|r| r.kind == Kind::Terminate)
                .filter_map(|r| Some((r.from?, r.time)))
                .collect();
            let correct: Vec<u32> = (0..h.n).filter(|r| self.view.is_correct(*r)).collect();
            for r in correct {
                match terms.get(&r) {
                    Some(t) if *t <= bound => {}
                    Some(t) => self.fail(Check::Termination, format!("replica {r} terminated at {t}, bound {bound}")),
                    None => self.fail(Check::Termination, format!("replica {r} never terminated, bound {bound}")),
                }
            }
        }
    }

    fn super_epoch(&mut self) {
        let requests: HashMap<Digest, (u64, Vec<u64>)> = self
            .trace
            .records
            .iter()
            .filter(|r| r.kind == Kind::Block)
            .filter_map(|r| Some((r.block?, (r.round?.super_epoch, r.requests.clone().unwrap_or_default()))))
            .collect();
        let mut per_se: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        let mut bad = Vec::new();
        let confirmed: BTreeSet<Digest> = self.view.correct_confirms().filter_map(|r| r.block).collect();
        for b in confirmed {
            let Some((se, reqs)) = requests.get(&b) else { continue };
            match per_se.get(se) {
                Some(prev) if prev != reqs => {
                    bad.push((Check::SuperEpochRequests, format!("super-epoch {se} confirmed {prev:?} and {reqs:?}")))
                }
                Some(_) => {}
                None => {
                    per_se.insert(*se, reqs.clone());
                }
            }
        }
        let mut owner: HashMap<u64, u64> = HashMap::new();
        for (se, reqs) in &per_se {
            for q in reqs {
                if let Some(prev) = owner.insert(*q, *se) {
                    bad.push((Check::SuperEpochRequests, format!("request {q} confirmed in super-epochs {prev} and {se}")));
                }
            }
        }
        for (c, d) in bad {
            self.fail(c, d);
        }
    }
}
