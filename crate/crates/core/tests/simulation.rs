mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use proptest::prelude::*;

use common::{params, random_small_config};
use epoch_bft::adversary::{strategy_catalog, StrategyKind};
use epoch_bft::crypto::Digest;
use epoch_bft::metrics::TraceView;
use epoch_bft::replica::VoteRule;
use epoch_bft::sim::{clamp_delivery, delivery_schedule, run, run_scripted, InputSpec, Kind, SimConfig, Trace};
use epoch_bft::types::{Mode, ProtocolParams, RoundId};
use epoch_bft::verify::verify_trace;

fn same_view(a: RoundId, b: RoundId) -> bool {
    (a.super_epoch, a.epoch, a.view) == (b.super_epoch, b.epoch, b.view)
}

fn confirms(t: &Trace) -> Vec<(u64, u32, Digest)> {
    t.records.iter().filter(|r| r.kind == Kind::Confirm).map(|r| (r.time, r.from.unwrap(), r.block.unwrap())).collect()
}

#[test]
fn clamp_examples() {
    assert_eq!(clamp_delivery(5, 100, 10, 95), (95, false));
    assert_eq!(clamp_delivery(200, 100, 10, 1_000_000), (210, true));
    assert_eq!(clamp_delivery(5, 100, 10, 3), (5, true));
    assert_eq!(clamp_delivery(5, 100, 10, u64::MAX), (110, true));
}

#[test]
fn failure_free_run_confirms_first_view_everywhere() {
    let cfg = SimConfig::new(params(4), Mode::Smr, StrategyKind::None);
    let out = run(&cfg).unwrap();
    let first = RoundId::new(1, 1, 0);
    let block = out
        .trace
        .records
        .iter()
        .find(|r| r.kind == Kind::Block && r.round.is_some_and(|x| same_view(x, first)))
        .and_then(|r| r.block)
        .expect("view 0 proposal");
    for r in out.replicas.iter() {
        assert!(r.knowledge().is_confirmed(&block), "replica {}", r.id().0);
    }
    // start, epoch messages, EC, view messages, proposal, then three
    // vote/QC exchanges of two hops each; the leader confirms on the last vote
    let view = TraceView::new(&out.trace).unwrap();
    assert_eq!(view.first_confirmation(), Some(9));
    assert!(verify_trace(&out.trace).is_empty());
}

#[test]
fn horizon_before_any_confirmation() {
    let mut cfg = SimConfig::new(params(4), Mode::Smr, StrategyKind::None);
    cfg.horizon = 5;
    let out = run(&cfg).unwrap();
    assert!(confirms(&out.trace).is_empty());
    let end = out.trace.records.last().unwrap();
    assert_eq!((end.kind, end.time), (Kind::End, 5));
    assert!(out.trace.records.iter().all(|r| r.time <= 5));
}

#[test]
fn invalid_config_is_rejected() {
    let mut cfg = SimConfig::new(params(4), Mode::Smr, StrategyKind::None).with_gst(100);
    cfg.horizon = 100;
    assert!(run(&cfg).is_err());
    let mut cfg = SimConfig::new(params(4), Mode::Smr, StrategyKind::None).with_gst(100);
    cfg.joins = vec![0, 0, 0, 150];
    assert!(run(&cfg).is_err());
    let mut cfg = SimConfig::new(params(4), Mode::Ba, StrategyKind::None);
    cfg.inputs = InputSpec::Explicit(vec![1, 2]);
    assert!(run(&cfg).is_err());
}

#[test]
fn late_joiner_catches_up() {
    let mut cfg = SimConfig::new(params(4), Mode::Smr, StrategyKind::None).with_gst(200);
    cfg.joins = vec![0, 0, 0, 200];
    let out = run(&cfg).unwrap();
    assert!(verify_trace(&out.trace).is_empty());
    assert!(confirms(&out.trace).iter().any(|(t, from, _)| *from == 3 && *t > 200));
}

#[test]
fn silent_leaders_skip_exactly_one_view() {
    let cfg = SimConfig::new(params(4), Mode::Smr, StrategyKind::SilentLeaders);
    let out = run(&cfg).unwrap();
    assert_eq!(out.corrupted.len(), 1);
    let blocks: Vec<RoundId> = out.trace.records.iter().filter(|r| r.kind == Kind::Block).filter_map(|r| r.round).collect();
    assert!(!blocks.iter().any(|b| same_view(*b, RoundId::new(1, 1, 0))));
    let first = out.trace.records.iter().find(|r| r.kind == Kind::Confirm).unwrap();
    assert!(same_view(first.round.unwrap(), RoundId::new(1, 1, 1)));
    assert!(verify_trace(&out.trace).is_empty());
}

#[test]
fn equivocation_splits_votes_without_breaking_safety() {
    let mut split = 0;
    for seed in 0..10 {
        let cfg = SimConfig::new(params(7), Mode::Smr, StrategyKind::EquivocatingLeader).with_seed(seed);
        let out = run(&cfg).unwrap();
        assert!(verify_trace(&out.trace).is_empty(), "seed {seed}");
        let view = TraceView::new(&out.trace).unwrap();
        // stage-1 voters per block
        let mut voters: HashMap<Digest, BTreeSet<u32>> = HashMap::new();
        let mut by_round: BTreeMap<RoundId, BTreeSet<Digest>> = BTreeMap::new();
        for r in view.correct_sends().filter(|r| r.msg.as_deref() == Some("vote")) {
            let round = r.round.unwrap();
            if round.stage == 1 {
                voters.entry(r.block.unwrap()).or_default().insert(r.from.unwrap());
                by_round.entry(round).or_default().insert(r.block.unwrap());
            }
        }
        for blocks in by_round.values().filter(|b| b.len() == 2) {
            let mut it = blocks.iter().map(|b| &voters[b]);
            let (a, b) = (it.next().unwrap(), it.next().unwrap());
            assert!(a.is_disjoint(b));
            split += 1;
        }
    }
    assert!(split > 0, "no equivocating round drew votes for both blocks");
}

#[test]
fn ba_with_equal_inputs_outputs_that_input() {
    for s in strategy_catalog() {
        let mut cfg = SimConfig::new(params(7), Mode::Ba, *s).with_seed(3);
        cfg.inputs = InputSpec::AllEqual(11);
        let out = run(&cfg).unwrap();
        assert!(verify_trace(&out.trace).is_empty(), "{s}");
        for r in out.correct() {
            assert_eq!(r.output().map(|v| v.token()), Some(11), "{s} replica {}", r.id().0);
        }
    }
}

#[test]
fn super_epoch_blocks_repeat_nothing() {
    let cfg = SimConfig::new(params(7), Mode::SuperEpoch, StrategyKind::SilentLeaders).with_seed(5);
    let out = run(&cfg).unwrap();
    assert!(verify_trace(&out.trace).is_empty());
    let mut per_se: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    let requests: HashMap<Digest, (RoundId, Vec<u64>)> = out
        .trace
        .records
        .iter()
        .filter(|r| r.kind == Kind::Block)
        .map(|r| (r.block.unwrap(), (r.round.unwrap(), r.requests.clone().unwrap_or_default())))
        .collect();
    for (_, _, b) in confirms(&out.trace) {
        let (round, reqs) = &requests[&b];
        let prev = per_se.entry(round.super_epoch).or_insert_with(|| reqs.clone());
        assert_eq!(prev, reqs);
    }
    assert!(per_se.len() > 2);
    let all: Vec<u64> = per_se.values().flatten().copied().collect();
    let distinct: BTreeSet<u64> = all.iter().copied().collect();
    assert_eq!(all.len(), distinct.len());
}

fn small_params() -> impl Strategy<Value = ProtocolParams> {
    (4u32..=7).prop_map(params)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn deliveries_respect_the_bound_and_causality(seed in any::<u64>(), gst in 0u64..300, p in small_params(), mode in 0usize..3, s in 0usize..6) {
        let mode = [Mode::Smr, Mode::Ba, Mode::SuperEpoch][mode];
        let cfg = SimConfig::new(p, mode, strategy_catalog()[s]).with_gst(gst).with_seed(seed);
        let out = run(&cfg).unwrap();
        let mut last = 0;
        for r in &out.trace.records {
            prop_assert!(r.time >= last);
            last = r.time;
            if r.kind == Kind::Deliver {
                let sent = r.sent.unwrap();
                prop_assert!(sent <= r.time && r.time <= sent.max(gst) + p.delta);
            }
        }
        prop_assert!(out.corrupted.len() <= p.f as usize);
        let v = verify_trace(&out.trace);
        prop_assert!(v.is_empty(), "{:?}", v);
    }

    #[test]
    fn runs_are_reproducible_and_replayable(seed in 0u64..1000) {
        let cfg = random_small_config(seed);
        let a = run(&cfg).unwrap().trace;
        let b = run(&cfg).unwrap().trace;
        prop_assert_eq!(a.to_jsonl(), b.to_jsonl());
        let c = run_scripted(&cfg, delivery_schedule(&a)).unwrap().trace;
        prop_assert_eq!(confirms(&a), confirms(&c));
        // a replayed schedule is already in range, so only clamp notes differ
        let strip = |t: &Trace| t.records.iter().filter(|r| r.kind != Kind::Clamp).cloned().collect::<Vec<_>>();
        prop_assert!(strip(&a) == strip(&c));
    }

    #[test]
    fn clamp_stays_in_range(sent in 0u64..10_000, gst in 0u64..10_000, delta in 1u64..1000, req in any::<u64>()) {
        let (at, changed) = clamp_delivery(sent, gst, delta, req);
        prop_assert!(sent <= at && at <= sent.max(gst) + delta);
        prop_assert_eq!(changed, at != req);
    }

    #[test]
    fn quorums_intersect_in_a_correct_replica(n in 4u32..200) {
        let f = (n - 1) / 3;
        prop_assert!(2 * (n - f) > n + f);
    }
}

#[test]
fn lock_qc_rule_is_also_safe_and_live() {
    for s in strategy_catalog() {
        let mut cfg = SimConfig::new(params(7), Mode::Smr, *s).with_gst(100).with_seed(8);
        cfg.vote_rule = VoteRule::LockQc;
        let out = run(&cfg).unwrap();
        assert!(verify_trace(&out.trace).is_empty(), "{s}");
        assert!(TraceView::new(&out.trace).unwrap().time_to_first_confirmation().is_ok(), "{s}");
    }
}
