mod common;

use common::{oracle, random_small_config};
use epoch_bft::metrics::{ComplexityReport, TraceView};
use epoch_bft::sim::run;
use epoch_bft::types::Mode;

#[test]
fn metrics_match_brute_force_scan() {
    for seed in 0..12 {
        let cfg = random_small_config(1000 + seed);
        let out = run(&cfg).unwrap();
        let text = String::from_utf8(out.trace.to_jsonl()).unwrap();
        let o = oracle(&text);
        let r = ComplexityReport::from_trace(&out.trace).unwrap();
        let ctx = format!("{} {} gst={} seed={}", cfg.mode, cfg.strategy, cfg.gst, cfg.seed);
        assert_eq!(r.wc_messages, o.wc_messages, "{ctx}");
        assert_eq!(r.wc_complete, o.wc_complete, "{ctx}");
        assert_eq!(r.ttfc, o.ttfc, "{ctx}");
        assert_eq!(r.max_epoch_change, o.max_epoch_change, "{ctx}");
        assert_eq!(r.confirmed_blocks, o.confirmed_blocks, "{ctx}");
        assert_eq!(r.total_sends, o.total_sends, "{ctx}");
        match cfg.mode {
            Mode::Smr => assert_eq!(r.wc_bits, None),
            _ => assert_eq!(r.wc_bits, Some(o.wc_bits), "{ctx}"),
        }
        let per_block = TraceView::new(&out.trace).unwrap().mean_messages(2).map(|m| m.per_block).unwrap_or_default();
        assert_eq!(per_block, o.per_block, "{ctx}");
    }
}

#[test]
fn silent_leaders_worst_case_count_matches_scan() {
    let cfg = epoch_bft::sim::SimConfig::new(common::params(4), Mode::Smr, epoch_bft::adversary::StrategyKind::SilentLeaders);
    let out = run(&cfg).unwrap();
    let o = oracle(std::str::from_utf8(&out.trace.to_jsonl()).unwrap());
    let wc = TraceView::new(&out.trace).unwrap().worst_case();
    assert!(wc.complete);
    assert!(wc.messages > 0);
    assert_eq!(wc.messages, o.wc_messages);
}
