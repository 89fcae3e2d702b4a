//! Shared test helpers, including a second trace scanner that works on the
//! raw JSON lines and shares no code with the metrics module.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use epoch_bft::adversary::strategy_catalog;
use epoch_bft::sim::SimConfig;
use epoch_bft::types::{Mode, ProtocolParams};

pub fn params(n: u32) -> ProtocolParams {
    ProtocolParams::new(n, (n - 1) / 3, 10, 256).unwrap()
}

/// A small random configuration, drawn from `seed`.
pub fn random_small_config(seed: u64) -> SimConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mode = [Mode::Smr, Mode::Ba, Mode::SuperEpoch][rng.gen_range(0..3)];
    let strategy = strategy_catalog()[rng.gen_range(0..strategy_catalog().len())];
    let gst = [0, 50, 200, 500][rng.gen_range(0..4)];
    SimConfig::new(params(4), mode, strategy).with_gst(gst).with_seed(rng.gen())
}

#[derive(Debug, PartialEq)]
pub struct OracleReport {
    pub wc_messages: u64,
    pub wc_bits: u64,
    pub wc_complete: bool,
    pub ttfc: Option<u64>,
    pub per_block: Vec<u64>,
    pub max_epoch_change: u64,
    pub confirmed_blocks: usize,
    pub total_sends: u64,
}

fn u(v: &Value, key: &str) -> Option<u64> {
    v.get(key).and_then(Value::as_u64)
}

fn s<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.get(key).and_then(Value::as_str)
}

/// Brute-force scan of a JSON-lines trace.
pub fn oracle(jsonl: &str) -> OracleReport {
    let recs: Vec<Value> = jsonl.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).unwrap()).collect();
    let config = recs[0].get("config").expect("header");
    let delta = u(config, "delta").unwrap();
    let gst = recs.iter().find(|r| s(r, "kind") == Some("gst")).and_then(|r| u(r, "time")).unwrap();
    let end = u(recs.last().unwrap(), "time").unwrap();
    let mut bad = BTreeSet::new();
    for r in &recs {
        if s(r, "kind") == Some("corrupt") {
            bad.insert(u(r, "from").unwrap());
        }
    }
    let by_correct = |r: &Value, kind: &str| s(r, "kind") == Some(kind) && u(r, "from").is_some_and(|f| !bad.contains(&f));

    let mut first_conf: Option<u64> = None;
    for r in &recs {
        if by_correct(r, "confirm") {
            let t = u(r, "time").unwrap();
            if t > gst + delta && first_conf.is_none_or(|c| t < c) {
                first_conf = Some(t);
            }
        }
    }
    let until = first_conf.unwrap_or(end);
    let (mut wc_messages, mut wc_bits, mut total_sends) = (0, 0, 0);
    for r in &recs {
        if by_correct(r, "send") {
            total_sends += 1;
            let t = u(r, "time").unwrap();
            if t > gst + delta && t <= until {
                wc_messages += 1;
                wc_bits += u(r, "bits").unwrap();
            }
        }
    }

    let mut ttfc = None;
    for r in &recs {
        if by_correct(r, "confirm") {
            let t = u(r, "time").unwrap();
            if t >= gst && ttfc.is_none_or(|x| t - gst < x) {
                ttfc = Some(t - gst);
            }
        }
    }

    // first confirmation time of each block, and the index it was first seen
    let mut first: HashMap<String, (u64, usize)> = HashMap::new();
    for (i, r) in recs.iter().enumerate() {
        if by_correct(r, "confirm") {
            let b = s(r, "block").unwrap().to_string();
            let t = u(r, "time").unwrap();
            let e = first.entry(b).or_insert((t, i));
            if t < e.0 {
                *e = (t, i);
            }
        }
    }
    let confirmed_blocks = first.len();
    let mut later: Vec<(u64, usize)> = first.values().copied().filter(|(t, _)| *t > gst + delta).collect();
    later.sort();
    let mut per_block = Vec::new();
    if later.len() >= 2 {
        for i in 0..later.len() - 1 {
            let (a, b) = (later[i].0, later[i + 1].0);
            let mut x = 0;
            for r in &recs {
                if by_correct(r, "send") {
                    let t = u(r, "time").unwrap();
                    if t > a && t <= b {
                        x += 1;
                    }
                }
            }
            per_block.push(x);
        }
    }

    let mut epochs: BTreeMap<(u64, u64), u64> = BTreeMap::new();
    for r in &recs {
        if by_correct(r, "send") && matches!(s(r, "msg"), Some("epoch") | Some("ec")) {
            let parts: Vec<u64> = s(r, "round").unwrap().split('.').map(|p| p.parse().unwrap()).collect();
            *epochs.entry((parts[0], parts[1])).or_default() += 1;
        }
    }
    OracleReport {
        wc_messages,
        wc_bits,
        wc_complete: first_conf.is_some(),
        ttfc,
        per_block,
        max_epoch_change: epochs.values().copied().max().unwrap_or(0),
        confirmed_blocks,
        total_sends,
    }
}
