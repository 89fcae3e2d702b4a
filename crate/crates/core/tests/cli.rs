use std::path::Path;
use std::process::{Command, Output};

use epoch_bft::crypto::Digest;
use epoch_bft::sim::{Kind, Record, Trace};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_epoch-bft"))
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn record_run(dir: &Path, extra: &[&str]) -> std::path::PathBuf {
    let path = dir.join("run.jsonl");
    let o = bin().args(["run", "--n", "4", "--seed", "3", "--trace-out"]).arg(&path).args(extra).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    path
}

fn load(path: &Path) -> Trace {
    Trace::read_jsonl(std::io::BufReader::new(std::fs::File::open(path).unwrap())).unwrap()
}

fn replay(path: &Path) -> Output {
    bin().arg("replay").arg(path).output().unwrap()
}

#[test]
fn run_then_replay_passes() {
    let dir = tempfile::tempdir().unwrap();
    let path = record_run(dir.path(), &["--strategy", "equivocating_leader"]);
    let o = replay(&path);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
}

#[test]
fn duplicated_stage_three_vote_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let path = record_run(dir.path(), &[]);
    let mut t = load(&path);
    let i = t
        .records
        .iter()
        .position(|r| r.kind == Kind::Send && r.msg.as_deref() == Some("vote") && r.round.is_some_and(|x| x.stage == 3))
        .unwrap();
    let mut dup = t.records[i].clone();
    dup.block = Some(Digest([0xab; 32]));
    t.records.insert(i + 1, dup);
    std::fs::write(&path, t.to_jsonl()).unwrap();
    let o = replay(&path);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("vote-uniqueness"), "{}", text(&o));
}

#[test]
fn conflicting_confirmations_fail_safety() {
    let dir = tempfile::tempdir().unwrap();
    let path = record_run(dir.path(), &[]);
    let mut t = load(&path);
    let genesis = t.header().unwrap().genesis;
    let first = t.records.iter().find(|r| r.kind == Kind::Confirm).unwrap().clone();
    let mut fork = Record::new(first.time, Kind::Block);
    fork.from = Some(2);
    fork.block = Some(Digest([0xcd; 32]));
    fork.parent = Some(genesis);
    fork.round = first.round;
    let mut confirm = first.clone();
    confirm.from = Some((first.from.unwrap() + 1) % 4);
    confirm.block = fork.block;
    let at = t.records.iter().position(|r| r == &first).unwrap();
    t.records.insert(at + 1, confirm);
    t.records.insert(at, fork);
    std::fs::write(&path, t.to_jsonl()).unwrap();
    let o = replay(&path);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("safety"), "{}", text(&o));
}

#[test]
fn truncated_trace_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = record_run(dir.path(), &[]);
    let body = std::fs::read_to_string(&path).unwrap();
    let cut = &body[..body.len() * 2 / 3];
    std::fs::write(&path, cut).unwrap();
    let o = replay(&path);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("line"), "{}", text(&o));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "# small run\nmode = ba\nn = 7\nstrategy = silent_leaders\ninputs = all-equal:9\n").unwrap();
    let path = dir.path().join("t.jsonl");
    let o = bin().args(["run", "--n", "4", "--config"]).arg(&cfg).arg("--trace-out").arg(&path).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let h = load(&path).header().unwrap().clone();
    assert_eq!((h.n, h.strategy.as_str(), h.inputs), (4, "silent_leaders", vec![9; 4]));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("mode,n,f"));
}

#[test]
fn bad_settings_exit_with_two() {
    let o = bin().args(["run", "--strategy", "nonsense"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("nonsense"));
    let o = bin().args(["run", "--n", "4,7"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin().args(["run", "--n", "4", "--f", "2"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn degenerate_sweep_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = bin().args(["sweep", "--n", "4", "--out"]).arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(out.join("summary.txt").exists());
}
