//! Experiment driver behind the command line: settings, sweeps, summaries
//! and trace replay.
//!
//! Settings are flat `key = value` pairs. A config file supplies them first,
//! command-line flags override the file, and unset keys take defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::adversary::StrategyKind;
use crate::metrics::{loglog_slope, ComplexityReport, MetricsError, CSV_HEADER};
use crate::replica::VoteRule;
use crate::sim::{self, InputSpec, SimConfig, SimError, Trace, TraceError};
use crate::types::{Mode, ProtocolParams, Time};
use crate::verify::{verify_trace, Violation};

pub const KEYS: &[&str] = &[
    "mode", "n", "f", "delta", "kappa", "gst", "horizon", "strategy", "seed", "seeds", "vote_rule", "inputs", "joins",
    "out", "format", "trace",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{field}: {message}")]
    Config { field: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Trace { path: String, source: TraceError },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        2
    }
}

fn config_err(field: &str, message: impl fmt::Display) -> HarnessError {
    HarnessError::Config { field: field.to_string(), message: message.to_string() }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut s = Settings::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(config_err(&format!("line {}", i + 1), format!("expected key = value, got `{line}`")));
            };
            s.set(k.trim(), v.trim())?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Io { path: path.display().to_string(), source: e })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        if !KEYS.contains(&key) {
            return Err(config_err(key, "unknown setting"));
        }
        self.0.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn one<T: FromStr>(&self, key: &str, default: T) -> Result<T, HarnessError>
    where
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| config_err(key, format!("`{v}`: {e}"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>, HarnessError>
    where
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|x| x.trim().parse().map_err(|e| config_err(key, format!("`{x}`: {e}"))))
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Lines,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "lines" => Ok(Format::Lines),
            _ => Err("expected csv or lines".into()),
        }
    }
}

struct OnOff(bool);

impl FromStr for OnOff {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "on" | "true" | "1" => Ok(OnOff(true)),
            "off" | "false" | "0" => Ok(OnOff(false)),
            _ => Err("expected on or off".into()),
        }
    }
}

struct Rule(VoteRule);

impl FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" => Ok(Rule(VoteRule::Literal)),
            "lock_qc" | "lock-qc" => Ok(Rule(VoteRule::LockQc)),
            _ => Err("expected literal or lock_qc".into()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub modes: Vec<Mode>,
    pub ns: Vec<u32>,
    /// Overrides floor((n−1)/3).
    pub f: Option<u32>,
    pub delta: u64,
    pub kappa: u32,
    pub strategies: Vec<StrategyKind>,
    pub gsts: Vec<Time>,
    pub first_seed: u64,
    pub seeds: u64,
    pub horizon: Option<Time>,
    pub vote_rule: VoteRule,
    pub inputs: InputSpec,
    pub joins: Vec<Time>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub trace: bool,
}

impl ExperimentPlan {
    pub fn from_settings(s: &Settings) -> Result<Self, HarnessError> {
        let plan = ExperimentPlan {
            modes: s.list("mode", vec![Mode::Smr])?,
            ns: s.list("n", vec![4])?,
            f: s.get("f").map(|v| v.parse().map_err(|e| config_err("f", format!("`{v}`: {e}")))).transpose()?,
            delta: s.one("delta", 10)?,
            kappa: s.one("kappa", crate::crypto::DEFAULT_KAPPA)?,
            strategies: s.list("strategy", vec![StrategyKind::None])?,
            gsts: s.list("gst", vec![0])?,
            first_seed: s.one("seed", 0)?,
            seeds: s.one("seeds", 1)?,
            horizon: s.get("horizon").map(|v| v.parse().map_err(|e| config_err("horizon", format!("`{v}`: {e}")))).transpose()?,
            vote_rule: s.one("vote_rule", Rule(VoteRule::default()))?.0,
            inputs: s.one("inputs", InputSpec::Random)?,
            joins: s.list("joins", Vec::new())?,
            out: s.get("out").map(PathBuf::from),
            format: s.one("format", Format::Csv)?,
            trace: s.one("trace", OnOff(false))?.0,
        };
        if plan.seeds == 0 {
            return Err(config_err("seeds", "must be at least 1"));
        }
        if plan.modes.is_empty() || plan.ns.is_empty() || plan.strategies.is_empty() || plan.gsts.is_empty() {
            return Err(config_err("plan", "every sweep axis needs at least one value"));
        }
        plan.cells()?;
        Ok(plan)
    }

    /// One config per cell and seed, in report order.
    pub fn cells(&self) -> Result<Vec<SimConfig>, HarnessError> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            for &n in &self.ns {
                let f = self.f.unwrap_or_else(|| ProtocolParams::default_f(n));
                let params = ProtocolParams::new(n, f, self.delta, self.kappa).map_err(|e| config_err("n", e))?;
                for &strategy in &self.strategies {
                    for &gst in &self.gsts {
                        for seed in self.first_seed..self.first_seed + self.seeds {
                            let mut cfg = SimConfig::new(params, mode, strategy).with_gst(gst).with_seed(seed);
                            if let Some(h) = self.horizon {
                                cfg.horizon = h;
                            }
                            cfg.vote_rule = self.vote_rule;
                            cfg.inputs = self.inputs.clone();
                            cfg.joins = self.joins.clone();
                            cfg.validate().map_err(|e| config_err("plan", e))?;
                            out.push(cfg);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub report: ComplexityReport,
    pub violations: Vec<Violation>,
}

/// Runs one configuration, verifies its trace and computes its report.
pub fn run_cell(cfg: &SimConfig) -> Result<(CellResult, Trace), HarnessError> {
    let out = sim::run(cfg)?;
    let violations = verify_trace(&out.trace);
    let report = ComplexityReport::from_trace(&out.trace)?;
    Ok((CellResult { report, violations }, out.trace))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NStats {
    pub n: u32,
    pub runs: usize,
    pub max_wc_messages: u64,
    pub max_wc_bits: Option<u64>,
    pub mean_of_means: Option<f64>,
    pub max_ttfc: Option<Time>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    pub mode: Mode,
    pub strategy: String,
    pub gst: Time,
    pub per_n: Vec<NStats>,
    pub wc_slope: Option<f64>,
    pub bits_slope: Option<f64>,
    pub mean_slope: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub groups: Vec<GroupSummary>,
}

pub fn summarize(reports: &[ComplexityReport]) -> Summary {
    let mut groups: BTreeMap<(Mode, String, Time), BTreeMap<u32, Vec<&ComplexityReport>>> = BTreeMap::new();
    for r in reports {
        groups.entry((r.mode, r.strategy.clone(), r.gst)).or_default().entry(r.n).or_default().push(r);
    }
    let mut out = Summary::default();
    for ((mode, strategy, gst), by_n) in groups {
        let per_n: Vec<NStats> = by_n
            .iter()
            .map(|(n, rs)| {
                let means: Vec<f64> = rs.iter().filter_map(|r| r.mean_messages).collect();
                NStats {
                    n: *n,
                    runs: rs.len(),
                    max_wc_messages: rs.iter().map(|r| r.wc_messages).max().unwrap_or(0),
                    max_wc_bits: rs.iter().filter_map(|r| r.wc_bits).max(),
                    mean_of_means: (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64),
                    max_ttfc: rs.iter().filter_map(|r| r.ttfc).max(),
                }
            })
            .collect();
        let fit = |f: &dyn Fn(&NStats) -> Option<f64>| {
            let pts: Vec<(f64, f64)> = per_n.iter().filter_map(|s| f(s).map(|y| (s.n as f64, y))).collect();
            loglog_slope(&pts)
        };
        let wc_slope = fit(&|s| Some(s.max_wc_messages as f64));
        let bits_slope = fit(&|s| s.max_wc_bits.map(|b| b as f64));
        let mean_slope = fit(&|s| s.mean_of_means);
        out.groups.push(GroupSummary { mode, strategy, gst, per_n, wc_slope, bits_slope, mean_slope });
    }
    out
}

fn show<T: fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            writeln!(f, "{} {} gst={}", g.mode, g.strategy, g.gst)?;
            writeln!(f, "  {:>4} {:>5} {:>12} {:>12} {:>12} {:>8}", "n", "runs", "max_wc", "max_bits", "mean_msgs", "max_ttfc")?;
            for s in &g.per_n {
                writeln!(
                    f,
                    "  {:>4} {:>5} {:>12} {:>12} {:>12} {:>8}",
                    s.n,
                    s.runs,
                    s.max_wc_messages,
                    show(s.max_wc_bits),
                    show(s.mean_of_means.map(|m| format!("{m:.2}"))),
                    show(s.max_ttfc)
                )?;
            }
            let slope = |x: Option<f64>| show(x.map(|s| format!("{s:.3}")));
            writeln!(
                f,
                "  slopes: wc_messages {} wc_bits {} mean_messages {}",
                slope(g.wc_slope),
                slope(g.bits_slope),
                slope(g.mean_slope)
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub cells: Vec<CellResult>,
    pub summary: Summary,
}

impl SweepOutcome {
    pub fn violations(&self) -> impl Iterator<Item = (&ComplexityReport, &Violation)> + '_ {
        self.cells.iter().flat_map(|c| c.violations.iter().map(move |v| (&c.report, v)))
    }

    /// 0 if every trace is clean, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        i32::from(self.violations().next().is_some())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io { path: path.display().to_string(), source: e }
}

pub fn trace_file_name(cfg: &SimConfig) -> String {
    format!("trace-{}-n{}-{}-gst{}-seed{}.jsonl", cfg.mode, cfg.params.n, cfg.strategy, cfg.gst, cfg.seed)
}

/// Runs every cell. Rows are appended to `out/report.csv` in cell order as
/// batches finish, so an interrupted sweep keeps what it had.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<SweepOutcome, HarnessError> {
    let cells = plan.cells()?;
    let mut report = match &plan.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join("report.csv");
            let mut f = fs::File::create(&path).map_err(io_err(&path))?;
            writeln!(f, "{CSV_HEADER}").map_err(io_err(&path))?;
            Some((f, path))
        }
        None => None,
    };
    let batch = rayon::current_num_threads().max(1) * 4;
    let mut results = Vec::with_capacity(cells.len());
    for chunk in cells.chunks(batch) {
        let done: Vec<Result<CellResult, HarnessError>> = chunk
            .par_iter()
            .map(|cfg| {
                let (res, trace) = run_cell(cfg)?;
                if let (true, Some(dir)) = (plan.trace, &plan.out) {
                    let path = dir.join(trace_file_name(cfg));
                    fs::write(&path, trace.to_jsonl()).map_err(io_err(&path))?;
                }
                Ok(res)
            })
            .collect();
        for r in done {
            let r = r?;
            if let Some((f, path)) = report.as_mut() {
                writeln!(f, "{}", r.report.csv_row()).map_err(io_err(path))?;
            }
            results.push(r);
        }
        if let Some((f, path)) = report.as_mut() {
            f.flush().map_err(io_err(path))?;
        }
    }
    let reports: Vec<ComplexityReport> = results.iter().map(|r| r.report.clone()).collect();
    let summary = summarize(&reports);
    if let Some(dir) = &plan.out {
        let path = dir.join("summary.txt");
        fs::write(&path, summary.to_string()).map_err(io_err(&path))?;
    }
    Ok(SweepOutcome { cells: results, summary })
}

/// Report fields as `key: value` lines.
pub fn report_lines(r: &ComplexityReport) -> String {
    CSV_HEADER
        .split(',')
        .zip(r.csv_row().split(','))
        .map(|(k, v)| format!("{k}: {}\n", if v.is_empty() { "-" } else { v }))
        .collect()
}

#[derive(Clone, Debug)]
pub struct Verdict {
    pub violations: Vec<Violation>,
    pub report: Option<ComplexityReport>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn read_trace(path: &Path) -> Result<Trace, HarnessError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    Trace::read_jsonl(BufReader::new(f)).map_err(|e| HarnessError::Trace { path: path.display().to_string(), source: e })
}

/// Re-checks every invariant on a stored trace.
pub fn replay(path: &Path) -> Result<Verdict, HarnessError> {
    let trace = read_trace(path)?;
    Ok(Verdict { violations: verify_trace(&trace), report: ComplexityReport::from_trace(&trace).ok() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_parse_and_reject_unknown_keys() {
        let s = Settings::parse("# sweep\nn = 4,7\nstrategy = silent_leaders # worst case\n\nseeds=3\n").unwrap();
        assert_eq!(s.get("n"), Some("4,7"));
        assert_eq!(s.get("seeds"), Some("3"));
        match Settings::parse("colour = blue") {
            Err(HarnessError::Config { field, .. }) => assert_eq!(field, "colour"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Settings::parse("just words").is_err());
    }

    #[test]
    fn plan_errors_name_the_field() {
        let mut s = Settings::default();
        s.set("strategy", "sneaky").unwrap();
        match ExperimentPlan::from_settings(&s) {
            Err(HarnessError::Config { field, message }) => {
                assert_eq!(field, "strategy");
                assert!(message.contains("sneaky"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut s = Settings::default();
        s.set("n", "4").unwrap();
        s.set("f", "2").unwrap();
        assert!(matches!(ExperimentPlan::from_settings(&s), Err(HarnessError::Config { .. })));
        let mut s = Settings::default();
        s.set("gst", "100").unwrap();
        s.set("horizon", "50").unwrap();
        assert!(matches!(ExperimentPlan::from_settings(&s), Err(HarnessError::Config { .. })));
    }

    #[test]
    fn cells_cover_axes_in_order() {
        let mut s = Settings::default();
        s.set("n", "4,7").unwrap();
        s.set("strategy", "none,max_delay").unwrap();
        s.set("seeds", "2").unwrap();
        let cells = ExperimentPlan::from_settings(&s).unwrap().cells().unwrap();
        let keys: Vec<_> = cells.iter().map(|c| (c.params.n, c.strategy.name(), c.seed)).collect();
        assert_eq!(keys[0], (4, "none", 0));
        assert_eq!(keys[1], (4, "none", 1));
        assert_eq!(keys[2], (4, "max_delay", 0));
        assert_eq!(keys.len(), 8);
        assert_eq!(cells[7].params.f, 2);
    }

    #[test]
    fn single_point_sweep_has_no_slopes() {
        let plan = ExperimentPlan::from_settings(&Settings::default()).unwrap();
        let out = run_experiment(&plan).unwrap();
        assert_eq!(out.cells.len(), 1);
        assert_eq!(out.exit_code(), 0);
        let g = &out.summary.groups[0];
        assert_eq!((g.wc_slope, g.mean_slope), (None, None));
    }

    #[test]
    fn lines_format_pairs_every_column() {
        let plan = ExperimentPlan::from_settings(&Settings::default()).unwrap();
        let out = run_experiment(&plan).unwrap();
        let text = report_lines(&out.cells[0].report);
        assert_eq!(text.lines().count(), CSV_HEADER.split(',').count());
        assert!(text.starts_with("mode: smr\n"));
    }
}
