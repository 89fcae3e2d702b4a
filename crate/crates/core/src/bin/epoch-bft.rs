use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use epoch_bft::harness::{self, ExperimentPlan, Format, HarnessError, Settings};
use epoch_bft::metrics::CSV_HEADER;

#[derive(Parser)]
#[command(name = "epoch-bft", version, about = "Simulate epoch-synchronized BFT consensus and measure its message complexity")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation and print its report.
    Run {
        #[command(flatten)]
        opts: Opts,
        /// Write the JSON-lines trace here.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Run every combination of the listed values and summarize.
    Sweep {
        #[command(flatten)]
        opts: Opts,
    },
    /// Re-verify a stored trace.
    Replay { trace: PathBuf },
}

/// Flags override the config file. List-valued keys take comma separated values.
#[derive(Args)]
struct Opts {
    /// Flat `key = value` settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// smr, ba or super_epoch.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    n: Option<String>,
    /// Defaults to floor((n-1)/3).
    #[arg(long)]
    f: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    #[arg(long)]
    gst: Option<String>,
    /// Defaults to gst + 40(f+1)delta.
    #[arg(long)]
    horizon: Option<String>,
    /// none, silent_leaders, equivocating_leader, max_delay, vote_withholder, epoch_desync.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Seeds per cell, counting up from --seed.
    #[arg(long)]
    seeds: Option<String>,
    /// literal or lock_qc.
    #[arg(long)]
    vote_rule: Option<String>,
    /// BA inputs: random, all-equal:<token> or a token list.
    #[arg(long)]
    inputs: Option<String>,
    /// Per-replica join times.
    #[arg(long)]
    joins: Option<String>,
    /// Output directory for reports and traces.
    #[arg(long)]
    out: Option<String>,
    /// csv or lines.
    #[arg(long)]
    format: Option<String>,
    /// on or off: keep traces in the output directory.
    #[arg(long)]
    trace: Option<String>,
}

impl Opts {
    fn settings(&self) -> Result<Settings, HarnessError> {
        let mut s = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        let flags = [
            ("mode", &self.mode),
            ("n", &self.n),
            ("f", &self.f),
            ("delta", &self.delta),
            ("kappa", &self.kappa),
            ("gst", &self.gst),
            ("horizon", &self.horizon),
            ("strategy", &self.strategy),
            ("seed", &self.seed),
            ("seeds", &self.seeds),
            ("vote_rule", &self.vote_rule),
            ("inputs", &self.inputs),
            ("joins", &self.joins),
            ("out", &self.out),
            ("format", &self.format),
            ("trace", &self.trace),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                s.set(k, v)?;
            }
        }
        Ok(s)
    }
}

fn run_one(opts: &Opts, trace_out: Option<PathBuf>) -> Result<i32, HarnessError> {
    let plan = ExperimentPlan::from_settings(&opts.settings()?)?;
    let cells = plan.cells()?;
    let [cfg] = &cells[..] else {
        return Err(HarnessError::Config {
            field: "plan".into(),
            message: format!("{} configurations given; use `sweep` for more than one", cells.len()),
        });
    };
    let (res, trace) = harness::run_cell(cfg)?;
    let target = trace_out.or_else(|| match (&plan.out, plan.trace) {
        (Some(dir), true) => Some(PathBuf::from(dir).join(harness::trace_file_name(cfg))),
        _ => None,
    });
    if let Some(path) = target {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io { path: dir.display().to_string(), source: e })?;
        }
        std::fs::write(&path, trace.to_jsonl())
            .map_err(|e| HarnessError::Io { path: path.display().to_string(), source: e })?;
    }
    match plan.format {
        Format::Csv => println!("{CSV_HEADER}\n{}", res.report.csv_row()),
        Format::Lines => print!("{}", harness::report_lines(&res.report)),
    }
    for v in &res.violations {
        eprintln!("violation: {v}");
    }
    Ok(i32::from(!res.violations.is_empty()))
}

fn sweep(opts: &Opts) -> Result<i32, HarnessError> {
    let plan = ExperimentPlan::from_settings(&opts.settings()?)?;
    let out = harness::run_experiment(&plan)?;
    if plan.out.is_none() {
        match plan.format {
            Format::Csv => {
                println!("{CSV_HEADER}");
                for c in &out.cells {
                    println!("{}", c.report.csv_row());
                }
            }
            Format::Lines => {
                for c in &out.cells {
                    println!("{}", harness::report_lines(&c.report));
                }
            }
        }
        println!();
    }
    print!("{}", out.summary);
    for (r, v) in out.violations() {
        eprintln!("violation ({} n={} {} gst={} seed={}): {v}", r.mode, r.n, r.strategy, r.gst, r.seed);
    }
    Ok(out.exit_code())
}

fn replay(path: &PathBuf) -> Result<i32, HarnessError> {
    let verdict = harness::replay(path)?;
    if let Some(r) = &verdict.report {
        print!("{}", harness::report_lines(r));
    }
    if verdict.passed() {
        println!("verdict: pass");
        Ok(0)
    } else {
        println!("verdict: fail");
        for v in &verdict.violations {
            println!("violation: {v}");
        }
        Ok(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run { opts, trace_out } => run_one(opts, trace_out.clone()),
        Cmd::Sweep { opts } => sweep(opts),
        Cmd::Replay { trace } => replay(trace),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
