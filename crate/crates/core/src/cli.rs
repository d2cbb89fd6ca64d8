//! Command-line front end.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bench::analytics;
use crate::bench::driver::{self, SweepDimension};
use crate::bench::metrics::MetricsReport;
use crate::bench::report;
use crate::config::{ConfigError, ExperimentConfig};
use crate::consensus::Engine;
use crate::hash::Hash256;

/// Like `println!`, but a closed stdout (e.g. piped into `head`) is not fatal.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(io::stdout(), $($arg)*);
    }};
}

/// Environment variable overriding the output directory.
pub const OUT_ENV: &str = "CHAINBENCH_OUT";
pub const DEFAULT_OUT: &str = "chainbench-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "chainbench", version, about = "Deterministic private-blockchain simulator and benchmark driver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; falls back to $CHAINBENCH_OUT, then the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exit non-zero when an invariant or expectation fails.
    #[arg(long = "assert")]
    pub check: bool,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one experiment and write its reports.
    Run {
        #[command(flatten)]
        common: Common,
        /// Run several seeds instead of one, e.g. "1:5" or "3,7,11".
        #[arg(long)]
        seeds: Option<String>,
        /// Write the JSON-lines event trace.
        #[arg(long)]
        trace: bool,
    },
    /// Repeat an experiment over a range of cluster or client counts.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        dimension: SweepDimension,
        /// "start:end[:step]" or a comma-separated list.
        #[arg(long)]
        range: String,
    },
    /// Partition experiment: fork-delta series and a verdict line.
    Security {
        #[command(flatten)]
        common: Common,
    },
    /// Preload a chain of transfers, then check random historical range
    /// queries against a full replay.
    Analytics {
        #[command(flatten)]
        common: Common,
    },
    /// Re-run a recorded trace and check that it reproduces exactly.
    Replay {
        /// Trace written by `run --trace`.
        trace: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Assert(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Assert(_) => EXIT_ASSERT,
        }
    }
}

/// Parse `args` (including the program name) and execute; returns the exit
/// code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn summary_line(r: &MetricsReport) -> String {
    format!(
        "{} [{} {}x{} seed {}]: {:.1} tx/s, committed {}, p50 {} ms, p99 {} ms, delta {}/{}, view changes {}, stalled {}",
        r.name,
        r.engine,
        r.nodes,
        r.clients,
        r.seed,
        r.throughput,
        r.committed,
        r.latency.p50_ms.map_or("-".into(), |v| v.to_string()),
        r.latency.p99_ms.map_or("-".into(), |v| v.to_string()),
        r.security.delta,
        r.security.total_blocks,
        r.liveness.view_changes,
        r.liveness.stalled,
    )
}

/// Invariants every run must satisfy plus the config's expectations.
pub fn check_report(cfg: &ExperimentConfig, r: &MetricsReport) -> Vec<String> {
    let mut failures = Vec::new();
    if r.smallbank_conserved == Some(false) {
        failures.push("smallbank total balance changed".into());
    }
    if r.node.root_mismatches > 0 {
        failures.push(format!("{} blocks executed to a different state root", r.node.root_mismatches));
    }
    if r.security.conflicts > 0 {
        failures.push(format!("{} heights with conflicting certified blocks", r.security.conflicts));
    }
    if !r.network.conserved() {
        failures.push("network message accounting does not balance".into());
    }
    let e = &cfg.expect;
    if let Some(ff) = e.fork_free {
        let is = r.security.delta == 0 && r.security.conflicts == 0;
        if ff != is {
            failures.push(format!("expected fork_free = {ff}, delta was {}", r.security.delta));
        }
    }
    if let Some(st) = e.stalled {
        if st != r.liveness.stalled {
            failures.push(format!("expected stalled = {st}, got {}", r.liveness.stalled));
        }
    }
    if let Some(min) = e.min_throughput {
        if r.throughput < min {
            failures.push(format!("throughput {:.2} below {min}", r.throughput));
        }
    }
    if let Some(max) = e.max_throughput {
        if r.throughput > max {
            failures.push(format!("throughput {:.2} above {max}", r.throughput));
        }
    }
    failures
}

fn enforce(check: bool, cfg: &ExperimentConfig, reports: &[MetricsReport]) -> Result<(), CliError> {
    if !check {
        return Ok(());
    }
    let failures: Vec<String> = reports
        .iter()
        .flat_map(|r| check_report(cfg, r).into_iter().map(move |f| format!("{} seed {}: {f}", r.name, r.seed)))
        .collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Assert(failures.join("; ")))
    }
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run { common, seeds, trace } => cmd_run(&common, seeds.as_deref(), trace),
        Command::Sweep { common, dimension, range } => {
            let cfg = load(&common)?;
            let values = driver::parse_range(&range).map_err(CliError::Usage)?;
            let reports = driver::sweep(&cfg, dimension, &values, common.jobs)?;
            let dir = out_dir(&common, &cfg);
            for r in &reports {
                say!("{}", summary_line(r));
                report::write_run(&dir, &r.name, r)?;
            }
            let p = report::write_sweep(&dir, &cfg.name, &reports)?;
            say!("wrote {}", p.display());
            enforce(common.check, &cfg, &reports)
        }
        Command::Security { common } => {
            let cfg = load(&common)?;
            let s = driver::security_run(&cfg)?;
            let dir = out_dir(&common, &cfg);
            report::write_run(&dir, &cfg.name, &s.report)?;
            let p = report::write_security(&dir, &cfg.name, &s)?;
            say!("{}", summary_line(&s.report));
            say!("wrote {}", p.display());
            say!(
                "verdict: {} (engine {}, max delta {}, forked share {:.1}%)",
                s.verdict,
                cfg.consensus.engine.name(),
                s.series.iter().map(|p| p.delta).max().unwrap_or(0),
                100.0 * s.forked_share()
            );
            let mut result = enforce(common.check, &cfg, std::slice::from_ref(&s.report));
            if common.check && matches!(cfg.consensus.engine, Engine::Pbft) && s.verdict != driver::Verdict::ForkFree {
                result = Err(CliError::Assert("pbft forked under partition".into()));
            }
            result
        }
        Command::Analytics { common } => cmd_analytics(&common),
        Command::Replay { trace } => cmd_replay(&trace),
    }
}

fn cmd_run(common: &Common, seeds: Option<&str>, trace: bool) -> Result<(), CliError> {
    let cfg = load(common)?;
    let dir = out_dir(common, &cfg);
    if let Some(s) = seeds {
        let seeds: Vec<u64> =
            driver::parse_range(s).map_err(CliError::Usage)?.into_iter().map(|v| v as u64).collect();
        let reports = driver::run_seeds(&cfg, &seeds, common.jobs)?;
        for r in &reports {
            say!("{}", summary_line(r));
            for p in report::write_run(&dir, &format!("{}-seed{}", cfg.name, r.seed), r)? {
                say!("wrote {}", p.display());
            }
        }
        return enforce(common.check, &cfg, &reports);
    }
    let trace_path = (trace || cfg.output.trace).then(|| dir.join(format!("{}-trace.jsonl", cfg.name)));
    let writer: Option<Box<dyn Write + Send>> = match &trace_path {
        Some(p) => {
            fs::create_dir_all(&dir)?;
            let mut f = BufWriter::new(File::create(p)?);
            serde_json::to_writer(&mut f, &TraceHeader { chainbench_trace: 1, config: cfg.to_toml() })
                .map_err(io::Error::from)?;
            writeln!(f)?;
            Some(Box::new(f))
        }
        None => None,
    };
    let a = driver::run_with(&cfg, writer)?;
    let r = &a.report;
    say!("{}", summary_line(r));
    for p in report::write_run(&dir, &cfg.name, r)? {
        say!("wrote {}", p.display());
    }
    if cfg.output.chain_dump {
        let p = dir.join(format!("{}-chain.jsonl", cfg.name));
        let mut w = BufWriter::new(File::create(&p)?);
        a.outcome.observer.dump_jsonl(&mut w)?;
        w.flush()?;
        say!("wrote {}", p.display());
    }
    if let Some(p) = trace_path {
        let mut f = OpenOptions::new().append(true).open(&p)?;
        let footer = TraceFooter { trace_hash: r.trace_hash.clone(), report_sha256: report_digest(r)?.to_hex() };
        serde_json::to_writer(&mut f, &footer).map_err(io::Error::from)?;
        writeln!(f)?;
        say!("wrote {}", p.display());
    }
    enforce(common.check, &cfg, std::slice::from_ref(r))
}

fn cmd_analytics(common: &Common) -> Result<(), CliError> {
    let cfg = load(common)?;
    let a = &cfg.analytics;
    let started = std::time::Instant::now();
    let mut p = analytics::preload(a.preload_blocks, a.txns_per_block, cfg.workload.accounts, cfg.seed);
    let loaded = started.elapsed();
    let r = analytics::check_queries(&mut p, &cfg.name, a.queries, cfg.seed);
    say!(
        "{} [seed {}]: {} blocks, {} txns, {} accounts; {} Q1 + {} Q2 queries, mismatches {}/{} (preload {:.1}s, queries {:.1}s)",
        r.name,
        r.seed,
        r.blocks,
        r.txns,
        r.accounts,
        r.queries,
        r.queries,
        r.q1_mismatches,
        r.q2_mismatches,
        loaded.as_secs_f64(),
        (started.elapsed() - loaded).as_secs_f64()
    );
    let dir = out_dir(common, &cfg);
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}-analytics.json", cfg.name));
    let mut w = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut w, &r).map_err(io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    say!("wrote {}", path.display());
    if common.check && !r.all_match() {
        return Err(CliError::Assert("historical queries disagree with replay".into()));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TraceHeader {
    chainbench_trace: u32,
    config: String,
}

#[derive(Serialize, Deserialize)]
struct TraceFooter {
    trace_hash: String,
    report_sha256: String,
}

/// Digest of the exact JSON summary and CSV bytes of a report.
pub fn report_digest(r: &MetricsReport) -> io::Result<Hash256> {
    let mut bytes = Vec::new();
    report::write_summary_json(r, &mut bytes)?;
    report::write_series_csv(r, &mut bytes)?;
    Ok(Hash256::digest(&bytes))
}

fn cmd_replay(path: &Path) -> Result<(), CliError> {
    let bad = |m: &str| CliError::Usage(format!("{}: {m}", path.display()));
    let f = BufReader::new(File::open(path)?);
    let mut lines = f.lines();
    let first = lines.next().ok_or_else(|| bad("empty trace"))??;
    let header: TraceHeader = serde_json::from_str(&first).map_err(|_| bad("missing trace header"))?;
    let mut last = None;
    let mut body_lines = 0u64;
    for line in lines {
        last = Some(line?);
        body_lines += 1;
    }
    // Everything between the header and the footer is one event per line.
    let recorded_events = body_lines.saturating_sub(1);
    let footer: TraceFooter = last
        .as_deref()
        .and_then(|l| serde_json::from_str(l).ok())
        .ok_or_else(|| bad("trace is incomplete (no footer)"))?;
    let cfg = ExperimentConfig::from_toml(&header.config)?;
    let a = driver::run_with(&cfg, None)?;
    let digest = report_digest(&a.report)?.to_hex();
    say!("{}", summary_line(&a.report));
    say!("events: recorded {recorded_events}, replayed {}", a.report.trace_events);
    let trace_ok = a.report.trace_hash == footer.trace_hash && a.report.trace_events == recorded_events;
    let report_ok = digest == footer.report_sha256;
    say!("trace hash: {}", if trace_ok { "match" } else { "MISMATCH" });
    say!("report bytes: {}", if report_ok { "match" } else { "MISMATCH" });
    if trace_ok && report_ok {
        say!("replay: deterministic");
        Ok(())
    } else {
        Err(CliError::Assert("replay diverged from the recorded run".into()))
    }
}
