//! Experiment schedules: single runs, seed batches, sweeps and partition
//! security runs.

use std::fmt;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig};
use crate::sim::{RunOutcome, World};

use super::metrics::MetricsReport;

pub struct RunArtifacts {
    pub report: MetricsReport,
    pub outcome: RunOutcome,
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunArtifacts, ConfigError> {
    run_with(cfg, None)
}

/// Run, optionally mirroring the event trace to `trace`.
pub fn run_with(cfg: &ExperimentConfig, trace: Option<Box<dyn Write + Send>>) -> Result<RunArtifacts, ConfigError> {
    let mut world = World::new(cfg)?;
    if let Some(w) = trace {
        world.set_trace_writer(w);
    }
    let outcome = world.run();
    Ok(RunArtifacts { report: MetricsReport::new(cfg, &outcome), outcome })
}

/// Run independent configurations on up to `jobs` threads. Results come back
/// in input order and do not depend on `jobs`.
pub fn run_many(cfgs: &[ExperimentConfig], jobs: usize) -> Result<Vec<MetricsReport>, ConfigError> {
    for c in cfgs {
        c.validate()?;
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<MetricsReport, ConfigError>>>> = cfgs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, cfgs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = cfgs.get(i) else { break };
                let r = run(cfg).map(|a| a.report);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("slot lock").expect("every slot filled")).collect()
}

/// The same experiment under several seeds.
pub fn run_seeds(cfg: &ExperimentConfig, seeds: &[u64], jobs: usize) -> Result<Vec<MetricsReport>, ConfigError> {
    let cfgs: Vec<_> = seeds.iter().map(|&seed| ExperimentConfig { seed, ..cfg.clone() }).collect();
    run_many(&cfgs, jobs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepDimension {
    Nodes,
    Clients,
    /// Nodes and clients grow together.
    Both,
}

/// `"4:16:4"` (inclusive start:end:step), `"4:16"` (step 1) or `"4,8,16"`.
pub fn parse_range(s: &str) -> Result<Vec<usize>, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad number {t:?} in range: {e}"));
    let values = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let (a, b, step) = match parts.as_slice() {
            [a, b] => (num(a)?, num(b)?, 1),
            [a, b, c] => (num(a)?, num(b)?, num(c)?),
            _ => return Err(format!("range {s:?} must be start:end or start:end:step")),
        };
        if step == 0 || a > b {
            return Err(format!("range {s:?} is empty"));
        }
        (a..=b).step_by(step).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(format!("range {s:?} must list positive sizes"));
    }
    Ok(values)
}

pub fn sweep(
    cfg: &ExperimentConfig,
    dim: SweepDimension,
    values: &[usize],
    jobs: usize,
) -> Result<Vec<MetricsReport>, ConfigError> {
    let cfgs: Vec<_> = values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            match dim {
                SweepDimension::Nodes => c.topology.nodes = v,
                SweepDimension::Clients => c.workload.clients = v,
                SweepDimension::Both => {
                    c.topology.nodes = v;
                    c.workload.clients = v;
                }
            }
            c.name = format!("{}-{}{}", cfg.name, serde_json::to_value(dim).unwrap().as_str().unwrap_or(""), v);
            c
        })
        .collect();
    run_many(&cfgs, jobs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    ForkExposed,
    ForkFree,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::ForkExposed => "fork-exposed",
            Verdict::ForkFree => "fork-free",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DeltaPoint {
    pub time_s: u64,
    pub delta: u64,
    pub total_blocks: u64,
    pub main_blocks: u64,
}

pub struct SecurityReport {
    pub series: Vec<DeltaPoint>,
    pub verdict: Verdict,
    pub report: MetricsReport,
}

impl SecurityReport {
    /// Largest delta observed in `[from_s, to_s]`.
    pub fn max_delta_between(&self, from_s: u64, to_s: u64) -> u64 {
        self.series.iter().filter(|p| p.time_s >= from_s && p.time_s <= to_s).map(|p| p.delta).max().unwrap_or(0)
    }

    /// Share of appended blocks that ended up off the main branch.
    pub fn forked_share(&self) -> f64 {
        1.0 - self.report.security.ratio
    }
}

/// Sample the fork delta every simulated second; the run is fork-free when
/// every sample is zero and no certified blocks conflict.
pub fn security_run(cfg: &ExperimentConfig) -> Result<SecurityReport, ConfigError> {
    let a = run(cfg)?;
    let series: Vec<DeltaPoint> = a
        .report
        .series
        .iter()
        .map(|s| DeltaPoint { time_s: s.time_s, delta: s.delta, total_blocks: s.total_blocks, main_blocks: s.main_blocks })
        .collect();
    let fork_free = series.iter().all(|p| p.delta == 0) && a.outcome.conflicts == 0 && a.outcome.fork.delta == 0;
    Ok(SecurityReport { series, verdict: if fork_free { Verdict::ForkFree } else { Verdict::ForkExposed }, report: a.report })
}
