use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::netsim::{NetStats, Tick, TICKS_PER_SECOND};
use crate::sim::{NodeStats, RunOutcome, Sample};

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[Tick], p: f64) -> Option<Tick> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencySummary {
    pub count: u64,
    pub p50_ms: Option<Tick>,
    pub p95_ms: Option<Tick>,
    pub p99_ms: Option<Tick>,
    pub max_ms: Option<Tick>,
}

impl LatencySummary {
    pub fn from_sorted(l: &[Tick]) -> Self {
        LatencySummary {
            count: l.len() as u64,
            p50_ms: percentile(l, 50.0),
            p95_ms: percentile(l, 95.0),
            p99_ms: percentile(l, 99.0),
            max_ms: l.last().copied(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SecuritySummary {
    pub total_blocks: u64,
    pub main_blocks: u64,
    pub delta: u64,
    /// main / total; 1 when no block was appended.
    pub ratio: f64,
    /// Heights at which two certified blocks disagree.
    pub conflicts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LivenessSummary {
    pub stalled: bool,
    pub stall_at_s: Option<f64>,
    pub longest_gap_s: f64,
    pub view_changes: u64,
    pub max_view: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub name: String,
    pub engine: &'static str,
    pub nodes: usize,
    pub clients: usize,
    pub workload: String,
    pub seed: u64,
    pub duration_s: f64,
    /// Successful transactions per second of simulated time.
    pub throughput: f64,
    pub committed: u64,
    pub issued: u64,
    pub reverted: u64,
    pub aborted: u64,
    pub timed_out: u64,
    pub latency: LatencySummary,
    pub security: SecuritySummary,
    pub liveness: LivenessSummary,
    pub network: NetStats,
    pub node: NodeStats,
    pub final_height: u64,
    pub final_state_root: String,
    pub smallbank_conserved: Option<bool>,
    pub trace_hash: String,
    pub trace_events: u64,
    #[serde(skip)]
    pub series: Vec<Sample>,
}

impl MetricsReport {
    pub fn new(cfg: &ExperimentConfig, out: &RunOutcome) -> Self {
        let duration_s = out.duration_ticks as f64 / TICKS_PER_SECOND as f64;
        let workload = serde_json::to_value(cfg.workload.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        MetricsReport {
            name: cfg.name.clone(),
            engine: cfg.consensus.engine.name(),
            nodes: cfg.topology.nodes,
            clients: cfg.workload.clients,
            workload,
            seed: cfg.seed,
            duration_s,
            throughput: if duration_s > 0.0 { out.totals.committed as f64 / duration_s } else { 0.0 },
            committed: out.totals.committed,
            issued: out.totals.issued,
            reverted: out.totals.reverted,
            aborted: out.totals.aborted,
            timed_out: out.totals.timed_out,
            latency: LatencySummary::from_sorted(&out.latencies),
            security: SecuritySummary {
                total_blocks: out.fork.total_blocks,
                main_blocks: out.fork.main_blocks,
                delta: out.fork.delta,
                ratio: out.fork.ratio(),
                conflicts: out.conflicts,
            },
            liveness: LivenessSummary {
                stalled: out.stall_at.is_some(),
                stall_at_s: out.stall_at.map(|t| t as f64 / TICKS_PER_SECOND as f64),
                longest_gap_s: out.longest_gap as f64 / TICKS_PER_SECOND as f64,
                view_changes: out.view_changes,
                max_view: out.max_view,
            },
            network: out.net,
            node: out.nodes,
            final_height: out.final_height,
            final_state_root: out.final_root.to_hex(),
            smallbank_conserved: out.conservation,
            trace_hash: out.trace_hash.to_hex(),
            trace_events: out.trace_events,
            series: out.samples.clone(),
        }
    }

    /// Successful transactions per second within `[from_s, to_s)`.
    pub fn rate_between(&self, from_s: u64, to_s: u64) -> f64 {
        let n: u64 = self.series.iter().filter(|s| s.time_s > from_s && s.time_s <= to_s).map(|s| s.committed).sum();
        if to_s > from_s {
            n as f64 / (to_s - from_s) as f64
        } else {
            0.0
        }
    }

    /// Main-branch height at the sample closest to `t_s`.
    pub fn height_at(&self, t_s: u64) -> u64 {
        self.series.iter().take_while(|s| s.time_s <= t_s).last().map_or(0, |s| s.height)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<Tick> = (1..=100).collect();
        assert_eq!(percentile(&v, 50.0), Some(50));
        assert_eq!(percentile(&v, 95.0), Some(95));
        assert_eq!(percentile(&v, 99.0), Some(99));
        assert_eq!(percentile(&v, 100.0), Some(100));
        assert_eq!(percentile(&[7], 1.0), Some(7));
        assert_eq!(percentile(&[], 50.0), None);
        assert_eq!(percentile(&[1, 2, 3, 4], 50.0), Some(2));
    }
}
