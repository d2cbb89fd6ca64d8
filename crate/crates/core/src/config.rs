//! Experiment configuration files.
//!
//! One TOML document describes a whole run. Every section rejects unknown
//! keys so a typo fails loudly instead of silently falling back to a
//! default. All times inside `[faults]` and `[consensus]` are in ticks
//! (1 tick = 1 ms of simulated time).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::workload::WorkloadSpec;
use crate::consensus::{Behavior, ConsensusConfig, Engine};
use crate::netsim::{FaultSchedule, NetConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {msg}")]
    Invalid { field: &'static str, msg: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adversary {
    pub node: u32,
    pub behavior: Behavior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Topology {
    pub nodes: usize,
    /// Nodes that deviate from the protocol (PBFT only).
    pub byzantine: Vec<Adversary>,
}

impl Default for Topology {
    fn default() -> Self {
        Topology { nodes: 8, byzantine: Vec::new() }
    }
}

/// Simulated processing costs in microseconds of node CPU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    /// CPU budget each node gets per tick.
    pub cpu_per_tick: u64,
    /// Checking one client request's signature.
    pub verify_txn: u64,
    /// Fixed cost of handling any node-to-node message.
    pub consensus_msg: u64,
    /// Extra cost per transaction carried inside a message.
    pub per_txn_in_msg: u64,
    pub exec_txn: u64,
    pub exec_step: u64,
    /// Optional cap on client requests a node admits per second.
    pub admission_rate: Option<f64>,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            cpu_per_tick: 1_000,
            verify_txn: 200,
            consensus_msg: 50,
            per_txn_in_msg: 2,
            exec_txn: 40,
            exec_step: 10,
            admission_rate: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// No commit for this long while requests are outstanding is a stall.
    pub stall_horizon_s: u64,
    /// Closed-loop threads give up on a request after this long.
    pub request_timeout_s: u64,
    pub state_buckets: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { stall_horizon_s: 30, request_timeout_s: 30, state_buckets: 256 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Write the full JSON-lines event trace.
    pub trace: bool,
    /// Write the observer's block forest as JSON lines.
    pub chain_dump: bool,
}

/// Historical-query experiment: a preloaded chain and random range queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticsConfig {
    pub preload_blocks: u64,
    pub txns_per_block: usize,
    pub queries: u64,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        AnalyticsConfig { preload_blocks: 10_000, txns_per_block: 3, queries: 100 }
    }
}

/// Checks enforced by `--assert`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Expectations {
    pub fork_free: Option<bool>,
    pub stalled: Option<bool>,
    pub min_throughput: Option<f64>,
    pub max_throughput: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub duration_s: u64,
    pub topology: Topology,
    pub consensus: ConsensusConfig,
    pub workload: WorkloadSpec,
    pub network: NetConfig,
    pub faults: FaultSchedule,
    pub costs: CostModel,
    pub metrics: MetricsConfig,
    pub analytics: AnalyticsConfig,
    pub output: OutputConfig,
    pub expect: Expectations,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            seed: 1,
            duration_s: 60,
            topology: Topology::default(),
            consensus: ConsensusConfig::default(),
            workload: WorkloadSpec::default(),
            network: NetConfig::default(),
            faults: FaultSchedule::default(),
            costs: CostModel::default(),
            metrics: MetricsConfig::default(),
            analytics: AnalyticsConfig::default(),
            output: OutputConfig::default(),
            expect: Expectations::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.topology.nodes;
        if n == 0 {
            return Err(ConfigError::Invalid { field: "topology.nodes", msg: "must be at least 1".into() });
        }
        if self.duration_s == 0 {
            return Err(ConfigError::Invalid { field: "duration_s", msg: "must be positive".into() });
        }
        self.consensus
            .validate(n)
            .map_err(|e| ConfigError::Invalid { field: "consensus", msg: e.to_string() })?;
        self.workload.validate().map_err(|msg| ConfigError::Invalid { field: "workload", msg })?;
        self.faults.validate(n).map_err(|msg| ConfigError::Invalid { field: "faults", msg })?;
        if !(0.0..=1.0).contains(&self.network.corruption_rate) {
            return Err(ConfigError::Invalid {
                field: "network.corruption_rate",
                msg: format!("{} is not a probability", self.network.corruption_rate),
            });
        }
        if self.network.queue_capacity == 0 {
            return Err(ConfigError::Invalid { field: "network.queue_capacity", msg: "must be positive".into() });
        }
        if self.costs.cpu_per_tick == 0 {
            return Err(ConfigError::Invalid { field: "costs.cpu_per_tick", msg: "must be positive".into() });
        }
        if self.metrics.state_buckets == 0 {
            return Err(ConfigError::Invalid { field: "metrics.state_buckets", msg: "must be positive".into() });
        }
        for a in &self.topology.byzantine {
            if a.node as usize >= n {
                return Err(ConfigError::Invalid {
                    field: "topology.byzantine",
                    msg: format!("node {} does not exist", a.node),
                });
            }
            if self.consensus.engine != Engine::Pbft {
                return Err(ConfigError::Invalid {
                    field: "topology.byzantine",
                    msg: "adversarial behaviours are only modelled for pbft".into(),
                });
            }
        }
        Ok(())
    }

    pub fn behavior_of(&self, node: u32) -> Behavior {
        self.topology.byzantine.iter().find(|a| a.node == node).map_or(Behavior::Honest, |a| a.behavior)
    }
}
