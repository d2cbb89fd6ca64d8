//! Consensus engines: puzzles for PoW and PoS, round-robin authority
//! slots, the PBFT replica and a central sequencer.

pub mod pbft;
pub mod poa;
pub mod pos;
pub mod pow;
pub mod sequencer;
pub mod target;
pub mod verify;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::NodeId;

pub use pbft::{Batch, Behavior, PbftMessage, PbftOutput, PbftParams, PbftReplica};
pub use poa::poa_proposer;
pub use pos::{nxt_stake, pos_check, StakeFunction, StakeTable};
pub use pow::{pow_solve, pow_verify, puzzle_digest, Solution};
pub use sequencer::{central_sequence, OrderedBatch, SequenceFollower, Sequencer};
pub use target::Target;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConsensusError {
    #[error("threshold must be positive")]
    ZeroTarget,
    #[error("miner {0} has no stake entry")]
    UnknownMiner(NodeId),
    #[error("invalid consensus configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    Pow,
    Pos,
    Poa,
    Pbft,
    Sequencer,
}

impl Engine {
    pub fn is_final(self) -> bool {
        matches!(self, Engine::Pbft | Engine::Sequencer)
    }

    /// Per-client open-loop request rate used when none is configured.
    pub fn default_request_rate(self) -> f64 {
        if self.is_final() {
            320.0
        } else {
            160.0
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Engine::Pow => "pow",
            Engine::Pos => "pos",
            Engine::Poa => "poa",
            Engine::Pbft => "pbft",
            Engine::Sequencer => "sequencer",
        }
    }
}

/// Engine parameters. Times are in ticks (1 tick = 1 ms).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusConfig {
    pub engine: Engine,
    /// Puzzle threshold `t`. When absent it is derived from
    /// `block_interval` and the miner count.
    pub difficulty_t: Option<Target>,
    /// Target mean block interval for puzzle engines.
    pub block_interval: u64,
    pub batch_size: usize,
    pub batch_timeout: u64,
    pub step_duration: u64,
    /// Defaults to 20 batch timeouts.
    pub view_change_timeout: Option<u64>,
    pub checkpoint_interval: u64,
    pub pbft_window: u64,
    /// Node indices; empty means every node.
    pub authorities: Vec<u32>,
    pub confirmation_depth: u64,
    pub stake_function: StakeFunction,
    /// Per-node balances; missing entries default to 1.
    pub stakes: Vec<u64>,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            engine: Engine::Pbft,
            difficulty_t: None,
            block_interval: 2_500,
            batch_size: 500,
            batch_timeout: 250,
            step_duration: 1_000,
            view_change_timeout: None,
            checkpoint_interval: 10,
            pbft_window: 40,
            authorities: Vec::new(),
            confirmation_depth: 5,
            stake_function: StakeFunction::Nxt,
            stakes: Vec::new(),
        }
    }
}

impl ConsensusConfig {
    pub fn validate(&self, nodes: usize) -> Result<(), ConsensusError> {
        let bad = |m: String| Err(ConsensusError::InvalidConfig(m));
        if nodes == 0 {
            return bad("at least one node is required".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.step_duration == 0 || self.block_interval == 0 || self.checkpoint_interval == 0 {
            return bad("step_duration, block_interval and checkpoint_interval must be positive".into());
        }
        if let Some(a) = self.authorities.iter().find(|&&a| a as usize >= nodes) {
            return bad(format!("authority {a} is not one of the {nodes} nodes"));
        }
        if self.difficulty_t.is_some_and(|t| t.is_zero()) {
            return bad("difficulty_t must be positive".into());
        }
        if self.engine == Engine::Pbft && nodes < 4 {
            return bad(format!("PBFT needs N >= 3f + 1 with f >= 1; got {nodes} nodes"));
        }
        Ok(())
    }

    pub fn authority_list(&self, nodes: usize) -> Vec<NodeId> {
        if self.authorities.is_empty() {
            (0..nodes as u32).map(NodeId).collect()
        } else {
            self.authorities.iter().map(|&a| NodeId(a)).collect()
        }
    }

    pub fn stake_table(&self, nodes: usize) -> StakeTable {
        StakeTable::from_balances((0..nodes).map(|i| (NodeId(i as u32), self.stakes.get(i).copied().unwrap_or(1))))
    }

    pub fn view_change_timeout(&self) -> u64 {
        self.view_change_timeout.unwrap_or(20 * self.batch_timeout)
    }

    pub fn pbft_params(&self, nodes: usize) -> PbftParams {
        PbftParams {
            n: nodes,
            f: pbft::max_faulty(nodes),
            batch_size: self.batch_size,
            batch_timeout: self.batch_timeout,
            view_change_timeout: self.view_change_timeout(),
            checkpoint_interval: self.checkpoint_interval,
            window: self.pbft_window,
        }
    }

    /// Threshold for the puzzle engines. Each miner draws one candidate per
    /// tick, so PoW blocks arrive every `2^256 / (t * miners)` ticks. For
    /// Nxt stake the success rate grows linearly with tip age `a`, giving a
    /// Rayleigh-distributed interval with mean `sqrt(pi * 2^256 / (2 B t))`
    /// for total balance `B`; `t` is solved from that.
    pub fn threshold(&self, miners: usize) -> Target {
        if let Some(t) = self.difficulty_t {
            return t;
        }
        let i = self.block_interval;
        match self.engine {
            Engine::Pos => {
                let total: u64 = self.stake_table(miners).iter().map(|(_, e)| e.balance).sum::<u64>().max(1);
                match self.stake_function {
                    StakeFunction::ConstantBalance => Target::for_interval(i, total),
                    StakeFunction::Nxt => Target::for_interval(i.saturating_mul(i), total).scaled(157).divided(100),
                }
            }
            _ => Target::for_interval(i, miners as u64),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_keys() {
        let err = toml::from_str::<ConsensusConfig>("engine = \"pow\"\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let c: ConsensusConfig = toml::from_str("engine = \"poa\"\nstep_duration = 2000\n").unwrap();
        assert_eq!(c.engine, Engine::Poa);
        assert_eq!(c.step_duration, 2000);
        assert_eq!(c.batch_size, 500);
    }

    #[test]
    fn derived_pow_threshold() {
        let c = ConsensusConfig { engine: Engine::Pow, block_interval: 16, ..Default::default() };
        assert_eq!(c.threshold(1), Target::pow2(252));
    }
}
