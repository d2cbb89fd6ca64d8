//! Stake-weighted puzzle: `H(n || H(b)) < s(M) * t`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ledger::{BlockHeader, ChainView, NodeId};

use super::pow::puzzle_digest;
use super::target::Target;
use super::ConsensusError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StakeEntry {
    pub balance: u64,
    pub last_proposed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StakeTable {
    entries: BTreeMap<NodeId, StakeEntry>,
}

impl StakeTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_balances(balances: impl IntoIterator<Item = (NodeId, u64)>) -> Self {
        let entries = balances
            .into_iter()
            .map(|(n, balance)| (n, StakeEntry { balance, last_proposed: 0 }))
            .collect();
        StakeTable { entries }
    }

    pub fn insert(&mut self, node: NodeId, balance: u64) {
        self.entries.entry(node).or_default().balance = balance;
    }

    pub fn get(&self, node: NodeId) -> Option<&StakeEntry> {
        self.entries.get(&node)
    }

    pub fn record_proposal(&mut self, node: NodeId, height: u64) {
        if let Some(e) = self.entries.get_mut(&node) {
            e.last_proposed = e.last_proposed.max(height);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &StakeEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// How a miner's stake `s(M)` is derived.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StakeFunction {
    /// `s(M) = bal(M)`.
    ConstantBalance,
    /// `s(M) = bal(M) * (now - timestamp of the current tip)`.
    #[default]
    Nxt,
}

/// Nxt stake: the miner's balance times the age of the chain tip.
pub fn nxt_stake(miner: NodeId, chain: &ChainView, stake: &StakeTable, now: u64) -> Result<u128, ConsensusError> {
    let bal = stake.get(miner).ok_or(ConsensusError::UnknownMiner(miner))?.balance;
    let age = now.saturating_sub(chain.tip_block().header.timestamp);
    Ok(bal as u128 * age as u128)
}

/// `s(M)` under the configured function, evaluated for a block proposed at
/// `now` on top of `chain`'s tip.
pub fn stake_of(
    f: StakeFunction,
    miner: NodeId,
    chain: &ChainView,
    stake: &StakeTable,
    now: u64,
) -> Result<u128, ConsensusError> {
    match f {
        StakeFunction::ConstantBalance => {
            Ok(stake.get(miner).ok_or(ConsensusError::UnknownMiner(miner))?.balance as u128)
        }
        StakeFunction::Nxt => nxt_stake(miner, chain, stake, now),
    }
}

/// Core inequality with an already evaluated stake.
pub fn pos_meets(header: &BlockHeader, t: &Target, s: u128) -> bool {
    t.scaled(s).meets(&puzzle_digest(header.nonce, &header.content_hash()))
}

/// Puzzle check for `miner` with constant-balance stake.
pub fn pos_check(header: &BlockHeader, t: &Target, stake: &StakeTable, miner: NodeId) -> Result<bool, ConsensusError> {
    let s = stake.get(miner).ok_or(ConsensusError::UnknownMiner(miner))?.balance;
    Ok(pos_meets(header, t, s as u128))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::Hash256;
    use crate::ledger::{Block, ForkMode};

    fn header(nonce: u64) -> BlockHeader {
        BlockHeader {
            height: 1,
            parent_hash: Hash256::digest(b"g"),
            proposer: NodeId(0),
            nonce,
            state_root: Hash256::ZERO,
            txn_root: Hash256::ZERO,
            timestamp: 5,
        }
    }

    #[test]
    fn zero_stake_never_passes_saturated_always_does() {
        let table = StakeTable::from_balances([(NodeId(0), 0), (NodeId(1), 1 << 20)]);
        let t = Target::pow2(240);
        for n in 0..200 {
            assert!(!pos_check(&header(n), &t, &table, NodeId(0)).unwrap());
            assert!(pos_check(&header(n), &t, &table, NodeId(1)).unwrap());
        }
        assert_eq!(pos_check(&header(0), &t, &table, NodeId(9)), Err(ConsensusError::UnknownMiner(NodeId(9))));
    }

    #[test]
    fn nxt_products() {
        let mut g = Block::genesis(Hash256::ZERO);
        g.header.timestamp = 0;
        let chain = ChainView::new(g, ForkMode::LongestChain, 5);
        let table = StakeTable::from_balances([(NodeId(0), 5), (NodeId(1), 0)]);
        assert_eq!(nxt_stake(NodeId(0), &chain, &table, 7).unwrap(), 35);
        assert_eq!(nxt_stake(NodeId(0), &chain, &table, 0).unwrap(), 0);
        assert_eq!(nxt_stake(NodeId(1), &chain, &table, 7).unwrap(), 0);
    }

    #[test]
    fn scaling_stake_and_threshold_together_preserves_decisions() {
        let t = Target::pow2(250);
        for n in 0..500 {
            let h = header(n);
            for s in [1u128, 3, 7] {
                for c in [2u128, 4, 16] {
                    assert_eq!(pos_meets(&h, &t, s), pos_meets(&h, &t.divided(c), s * c));
                }
            }
        }
    }
}
