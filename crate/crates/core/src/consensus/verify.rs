//! Certificate checks plugged into [`ChainView::append`](crate::ledger::ChainView::append).

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::hash::Hash256;
use crate::ledger::{Block, CertVerifier, Certificate, NodeId, Principal, Signer};

use super::pbft::{self, Phase};
use super::poa::poa_validate;
use super::pos::{pos_meets, StakeFunction, StakeTable};
use super::pow::pow_verify;
use super::target::Target;

pub struct PowVerifier {
    pub target: Target,
}

impl CertVerifier for PowVerifier {
    fn verify(&self, block: &Block, _parent: &Block) -> Result<(), String> {
        if block.cert != Certificate::Work {
            return Err("expected a work certificate".into());
        }
        if !pow_verify(&block.header, &self.target) {
            return Err("nonce does not meet the threshold".into());
        }
        Ok(())
    }
}

pub struct PosVerifier {
    pub target: Target,
    pub stake: StakeTable,
    pub function: StakeFunction,
}

impl PosVerifier {
    /// `s(M)` for a block mined on `parent` at the block's own timestamp.
    pub fn stake_for(&self, miner: NodeId, timestamp: u64, parent: &Block) -> Option<u128> {
        let bal = self.stake.get(miner)?.balance as u128;
        Some(match self.function {
            StakeFunction::ConstantBalance => bal,
            StakeFunction::Nxt => bal * timestamp.saturating_sub(parent.header.timestamp) as u128,
        })
    }
}

impl CertVerifier for PosVerifier {
    fn verify(&self, block: &Block, parent: &Block) -> Result<(), String> {
        if block.cert != Certificate::Work {
            return Err("expected a work certificate".into());
        }
        let s = self
            .stake_for(block.header.proposer, block.header.timestamp, parent)
            .ok_or_else(|| format!("unknown miner {}", block.header.proposer))?;
        if !pos_meets(&block.header, &self.target, s) {
            return Err("nonce does not meet the stake-scaled threshold".into());
        }
        Ok(())
    }
}

pub struct PoaVerifier {
    pub authorities: Vec<NodeId>,
    pub step_duration: u64,
    pub signer: Arc<dyn Signer>,
}

impl CertVerifier for PoaVerifier {
    fn verify(&self, block: &Block, parent: &Block) -> Result<(), String> {
        poa_validate(block, parent, &self.authorities, self.step_duration, self.signer.as_ref())
    }
}

/// Digest the committing replicas voted on, recomputed from the header.
pub fn batch_digest_of(block: &Block) -> Hash256 {
    pbft::Batch::new(block.header.height, block.header.proposer, block.header.timestamp, block.txns.clone()).digest()
}

pub struct QuorumVerifier {
    pub n: usize,
    pub f: usize,
    pub signer: Arc<dyn Signer>,
}

impl CertVerifier for QuorumVerifier {
    fn verify(&self, block: &Block, _parent: &Block) -> Result<(), String> {
        let Certificate::Quorum { view, votes } = &block.cert else {
            return Err("expected a quorum certificate".into());
        };
        let digest = batch_digest_of(block);
        let msg = pbft::vote_digest(Phase::Commit, *view, block.header.height, &digest);
        let mut valid = BTreeSet::new();
        for (who, sig) in votes {
            if (who.0 as usize) < self.n && self.signer.verify(Principal::Node(who.0), &msg, sig) {
                valid.insert(*who);
            }
        }
        if valid.len() < self.n - self.f {
            return Err(format!("{} valid commit votes, need {}", valid.len(), self.n - self.f));
        }
        Ok(())
    }
}

pub struct SequencerVerifier {
    pub sequencer: NodeId,
    pub signer: Arc<dyn Signer>,
}

impl CertVerifier for SequencerVerifier {
    fn verify(&self, block: &Block, _parent: &Block) -> Result<(), String> {
        let Certificate::Sequencer { signature } = &block.cert else {
            return Err("expected a sequencer certificate".into());
        };
        if block.header.proposer != self.sequencer
            || !self.signer.verify(Principal::Node(self.sequencer.0), &batch_digest_of(block), signature)
        {
            return Err("batch not signed by the sequencer".into());
        }
        Ok(())
    }
}
