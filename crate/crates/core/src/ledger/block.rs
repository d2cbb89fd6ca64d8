use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::hash::{merkle_root, Hash256};
use crate::ledger::signer::Signature;
use crate::ledger::transaction::Transaction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub height: u64,
    pub parent_hash: Hash256,
    pub proposer: NodeId,
    pub nonce: u64,
    pub state_root: Hash256,
    pub txn_root: Hash256,
    pub timestamp: u64,
}

impl BlockHeader {
    pub fn encode(&self, e: &mut Encoder) {
        e.u64(self.height)
            .digest(&self.parent_hash)
            .u32(self.proposer.0)
            .u64(self.nonce)
            .digest(&self.state_root)
            .digest(&self.txn_root)
            .u64(self.timestamp);
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(BlockHeader {
            height: d.u64()?,
            parent_hash: d.digest()?,
            proposer: NodeId(d.u32()?),
            nonce: d.u64()?,
            state_root: d.digest()?,
            txn_root: d.digest()?,
            timestamp: d.u64()?,
        })
    }

    /// Digest of the header with the nonce omitted: the block content that
    /// a proof-of-work or proof-of-stake solution is bound to.
    pub fn content_hash(&self) -> Hash256 {
        let mut e = Encoder::with_capacity(128);
        e.u64(self.height)
            .digest(&self.parent_hash)
            .u32(self.proposer.0)
            .digest(&self.state_root)
            .digest(&self.txn_root)
            .u64(self.timestamp);
        Hash256::digest(e.as_slice())
    }
}

/// Deterministic digest over the canonical header encoding.
pub fn hash_header(h: &BlockHeader) -> Hash256 {
    let mut e = Encoder::with_capacity(136);
    h.encode(&mut e);
    Hash256::digest(e.as_slice())
}

/// Engine-specific evidence that a block may extend the chain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    /// Genesis only.
    None,
    /// The puzzle solution lives in `header.nonce`.
    Work,
    /// Proposer signature over the header hash.
    Authority { signature: Signature },
    /// Commit votes over the ordered batch.
    Quorum { view: u64, votes: Vec<(NodeId, Signature)> },
    /// Sequencer signature over the header hash.
    Sequencer { signature: Signature },
}

impl Certificate {
    fn encode(&self, e: &mut Encoder) {
        match self {
            Certificate::None => {
                e.u8(0);
            }
            Certificate::Work => {
                e.u8(1);
            }
            Certificate::Authority { signature } => {
                e.u8(2).digest(&signature.0);
            }
            Certificate::Quorum { view, votes } => {
                e.u8(3).u64(*view).u32(votes.len() as u32);
                for (n, s) in votes {
                    e.u32(n.0).digest(&s.0);
                }
            }
            Certificate::Sequencer { signature } => {
                e.u8(4).digest(&signature.0);
            }
        }
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let offset = d.offset();
        Ok(match d.u8()? {
            0 => Certificate::None,
            1 => Certificate::Work,
            2 => Certificate::Authority { signature: Signature(d.digest()?) },
            3 => {
                let view = d.u64()?;
                let n = d.u32()? as usize;
                let mut votes = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    votes.push((NodeId(d.u32()?), Signature(d.digest()?)));
                }
                Certificate::Quorum { view, votes }
            }
            4 => Certificate::Sequencer { signature: Signature(d.digest()?) },
            tag => return Err(DecodeError::BadTag { tag, offset }),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub txns: Vec<Arc<Transaction>>,
    pub cert: Certificate,
}

impl Block {
    pub fn hash(&self) -> Hash256 {
        hash_header(&self.header)
    }

    pub fn height(&self) -> u64 {
        self.header.height
    }

    pub fn genesis(state_root: Hash256) -> Self {
        Block {
            header: BlockHeader {
                height: 0,
                parent_hash: Hash256::ZERO,
                proposer: NodeId(0),
                nonce: 0,
                state_root,
                txn_root: Hash256::ZERO,
                timestamp: 0,
            },
            txns: Vec::new(),
            cert: Certificate::None,
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.header.height == 0 && self.header.parent_hash.is_zero()
    }

    pub fn compute_txn_root(txns: &[Arc<Transaction>]) -> Hash256 {
        let ids: Vec<Hash256> = txns.iter().map(|t| t.id).collect();
        merkle_root(&ids)
    }

    pub fn encode(&self, e: &mut Encoder) {
        self.header.encode(e);
        e.u32(self.txns.len() as u32);
        for t in &self.txns {
            t.encode(e);
        }
        self.cert.encode(e);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::with_capacity(256 + 160 * self.txns.len());
        self.encode(&mut e);
        e.finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(b);
        let header = BlockHeader::decode(&mut d)?;
        let n = d.u32()? as usize;
        let mut txns = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            txns.push(Arc::new(Transaction::decode(&mut d)?));
        }
        let cert = Certificate::decode(&mut d)?;
        d.finish()?;
        Ok(Block { header, txns, cert })
    }
}
