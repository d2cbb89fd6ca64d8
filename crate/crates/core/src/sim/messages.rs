use std::sync::Arc;

use crate::consensus::{OrderedBatch, PbftMessage};
use crate::contracts::ReceiptStatus;
use crate::hash::Hash256;
use crate::ledger::{Block, Transaction};
use crate::netsim::{Class, Payload};

#[derive(Clone, Debug)]
pub enum Message {
    /// Client to its home node.
    Request(Arc<Transaction>),
    /// A request relayed between nodes.
    Forward(Arc<Transaction>),
    /// Node to client once the request is final.
    Reply { txn_id: Hash256, status: ReceiptStatus, height: u64 },
    Block(Arc<Block>),
    GetBlock { hash: Hash256 },
    /// Main-branch blocks `from..=to`.
    GetBlocks { from: u64, to: u64 },
    Blocks(Vec<Arc<Block>>),
    Status { height: u64, tip: Hash256 },
    Pbft(PbftMessage),
    Ordered(OrderedBatch),
}

impl Message {
    /// Transactions carried, for cost accounting.
    pub fn txn_count(&self) -> usize {
        match self {
            Message::Request(_) | Message::Forward(_) => 1,
            Message::Block(b) => b.txns.len(),
            Message::Blocks(bs) => bs.iter().map(|b| b.txns.len()).sum(),
            Message::Pbft(m) => m.txn_count(),
            Message::Ordered(ob) => ob.batch.txns.len(),
            _ => 0,
        }
    }
}

impl Payload for Message {
    fn kind(&self) -> &'static str {
        match self {
            Message::Request(_) => "request",
            Message::Forward(_) => "forward",
            Message::Reply { .. } => "reply",
            Message::Block(_) => "block",
            Message::GetBlock { .. } => "get-block",
            Message::GetBlocks { .. } => "get-blocks",
            Message::Blocks(_) => "blocks",
            Message::Status { .. } => "status",
            Message::Pbft(m) => m.kind(),
            Message::Ordered(_) => "ordered-batch",
        }
    }

    fn class(&self) -> Class {
        match self {
            Message::Request(_) | Message::Forward(_) => Class::Client,
            _ => Class::Consensus,
        }
    }
}
