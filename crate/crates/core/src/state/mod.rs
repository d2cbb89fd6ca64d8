//! Versioned state with per-block commitments.

mod store;

pub use store::{
    bucket_digest, bucket_of, entry_digest, latest_key, version_key, StateError, StateStore,
    VersionRecord, VersionedEntry, DEFAULT_NUM_BUCKETS,
};

use serde::{Deserialize, Serialize};

use crate::codec::{Decoder, Encoder};

/// `(from, to, value)` triple recorded for every transfer in a block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxnSummary {
    pub from: String,
    pub to: String,
    pub value: i64,
}

pub fn block_list_key(height: u64) -> Vec<u8> {
    format!("block:{height}").into_bytes()
}

pub fn encode_txn_list(list: &[TxnSummary]) -> Vec<u8> {
    let mut e = Encoder::new();
    e.u32(list.len() as u32);
    for t in list {
        e.str(&t.from).str(&t.to).i64(t.value);
    }
    e.finish()
}

pub fn decode_txn_list(b: &[u8]) -> Option<Vec<TxnSummary>> {
    let mut d = Decoder::new(b);
    let n = d.u32().ok()? as usize;
    let mut out = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        out.push(TxnSummary { from: d.str().ok()?, to: d.str().ok()?, value: d.i64().ok()? });
    }
    d.finish().ok()?;
    Some(out)
}

/// Transfers recorded for the block at `height`.
pub fn query_block_txn_list(store: &StateStore, height: u64) -> Result<Vec<TxnSummary>, StateError> {
    let raw = store.get_latest(&block_list_key(height)).ok_or(StateError::UnknownBlock(height))?;
    decode_txn_list(raw).ok_or_else(|| StateError::CorruptRecord(format!("block:{height}")))
}
