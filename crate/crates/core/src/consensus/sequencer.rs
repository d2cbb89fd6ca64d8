//! Crash-tolerant central ordering.
//!
//! One designated node assigns every request a position in a single stream
//! of batches; replicas apply batches strictly in stream order. Nothing
//! checks the sequencer's honesty beyond its signature, so a faulty
//! sequencer can break agreement.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::sync::Arc;

use crate::hash::Hash256;
use crate::ledger::{NodeId, Principal, Signature, Signer, Transaction};

use super::pbft::Batch;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrderedBatch {
    pub batch: Arc<Batch>,
    pub sig: Signature,
}

/// Split `txns` into consecutive batches numbered from `first_seq`.
pub fn central_sequence(
    txns: &[Arc<Transaction>],
    batch_size: usize,
    first_seq: u64,
    sequencer: NodeId,
    timestamp: u64,
) -> Vec<Batch> {
    txns.chunks(batch_size.max(1))
        .enumerate()
        .map(|(i, c)| Batch::new(first_seq + i as u64, sequencer, timestamp, c.to_vec()))
        .collect()
}

pub struct Sequencer {
    id: NodeId,
    batch_size: usize,
    batch_timeout: u64,
    signer: Arc<dyn Signer>,
    next_seq: u64,
    pool: VecDeque<Arc<Transaction>>,
    seen: HashSet<Hash256>,
    started: Option<u64>,
}

impl Sequencer {
    pub fn new(id: NodeId, batch_size: usize, batch_timeout: u64, signer: Arc<dyn Signer>) -> Self {
        Sequencer {
            id,
            batch_size: batch_size.max(1),
            batch_timeout,
            signer,
            next_seq: 1,
            pool: VecDeque::new(),
            seen: HashSet::new(),
            started: None,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn backlog(&self) -> usize {
        self.pool.len()
    }

    pub fn submit(&mut self, txn: Arc<Transaction>, now: u64) -> bool {
        if !self.seen.insert(txn.id) {
            return false;
        }
        self.pool.push_back(txn);
        self.started.get_or_insert(now);
        true
    }

    /// Cut every batch that is full or whose oldest request timed out.
    pub fn tick(&mut self, now: u64) -> Vec<OrderedBatch> {
        let mut out = Vec::new();
        while !self.pool.is_empty() {
            let timed_out = self.started.is_some_and(|t| now.saturating_sub(t) >= self.batch_timeout);
            if self.pool.len() < self.batch_size && !timed_out {
                break;
            }
            let take = self.pool.len().min(self.batch_size);
            let txns: Vec<_> = self.pool.drain(..take).collect();
            let batch = Arc::new(Batch::new(self.next_seq, self.id, now, txns));
            self.next_seq += 1;
            let sig = self.signer.sign(Principal::Node(self.id.0), &batch.digest());
            out.push(OrderedBatch { batch, sig });
            self.started = if self.pool.is_empty() { None } else { Some(now) };
        }
        out
    }
}

/// Replica side: reorders the stream and releases batches contiguously.
pub struct SequenceFollower {
    sequencer: NodeId,
    signer: Arc<dyn Signer>,
    next: u64,
    buffer: BTreeMap<u64, Arc<Batch>>,
}

impl SequenceFollower {
    pub fn new(sequencer: NodeId, signer: Arc<dyn Signer>) -> Self {
        SequenceFollower { sequencer, signer, next: 1, buffer: BTreeMap::new() }
    }

    pub fn next_expected(&self) -> u64 {
        self.next
    }

    /// Lowest missing sequence number if later ones are buffered.
    pub fn gap(&self) -> Option<u64> {
        self.buffer.keys().next().filter(|&&s| s > self.next).map(|_| self.next)
    }

    /// Returns the batches that became deliverable; rejects bad signatures.
    pub fn accept(&mut self, ob: OrderedBatch) -> Result<Vec<Arc<Batch>>, String> {
        if !self.signer.verify(Principal::Node(self.sequencer.0), &ob.batch.digest(), &ob.sig) {
            return Err(format!("batch {} not signed by the sequencer", ob.batch.seq));
        }
        if !ob.batch.is_consistent() {
            return Err(format!("batch {} digest mismatch", ob.batch.seq));
        }
        if ob.batch.seq >= self.next {
            self.buffer.entry(ob.batch.seq).or_insert(ob.batch);
        }
        let mut ready = Vec::new();
        while let Some(b) = self.buffer.remove(&self.next) {
            ready.push(b);
            self.next += 1;
        }
        Ok(ready)
    }

    /// Skip ahead after fetching blocks up to `height` by other means.
    pub fn advance_to(&mut self, height: u64) {
        if height >= self.next {
            self.next = height + 1;
            self.buffer = self.buffer.split_off(&self.next);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{AccountId, KeyedHashSigner};

    fn txn(i: u64) -> Arc<Transaction> {
        Arc::new(Transaction::new(AccountId(i), "donothing", "invoke", vec![], i, 0, &KeyedHashSigner))
    }

    #[test]
    fn followers_deliver_in_stream_order() {
        let signer: Arc<dyn Signer> = Arc::new(KeyedHashSigner);
        let mut s = Sequencer::new(NodeId(0), 2, 10, signer.clone());
        for i in 0..5 {
            s.submit(txn(i), 0);
        }
        let mut stream = s.tick(0);
        assert_eq!(stream.len(), 2);
        stream.extend(s.tick(10));
        assert_eq!(stream.len(), 3);
        let mut f = SequenceFollower::new(NodeId(0), signer);
        assert!(f.accept(stream[2].clone()).unwrap().is_empty());
        assert_eq!(f.gap(), Some(1));
        assert!(f.accept(stream[1].clone()).unwrap().is_empty());
        let got = f.accept(stream[0].clone()).unwrap();
        assert_eq!(got.iter().map(|b| b.seq).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn forged_batch_rejected() {
        let signer: Arc<dyn Signer> = Arc::new(KeyedHashSigner);
        let mut s = Sequencer::new(NodeId(1), 1, 0, signer.clone());
        s.submit(txn(1), 0);
        let ob = s.tick(0).pop().unwrap();
        let mut f = SequenceFollower::new(NodeId(0), signer);
        assert!(f.accept(ob).is_err());
    }

    #[test]
    fn chunking() {
        let txns: Vec<_> = (0..7).map(txn).collect();
        let b = central_sequence(&txns, 3, 1, NodeId(0), 0);
        assert_eq!(b.iter().map(|b| b.txns.len()).collect::<Vec<_>>(), vec![3, 3, 1]);
        assert_eq!(b[2].seq, 3);
    }
}
