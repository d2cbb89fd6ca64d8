use std::collections::VecDeque;

use super::Envelope;

/// FIFO inbound queue that discards arrivals once full.
pub struct PeerQueue<M> {
    capacity: Option<usize>,
    items: VecDeque<Envelope<M>>,
    drop_count: u64,
}

impl<M> PeerQueue<M> {
    pub fn bounded(capacity: usize) -> Self {
        PeerQueue { capacity: Some(capacity), items: VecDeque::new(), drop_count: 0 }
    }

    pub fn unbounded() -> Self {
        PeerQueue { capacity: None, items: VecDeque::new(), drop_count: 0 }
    }

    /// Returns false, and counts a drop, when the queue is full.
    pub fn push(&mut self, env: Envelope<M>) -> bool {
        if self.capacity.is_some_and(|c| self.items.len() >= c) {
            self.drop_count += 1;
            return false;
        }
        self.items.push_back(env);
        true
    }

    pub fn pop(&mut self) -> Option<Envelope<M>> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn drop_count(&self) -> u64 {
        self.drop_count
    }

    /// Discard everything queued; returns how many messages were lost.
    pub fn clear(&mut self) -> u64 {
        let n = self.items.len() as u64;
        self.items.clear();
        n
    }
}
