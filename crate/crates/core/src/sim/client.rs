use std::collections::HashMap;
use std::sync::Arc;

use crate::bench::workload::{WorkloadGen, WorkloadSpec};
use crate::contracts::ReceiptStatus;
use crate::hash::Hash256;
use crate::ledger::Signer;
use crate::netsim::{Endpoint, Network, Tick, TICKS_PER_SECOND};

use super::messages::Message;

enum Mode {
    /// Fixed request rate regardless of replies.
    Open { per_tick: f64, acc: f64 },
    /// `threads` requests outstanding at a time.
    Closed { threads: usize, timeout: Tick },
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ClientTotals {
    pub issued: u64,
    pub committed: u64,
    pub reverted: u64,
    pub aborted: u64,
    pub timed_out: u64,
}

pub struct Client {
    id: u32,
    home: u32,
    gen: WorkloadGen,
    mode: Mode,
    ops: u64,
    signer: Arc<dyn Signer>,
    outstanding: HashMap<Hash256, Tick>,
    latencies: Vec<Tick>,
    totals: ClientTotals,
}

impl Client {
    pub fn new(
        id: u32,
        home: u32,
        spec: &WorkloadSpec,
        default_rate: f64,
        timeout: Tick,
        signer: Arc<dyn Signer>,
        seed: u64,
    ) -> Self {
        let mode = if spec.blocking {
            Mode::Closed { threads: spec.threads_per_client.max(1), timeout }
        } else {
            Mode::Open { per_tick: spec.rate_per_client(default_rate) / TICKS_PER_SECOND as f64, acc: 0.0 }
        };
        Client {
            id,
            home,
            gen: WorkloadGen::new(spec, id, seed),
            mode,
            ops: spec.ops,
            signer,
            outstanding: HashMap::new(),
            latencies: Vec::new(),
            totals: ClientTotals::default(),
        }
    }

    pub fn home(&self) -> u32 {
        self.home
    }

    pub fn totals(&self) -> ClientTotals {
        self.totals
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }

    pub fn latencies(&self) -> &[Tick] {
        &self.latencies
    }

    fn exhausted(&self) -> bool {
        self.ops != 0 && self.totals.issued >= self.ops
    }

    fn issue(&mut self, now: Tick, net: &mut Network<Message>) {
        let t = Arc::new(self.gen.next_txn(now, self.signer.as_ref()));
        self.totals.issued += 1;
        self.outstanding.insert(t.id, now);
        net.send(Endpoint::Client(self.id), Endpoint::Node(self.home), Message::Request(t));
    }

    pub fn tick(&mut self, now: Tick, net: &mut Network<Message>) {
        match self.mode {
            Mode::Open { per_tick, ref mut acc } => {
                *acc += per_tick;
                let mut due = acc.floor() as u64;
                *acc -= due as f64;
                while due > 0 && !self.exhausted() {
                    self.issue(now, net);
                    due -= 1;
                }
            }
            Mode::Closed { threads, timeout } => {
                if now % TICKS_PER_SECOND == 0 {
                    let before = self.outstanding.len();
                    self.outstanding.retain(|_, &mut at| now - at < timeout);
                    self.totals.timed_out += (before - self.outstanding.len()) as u64;
                }
                while self.outstanding.len() < threads && !self.exhausted() {
                    self.issue(now, net);
                }
            }
        }
    }

    /// Latency of the request this reply answers, if it was outstanding.
    pub fn on_reply(&mut self, txn_id: Hash256, status: ReceiptStatus, now: Tick) -> Option<Tick> {
        let at = self.outstanding.remove(&txn_id)?;
        let latency = now - at;
        self.latencies.push(latency);
        match status {
            ReceiptStatus::Committed => self.totals.committed += 1,
            ReceiptStatus::Reverted => self.totals.reverted += 1,
            ReceiptStatus::Aborted => self.totals.aborted += 1,
        }
        Some(latency)
    }
}
