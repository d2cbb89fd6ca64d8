//! Whole-system simulation: nodes and clients wired through the network,
//! plus an observer that sees every block produced or committed.

pub mod client;
pub mod messages;
pub mod node;

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::bench::workload::{genesis_store, WorkloadKind};
use crate::config::{ConfigError, ExperimentConfig};
use crate::contracts::builtins::smallbank;
use crate::contracts::{ReceiptStatus, Runtime};
use crate::hash::Hash256;
use crate::ledger::{AcceptAll, Block, ChainError, ChainView, ForkDelta, ForkMode, KeyedHashSigner, Signer};
use crate::netsim::{Endpoint, NetEvent, NetStats, Network, Tick, TICKS_PER_SECOND};

pub use client::{Client, ClientTotals};
pub use messages::Message;
pub use node::{Node, NodeEnv, NodeEvent, NodeStats};

/// Independent seed for one component of a run.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    Hash256::digest_parts(&[b"chainbench/seed", &seed.to_be_bytes(), tag.as_bytes(), &index.to_be_bytes()]).prefix_u64()
}

/// Once-per-second observation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Sample {
    pub time_s: u64,
    /// Successful transactions confirmed to clients during this second.
    pub committed: u64,
    /// Mean response time of requests answered during this second.
    pub mean_latency_ms: u64,
    pub height: u64,
    pub total_blocks: u64,
    pub main_blocks: u64,
    pub delta: u64,
    pub max_view: u64,
}

/// Everything measured during a run.
pub struct RunOutcome {
    pub duration_ticks: Tick,
    pub totals: ClientTotals,
    pub latencies: Vec<Tick>,
    pub samples: Vec<Sample>,
    pub fork: ForkDelta,
    pub conflicts: usize,
    pub stall_at: Option<Tick>,
    pub longest_gap: Tick,
    pub view_changes: u64,
    pub max_view: u64,
    pub net: NetStats,
    pub trace_hash: Hash256,
    pub trace_events: u64,
    pub final_height: u64,
    pub final_root: Hash256,
    /// Whether total Smallbank balance is unchanged at every live node.
    pub conservation: Option<bool>,
    pub nodes: NodeStats,
    pub observer: ChainView,
}

pub struct World {
    cfg: ExperimentConfig,
    net: Network<Message>,
    nodes: Vec<Node>,
    clients: Vec<Client>,
    observer: ChainView,
    samples: Vec<Sample>,
    committed_this_second: u64,
    replies_this_second: u64,
    latency_this_second: Tick,
    last_progress: Tick,
    longest_gap: Tick,
    stall_at: Option<Tick>,
    end: Tick,
}

impl World {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let n = cfg.topology.nodes;
        let runtime = Runtime::default();
        let signer: Arc<dyn Signer> = Arc::new(KeyedHashSigner);
        let mut store = genesis_store(&cfg.workload, &runtime, cfg.metrics.state_buckets)
            .map_err(|e| ConfigError::Invalid { field: "workload", msg: e.to_string() })?;
        let genesis = Block::genesis(store.state_root());
        let env = Arc::new(NodeEnv {
            nodes: n,
            consensus: cfg.consensus.clone(),
            costs: cfg.costs.clone(),
            runtime,
            signer: signer.clone(),
            target: cfg.consensus.threshold(n),
            stake: cfg.consensus.stake_table(n),
        });
        let nodes = (0..n as u32)
            .map(|i| {
                let seed = derive_seed(cfg.seed, "node", i as u64);
                Node::new(i, env.clone(), &genesis, store.clone(), cfg.behavior_of(i), seed)
            })
            .collect();
        let homes: Vec<u32> = (0..cfg.workload.clients as u32).map(|c| c % n as u32).collect();
        let timeout = cfg.metrics.request_timeout_s * TICKS_PER_SECOND;
        let clients = homes
            .iter()
            .enumerate()
            .map(|(c, &h)| {
                let seed = derive_seed(cfg.seed, "client", c as u64);
                Client::new(c as u32, h, &cfg.workload, cfg.consensus.engine.default_request_rate(), timeout, signer.clone(), seed)
            })
            .collect();
        let net = Network::new(n, homes, cfg.network.clone(), cfg.faults.clone(), derive_seed(cfg.seed, "net", 0));
        let mode = if cfg.consensus.engine.is_final() { ForkMode::Finalized } else { ForkMode::LongestChain };
        Ok(World {
            observer: ChainView::new(genesis, mode, cfg.consensus.confirmation_depth),
            cfg: cfg.clone(),
            net,
            nodes,
            clients,
            samples: Vec::new(),
            committed_this_second: 0,
            replies_this_second: 0,
            latency_this_second: 0,
            last_progress: 0,
            longest_gap: 0,
            stall_at: None,
            end: cfg.duration_s * TICKS_PER_SECOND,
        })
    }

    /// Mirror the event trace to `w` as JSON lines.
    pub fn set_trace_writer(&mut self, w: Box<dyn Write + Send>) {
        self.net.trace_mut().set_writer(w);
    }

    pub fn now(&self) -> Tick {
        self.net.now()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn observer(&self) -> &ChainView {
        &self.observer
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Advance one tick.
    pub fn step(&mut self) {
        let events = self.net.advance();
        let now = self.net.now();
        for ev in events {
            match ev {
                NetEvent::Crashed(n) => self.nodes[n as usize].crash(),
                NetEvent::PartitionStarted(_) => {}
                NetEvent::PartitionHealed(_) => {
                    for node in &mut self.nodes {
                        node.announce(&mut self.net);
                    }
                }
            }
        }
        for c in &mut self.clients {
            c.tick(now, &mut self.net);
        }
        for i in 0..self.nodes.len() {
            self.nodes[i].step(now, &mut self.net);
            for ev in self.nodes[i].take_events() {
                self.observe(i as u32, ev, now);
            }
        }
        for (c, client) in self.clients.iter_mut().enumerate() {
            while let Some(env) = self.net.pop_client(c as u32) {
                if env.corrupted {
                    continue;
                }
                if let Message::Reply { txn_id, status, .. } = env.msg {
                    if let Some(latency) = client.on_reply(txn_id, status, now) {
                        self.replies_this_second += 1;
                        self.latency_this_second += latency;
                        if status == ReceiptStatus::Committed {
                            self.committed_this_second += 1;
                        }
                    }
                }
            }
        }
        self.check_liveness(now);
        if now % TICKS_PER_SECOND == 0 {
            self.sample(now);
        }
    }

    fn observe(&mut self, node: u32, ev: NodeEvent, now: Tick) {
        let src = Endpoint::Node(node);
        match ev {
            NodeEvent::Produced(b) | NodeEvent::Committed(b) => {
                let before = self.observer.height();
                match self.observer.append(b, &AcceptAll) {
                    Ok(_) | Err(ChainError::DuplicateBlock(_)) => {}
                    Err(e) => panic!("observer rejected a block produced by {src}: {e}"),
                }
                let after = self.observer.height();
                if after > before {
                    self.net.trace_mut().record_host(now, src, "main-height", after);
                    self.last_progress = now;
                }
            }
            NodeEvent::ViewChange(v) => self.net.trace_mut().record_host(now, src, "view-change", v),
            NodeEvent::EnteredView(v) => self.net.trace_mut().record_host(now, src, "new-view", v),
        }
    }

    fn check_liveness(&mut self, now: Tick) {
        let gap = now - self.last_progress;
        self.longest_gap = self.longest_gap.max(gap);
        let horizon = self.cfg.metrics.stall_horizon_s * TICKS_PER_SECOND;
        if self.stall_at.is_none() && gap >= horizon && self.clients.iter().any(|c| c.outstanding() > 0) {
            self.stall_at = Some(now);
            self.net.trace_mut().record_host(now, Endpoint::Node(0), "liveness-stall", gap);
        }
    }

    fn max_view(&self) -> u64 {
        self.nodes.iter().filter(|n| !n.is_crashed()).filter_map(Node::view).max().unwrap_or(0)
    }

    fn sample(&mut self, now: Tick) {
        let d = self.observer.fork_delta();
        self.samples.push(Sample {
            time_s: now / TICKS_PER_SECOND,
            committed: std::mem::take(&mut self.committed_this_second),
            mean_latency_ms: std::mem::take(&mut self.latency_this_second)
                / std::mem::take(&mut self.replies_this_second).max(1),
            height: self.observer.height(),
            total_blocks: d.total_blocks,
            main_blocks: d.main_blocks,
            delta: d.delta,
            max_view: self.max_view(),
        });
    }

    /// Run to the configured duration.
    pub fn run(mut self) -> RunOutcome {
        while self.net.now() < self.end {
            self.step();
        }
        self.finish()
    }

    pub fn finish(mut self) -> RunOutcome {
        let mut totals = ClientTotals::default();
        let mut latencies = Vec::new();
        for c in &self.clients {
            let t = c.totals();
            totals.issued += t.issued;
            totals.committed += t.committed;
            totals.reverted += t.reverted;
            totals.aborted += t.aborted;
            totals.timed_out += t.timed_out;
            latencies.extend_from_slice(c.latencies());
        }
        latencies.sort_unstable();
        let mut nodes = NodeStats::default();
        for n in &self.nodes {
            let s = n.stats();
            nodes.processed += s.processed;
            nodes.corrupted_rejected += s.corrupted_rejected;
            nodes.bad_signatures += s.bad_signatures;
            nodes.admission_drops += s.admission_drops;
            nodes.invalid_blocks += s.invalid_blocks;
            nodes.root_mismatches += s.root_mismatches;
            nodes.reorgs += s.reorgs;
            nodes.blocks_executed += s.blocks_executed;
            nodes.out_of_order += s.out_of_order;
        }
        let w = &self.cfg.workload;
        let conservation = (w.kind == WorkloadKind::Smallbank).then(|| {
            let expect = w.initial_balance * w.accounts as i64;
            self.nodes
                .iter_mut()
                .filter(|n| !n.is_crashed())
                .all(|n| smallbank::total_balance(n.store_mut(), w.accounts) == expect)
        });
        let reference = self.nodes.iter_mut().filter(|n| !n.is_crashed() && n.is_honest()).max_by_key(|n| n.chain().height());
        let (final_height, final_root) = match reference {
            Some(n) => (n.chain().height(), n.store_mut().state_root()),
            None => (0, Hash256::ZERO),
        };
        let view_changes = self.nodes.iter().map(Node::view_changes_started).sum();
        let max_view = self.max_view();
        if let Err(e) = self.net.trace_mut().finish() {
            eprintln!("warning: trace output incomplete: {e}");
        }
        RunOutcome {
            duration_ticks: self.net.now(),
            totals,
            latencies,
            samples: self.samples,
            fork: self.observer.fork_delta(),
            conflicts: self.observer.conflicts().len(),
            stall_at: self.stall_at,
            longest_gap: self.longest_gap,
            view_changes,
            max_view,
            net: self.net.stats(),
            trace_hash: self.net.trace().digest(),
            trace_events: self.net.trace().events(),
            final_height,
            final_root,
            conservation,
            nodes,
            observer: self.observer,
        }
    }
}
