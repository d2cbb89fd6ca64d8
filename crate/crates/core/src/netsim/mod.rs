//! Seeded discrete-event transport.
//!
//! One tick is one millisecond of simulated time. Messages are scheduled
//! for delivery at `now + delay`; on arrival they enter the destination's
//! bounded inbound queue, where the host drains them at its own pace. Every
//! message ends up delivered (popped by the host), dropped, or still in
//! flight, and each fate is folded into a running trace digest.

mod faults;
mod queue;
mod trace;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use faults::{Crash, DelayModel, FaultSchedule, Partition};
pub use queue::PeerQueue;
pub use trace::{TraceEvent, TraceSink};

pub type Tick = u64;

pub const TICKS_PER_SECOND: Tick = 1_000;
pub const DEFAULT_QUEUE_CAPACITY: usize = 1_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Node(u32),
    Client(u32),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Node(n) => write!(f, "n{n}"),
            Endpoint::Client(c) => write!(f, "c{c}"),
        }
    }
}

/// Whether client requests and consensus traffic share one inbound queue.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    #[default]
    Shared,
    Segregated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Class {
    Client,
    Consensus,
}

pub trait Payload {
    fn kind(&self) -> &'static str;
    fn class(&self) -> Class;
}

#[derive(Clone, Debug)]
pub struct Envelope<M> {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub sent_at: Tick,
    pub msg: M,
    /// Set when the payload was damaged in transit; receivers must reject it.
    pub corrupted: bool,
}

struct Scheduled<M> {
    at: Tick,
    seq: u64,
    env: Envelope<M>,
}

impl<M> PartialEq for Scheduled<M> {
    fn eq(&self, o: &Self) -> bool {
        (self.at, self.seq) == (o.at, o.seq)
    }
}
impl<M> Eq for Scheduled<M> {}
impl<M> PartialOrd for Scheduled<M> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl<M> Ord for Scheduled<M> {
    // Min-heap on (time, sequence).
    fn cmp(&self, o: &Self) -> Ordering {
        (o.at, o.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_queue: u64,
    pub dropped_partition: u64,
    pub dropped_crash: u64,
    pub corrupted: u64,
    pub in_flight: u64,
}

impl NetStats {
    pub fn dropped(&self) -> u64 {
        self.dropped_queue + self.dropped_partition + self.dropped_crash
    }

    /// `sent = delivered + dropped + in flight`.
    pub fn conserved(&self) -> bool {
        self.sent == self.delivered + self.dropped() + self.in_flight
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub queue_capacity: usize,
    pub channel: ChannelMode,
    pub delay: DelayModel,
    pub corruption_rate: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            channel: ChannelMode::Shared,
            delay: DelayModel::default(),
            corruption_rate: 0.0,
        }
    }
}

/// Topology-level happenings the host may react to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NetEvent {
    Crashed(u32),
    PartitionStarted(usize),
    PartitionHealed(usize),
}

struct NodeInbox<M> {
    shared: PeerQueue<M>,
    consensus: PeerQueue<M>,
}

pub struct Network<M> {
    now: Tick,
    seq: u64,
    heap: BinaryHeap<Scheduled<M>>,
    inboxes: Vec<NodeInbox<M>>,
    client_inbox: Vec<VecDeque<Envelope<M>>>,
    client_home: Vec<u32>,
    crashed: Vec<bool>,
    config: NetConfig,
    faults: FaultSchedule,
    rng: ChaCha8Rng,
    stats: NetStats,
    trace: TraceSink,
}

impl<M: Payload> Network<M> {
    /// `client_home[c]` is the node client `c` talks to; clients share their
    /// node's side of any partition.
    pub fn new(nodes: usize, client_home: Vec<u32>, config: NetConfig, faults: FaultSchedule, seed: u64) -> Self {
        let cap = config.queue_capacity;
        let inboxes = (0..nodes)
            .map(|_| NodeInbox { shared: PeerQueue::bounded(cap), consensus: PeerQueue::unbounded() })
            .collect();
        Network {
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            inboxes,
            client_inbox: (0..client_home.len()).map(|_| VecDeque::new()).collect(),
            client_home,
            crashed: vec![false; nodes],
            config,
            faults,
            rng: ChaCha8Rng::seed_from_u64(seed),
            stats: NetStats::default(),
            trace: TraceSink::new(),
        }
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn node_count(&self) -> usize {
        self.inboxes.len()
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn faults(&self) -> &FaultSchedule {
        &self.faults
    }

    pub fn trace_mut(&mut self) -> &mut TraceSink {
        &mut self.trace
    }

    pub fn trace(&self) -> &TraceSink {
        &self.trace
    }

    pub fn is_crashed(&self, node: u32) -> bool {
        self.crashed[node as usize]
    }

    fn side_node(&self, e: Endpoint) -> u32 {
        match e {
            Endpoint::Node(n) => n,
            Endpoint::Client(c) => self.client_home[c as usize],
        }
    }

    /// Whether `a` and `b` sit on opposite sides of an active partition.
    pub fn partitioned(&self, a: Endpoint, b: Endpoint, at: Tick) -> bool {
        let (x, y) = (self.side_node(a), self.side_node(b));
        self.faults.partitions.iter().any(|p| p.active(at) && p.separates(x, y))
    }

    fn dst_crashed(&self, dst: Endpoint) -> bool {
        matches!(dst, Endpoint::Node(n) if self.crashed[n as usize])
    }

    pub fn send(&mut self, src: Endpoint, dst: Endpoint, msg: M) {
        self.stats.sent += 1;
        let kind = msg.kind();
        if self.partitioned(src, dst, self.now) {
            self.stats.dropped_partition += 1;
            self.trace.record(self.now, src, dst, kind, TraceEvent::DroppedPartition);
            return;
        }
        if self.dst_crashed(dst) {
            self.stats.dropped_crash += 1;
            self.trace.record(self.now, src, dst, kind, TraceEvent::DroppedCrash);
            return;
        }
        let delay = self.config.delay.sample(&mut self.rng);
        let corrupted = self.config.corruption_rate > 0.0 && self.rng.gen_bool(self.config.corruption_rate.min(1.0));
        let env = Envelope { src, dst, sent_at: self.now, msg, corrupted };
        self.seq += 1;
        self.heap.push(Scheduled { at: self.now + delay, seq: self.seq, env });
    }

    /// Advance the clock by one tick: apply scheduled faults, then move every
    /// message due at the new time into its destination queue.
    pub fn advance(&mut self) -> Vec<NetEvent> {
        self.now += 1;
        let now = self.now;
        let mut events = Vec::new();
        for i in 0..self.faults.crashes.len() {
            let c = self.faults.crashes[i];
            if c.at == now && !self.crashed[c.node as usize] {
                self.crashed[c.node as usize] = true;
                let inbox = &mut self.inboxes[c.node as usize];
                let lost = inbox.shared.clear() + inbox.consensus.clear();
                self.stats.dropped_crash += lost;
                self.trace.record_host(now, Endpoint::Node(c.node), "crash", lost);
                events.push(NetEvent::Crashed(c.node));
            }
        }
        for (i, p) in self.faults.partitions.iter().enumerate() {
            if p.start == now {
                self.trace.record_host(now, Endpoint::Node(0), "partition-start", i as u64);
                events.push(NetEvent::PartitionStarted(i));
            }
            if p.start + p.duration == now {
                self.trace.record_host(now, Endpoint::Node(0), "partition-heal", i as u64);
                events.push(NetEvent::PartitionHealed(i));
            }
        }
        while self.heap.peek().is_some_and(|s| s.at <= now) {
            let Scheduled { env, .. } = self.heap.pop().expect("peeked");
            self.arrive(env);
        }
        events
    }

    fn arrive(&mut self, env: Envelope<M>) {
        let kind = env.msg.kind();
        let (src, dst) = (env.src, env.dst);
        if self.partitioned(src, dst, self.now) {
            self.stats.dropped_partition += 1;
            self.trace.record(self.now, src, dst, kind, TraceEvent::DroppedPartition);
            return;
        }
        if self.dst_crashed(dst) {
            self.stats.dropped_crash += 1;
            self.trace.record(self.now, src, dst, kind, TraceEvent::DroppedCrash);
            return;
        }
        match dst {
            Endpoint::Client(c) => {
                self.trace.record(self.now, src, dst, kind, TraceEvent::Arrived);
                self.client_inbox[c as usize].push_back(env);
            }
            Endpoint::Node(n) => {
                let inbox = &mut self.inboxes[n as usize];
                let q = match (self.config.channel, env.msg.class()) {
                    (ChannelMode::Segregated, Class::Consensus) => &mut inbox.consensus,
                    _ => &mut inbox.shared,
                };
                if q.push(env) {
                    self.trace.record(self.now, src, dst, kind, TraceEvent::Arrived);
                } else {
                    self.stats.dropped_queue += 1;
                    self.trace.record(self.now, src, dst, kind, TraceEvent::DroppedQueue);
                }
            }
        }
    }

    /// Next message for `node`; the consensus queue drains first.
    pub fn pop(&mut self, node: u32) -> Option<Envelope<M>> {
        if self.crashed[node as usize] {
            return None;
        }
        let inbox = &mut self.inboxes[node as usize];
        let env = inbox.consensus.pop().or_else(|| inbox.shared.pop())?;
        self.stats.delivered += 1;
        Some(env)
    }

    pub fn pop_client(&mut self, client: u32) -> Option<Envelope<M>> {
        let env = self.client_inbox[client as usize].pop_front()?;
        self.stats.delivered += 1;
        Some(env)
    }

    pub fn queue_len(&self, node: u32) -> usize {
        let i = &self.inboxes[node as usize];
        i.shared.len() + i.consensus.len()
    }

    pub fn queue_drops(&self, node: u32) -> u64 {
        let i = &self.inboxes[node as usize];
        i.shared.drop_count() + i.consensus.drop_count()
    }

    pub fn stats(&self) -> NetStats {
        let queued: usize = self.inboxes.iter().map(|i| i.shared.len() + i.consensus.len()).sum::<usize>()
            + self.client_inbox.iter().map(VecDeque::len).sum::<usize>();
        NetStats { in_flight: self.heap.len() as u64 + queued as u64, ..self.stats }
    }

    /// Run the clock to `end`, calling `on_tick` after each advance.
    pub fn run_until(&mut self, end: Tick, mut on_tick: impl FnMut(&mut Self, Vec<NetEvent>)) {
        while self.now < end {
            let events = self.advance();
            on_tick(self, events);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug, PartialEq)]
    struct Ping(Class);

    impl Payload for Ping {
        fn kind(&self) -> &'static str {
            "ping"
        }
        fn class(&self) -> Class {
            self.0
        }
    }

    fn net(nodes: usize, cfg: NetConfig, faults: FaultSchedule) -> Network<Ping> {
        Network::new(nodes, vec![0, 1], cfg, faults, 7)
    }

    #[test]
    fn delivery_within_delay_bounds_and_conservation() {
        let mut n = net(3, NetConfig::default(), FaultSchedule::default());
        for _ in 0..50 {
            n.send(Endpoint::Node(0), Endpoint::Node(1), Ping(Class::Consensus));
        }
        assert_eq!(n.queue_len(1), 0);
        let mut got = 0;
        n.run_until(5, |net, _| {
            while net.pop(1).is_some() {
                got += 1;
            }
        });
        assert_eq!(got, 50);
        assert!(n.stats().conserved());
    }

    #[test]
    fn full_queue_drops_the_overflow() {
        let cfg = NetConfig { delay: DelayModel { base: 1, jitter: 0 }, ..Default::default() };
        let mut n = net(2, cfg, FaultSchedule::default());
        for _ in 0..1001 {
            n.send(Endpoint::Node(0), Endpoint::Node(1), Ping(Class::Client));
        }
        n.advance();
        assert_eq!(n.queue_len(1), 1000);
        assert_eq!(n.queue_drops(1), 1);
        assert_eq!(n.stats().dropped_queue, 1);
        assert!(n.stats().conserved());
    }

    #[test]
    fn segregated_mode_keeps_consensus_out_of_the_shared_queue() {
        let cfg = NetConfig { channel: ChannelMode::Segregated, delay: DelayModel { base: 1, jitter: 0 }, ..Default::default() };
        let mut n = net(2, cfg, FaultSchedule::default());
        for _ in 0..1000 {
            n.send(Endpoint::Node(0), Endpoint::Node(1), Ping(Class::Client));
        }
        n.send(Endpoint::Node(0), Endpoint::Node(1), Ping(Class::Consensus));
        n.advance();
        assert_eq!(n.stats().dropped_queue, 0);
        assert_eq!(n.pop(1).unwrap().msg, Ping(Class::Consensus));
    }

    #[test]
    fn partition_blocks_cross_traffic_only_inside_window() {
        let faults = FaultSchedule {
            partitions: vec![Partition { a: vec![0], b: vec![1], start: 10, duration: 10 }],
            ..Default::default()
        };
        let mut n = net(2, NetConfig::default(), faults);
        n.run_until(12, |_, _| {});
        n.send(Endpoint::Node(0), Endpoint::Node(1), Ping(Class::Consensus));
        // Client 1 lives on node 1's side.
        n.send(Endpoint::Client(1), Endpoint::Node(1), Ping(Class::Client));
        n.run_until(30, |_, _| {});
        assert_eq!(n.stats().dropped_partition, 1);
        n.send(Endpoint::Node(0), Endpoint::Node(1), Ping(Class::Consensus));
        n.run_until(40, |_, _| {});
        assert_eq!(n.queue_len(1), 2);
    }

    #[test]
    fn crash_drops_queue_and_future_traffic() {
        let faults = FaultSchedule { crashes: vec![Crash { node: 1, at: 3 }], ..Default::default() };
        let cfg = NetConfig { delay: DelayModel { base: 1, jitter: 0 }, ..Default::default() };
        let mut n = net(2, cfg, faults);
        n.send(Endpoint::Node(0), Endpoint::Node(1), Ping(Class::Consensus));
        n.run_until(5, |_, _| {});
        n.send(Endpoint::Node(0), Endpoint::Node(1), Ping(Class::Consensus));
        assert!(n.is_crashed(1));
        assert_eq!(n.stats().dropped_crash, 2);
        assert!(n.stats().conserved());
    }

    #[test]
    fn full_corruption_marks_every_message() {
        let cfg = NetConfig { corruption_rate: 1.0, ..Default::default() };
        let mut n = net(2, cfg, FaultSchedule::default());
        for _ in 0..20 {
            n.send(Endpoint::Node(0), Endpoint::Node(1), Ping(Class::Consensus));
        }
        n.run_until(10, |_, _| {});
        let mut all = true;
        while let Some(e) = n.pop(1) {
            all &= e.corrupted;
        }
        assert!(all);
    }

    #[test]
    fn equal_seeds_equal_traces() {
        let run = |seed| {
            let mut n: Network<Ping> = Network::new(4, vec![], NetConfig::default(), FaultSchedule::default(), seed);
            for i in 0..200u32 {
                n.send(Endpoint::Node(i % 4), Endpoint::Node((i + 1) % 4), Ping(Class::Consensus));
            }
            n.run_until(20, |net, _| {
                for k in 0..4 {
                    while net.pop(k).is_some() {}
                }
            });
            n.trace().digest()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }
}
