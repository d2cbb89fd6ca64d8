//! A simulated blockchain server: mempool, engine, ledger, state and a CPU
//! budget that throttles how many inbound messages it can process.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::CostModel;
use crate::consensus::pbft::{Behavior, Committed};
use crate::consensus::poa::{authority_signature, poa_proposer};
use crate::consensus::pos::{pos_meets, stake_of};
use crate::consensus::verify::{PoaVerifier, PosVerifier, PowVerifier, QuorumVerifier, SequencerVerifier};
use crate::consensus::{
    pow_verify, Batch, ConsensusConfig, Engine, OrderedBatch, PbftOutput, PbftReplica, SequenceFollower, Sequencer,
    StakeTable, Target,
};
use crate::contracts::{BlockExecution, ReceiptStatus, Runtime};
use crate::hash::Hash256;
use crate::ledger::{
    Block, BlockHeader, CertVerifier, Certificate, ChainError, ChainView, ForkMode, MainUpdate, NodeId, Signature,
    Signer, Transaction,
};
use crate::netsim::{Endpoint, Envelope, Network, Tick};
use crate::state::StateStore;

use super::messages::Message;

const MEMPOOL_LIMIT: usize = 200_000;
/// Most blocks returned for one range request.
const SYNC_CHUNK: u64 = 64;
/// Puzzle miners rebuild a stale template this often when new requests wait.
const TEMPLATE_REFRESH: Tick = 1_000;
const SYNC_RETRY: Tick = 1_000;

/// Everything nodes of one run share.
pub struct NodeEnv {
    pub nodes: usize,
    pub consensus: ConsensusConfig,
    pub costs: CostModel,
    pub runtime: Runtime,
    pub signer: Arc<dyn Signer>,
    pub target: Target,
    pub stake: StakeTable,
}

/// Things the host needs to know about.
#[derive(Debug, Clone)]
pub enum NodeEvent {
    /// A puzzle or authority block this node produced.
    Produced(Arc<Block>),
    /// A certified block this node executed through its own engine.
    Committed(Arc<Block>),
    ViewChange(u64),
    EnteredView(u64),
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct NodeStats {
    pub processed: u64,
    pub corrupted_rejected: u64,
    pub bad_signatures: u64,
    pub admission_drops: u64,
    pub invalid_blocks: u64,
    pub root_mismatches: u64,
    pub reorgs: u64,
    pub blocks_executed: u64,
    pub out_of_order: u64,
}

#[derive(Default)]
struct Mempool {
    order: BTreeMap<u64, Arc<Transaction>>,
    index: HashMap<Hash256, u64>,
    next: u64,
}

impl Mempool {
    fn insert(&mut self, t: Arc<Transaction>) -> bool {
        if self.index.contains_key(&t.id) || self.index.len() >= MEMPOOL_LIMIT {
            return false;
        }
        self.next += 1;
        self.index.insert(t.id, self.next);
        self.order.insert(self.next, t);
        true
    }

    fn remove(&mut self, id: &Hash256) {
        if let Some(k) = self.index.remove(id) {
            self.order.remove(&k);
        }
    }

    fn peek(&self, n: usize) -> Vec<Arc<Transaction>> {
        self.order.values().take(n).cloned().collect()
    }

    fn len(&self) -> usize {
        self.index.len()
    }
}

struct Template {
    header: BlockHeader,
    txns: Vec<Arc<Transaction>>,
    built_at: Tick,
}

enum EngineState {
    Puzzle { rng: ChaCha8Rng, template: Option<Template> },
    Poa { authorities: Vec<NodeId> },
    Pbft { replica: Box<PbftReplica> },
    Sequencer { sequencer: NodeId, leader: Option<Sequencer>, follower: SequenceFollower, sigs: HashMap<u64, Signature> },
}

/// Undo and reply information for one main-branch block.
struct Applied {
    written: Vec<Vec<u8>>,
    statuses: Vec<ReceiptStatus>,
}

pub struct Node {
    id: NodeId,
    env: Arc<NodeEnv>,
    engine: EngineState,
    honest: bool,
    chain: ChainView,
    verifier: Box<dyn CertVerifier + Send + Sync>,
    store: StateStore,
    applied: Vec<Applied>,
    mempool: Mempool,
    included: HashMap<Hash256, u64>,
    client_of: HashMap<Hash256, u32>,
    replied_upto: u64,
    sync_target: u64,
    sync_asked: Option<Tick>,
    sync_peer: u32,
    gap_since: Option<Tick>,
    credit: i64,
    tokens: f64,
    crashed: bool,
    stats: NodeStats,
    outbox: Vec<(Endpoint, Message)>,
    events: Vec<NodeEvent>,
}

impl Node {
    pub fn new(id: u32, env: Arc<NodeEnv>, genesis: &Block, store: StateStore, behavior: Behavior, seed: u64) -> Self {
        let me = NodeId(id);
        let cfg = &env.consensus;
        let signer = env.signer.clone();
        let (engine, verifier): (EngineState, Box<dyn CertVerifier + Send + Sync>) = match cfg.engine {
            Engine::Pow => (
                EngineState::Puzzle { rng: ChaCha8Rng::seed_from_u64(seed), template: None },
                Box::new(PowVerifier { target: env.target }),
            ),
            Engine::Pos => (
                EngineState::Puzzle { rng: ChaCha8Rng::seed_from_u64(seed), template: None },
                Box::new(PosVerifier { target: env.target, stake: env.stake.clone(), function: cfg.stake_function }),
            ),
            Engine::Poa => {
                let authorities = cfg.authority_list(env.nodes);
                (
                    EngineState::Poa { authorities: authorities.clone() },
                    Box::new(PoaVerifier { authorities, step_duration: cfg.step_duration, signer }),
                )
            }
            Engine::Pbft => {
                let params = cfg.pbft_params(env.nodes);
                let (n, f) = (params.n, params.f);
                let replica = PbftReplica::new(me, params, signer.clone()).with_behavior(behavior);
                (EngineState::Pbft { replica: Box::new(replica) }, Box::new(QuorumVerifier { n, f, signer }))
            }
            Engine::Sequencer => {
                let sequencer = cfg.authority_list(env.nodes)[0];
                let leader =
                    (sequencer == me).then(|| Sequencer::new(me, cfg.batch_size, cfg.batch_timeout, signer.clone()));
                (
                    EngineState::Sequencer {
                        sequencer,
                        leader,
                        follower: SequenceFollower::new(sequencer, signer.clone()),
                        sigs: HashMap::new(),
                    },
                    Box::new(SequencerVerifier { sequencer, signer }),
                )
            }
        };
        let mode = if cfg.engine.is_final() { ForkMode::Finalized } else { ForkMode::LongestChain };
        Node {
            id: me,
            chain: ChainView::new(genesis.clone(), mode, cfg.confirmation_depth),
            engine,
            honest: behavior == Behavior::Honest,
            verifier,
            store,
            applied: Vec::new(),
            mempool: Mempool::default(),
            included: HashMap::new(),
            client_of: HashMap::new(),
            replied_upto: 0,
            sync_target: 0,
            sync_asked: None,
            sync_peer: id,
            gap_since: None,
            credit: 0,
            tokens: 0.0,
            crashed: false,
            stats: NodeStats::default(),
            outbox: Vec::new(),
            events: Vec::new(),
            env,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn chain(&self) -> &ChainView {
        &self.chain
    }

    pub fn store_mut(&mut self) -> &mut StateStore {
        &mut self.store
    }

    pub fn stats(&self) -> NodeStats {
        self.stats
    }

    pub fn is_honest(&self) -> bool {
        self.honest
    }

    pub fn is_crashed(&self) -> bool {
        self.crashed
    }

    pub fn crash(&mut self) {
        self.crashed = true;
    }

    pub fn view(&self) -> Option<u64> {
        match &self.engine {
            EngineState::Pbft { replica } => Some(replica.view()),
            _ => None,
        }
    }

    pub fn view_changes_started(&self) -> u64 {
        match &self.engine {
            EngineState::Pbft { replica } => replica.view_changes_started(),
            _ => 0,
        }
    }

    pub fn take_events(&mut self) -> Vec<NodeEvent> {
        std::mem::take(&mut self.events)
    }

    /// One tick of work: drain the inbox within the CPU budget, then run
    /// the engine's timers, then flush outgoing messages.
    pub fn step(&mut self, now: Tick, net: &mut Network<Message>) {
        if self.crashed {
            return;
        }
        let budget = self.env.costs.cpu_per_tick as i64;
        self.credit = self.credit.min(0) + budget;
        if let Some(rate) = self.env.costs.admission_rate {
            self.tokens = (self.tokens + rate / 1_000.0).min(rate.max(1.0));
        }
        while self.credit > 0 {
            let Some(env) = net.pop(self.id.0) else { break };
            self.handle(env, now);
        }
        self.engine_tick(now);
        self.flush(net);
    }

    /// Announce our chain head to everyone, e.g. after a partition heals.
    pub fn announce(&mut self, net: &mut Network<Message>) {
        if self.crashed {
            return;
        }
        let m = Message::Status { height: self.chain.height(), tip: self.chain.tip() };
        self.broadcast(m);
        self.flush(net);
    }

    fn flush(&mut self, net: &mut Network<Message>) {
        let src = Endpoint::Node(self.id.0);
        for (dst, m) in self.outbox.drain(..) {
            net.send(src, dst, m);
        }
    }

    fn charge(&mut self, us: u64) {
        self.credit -= us as i64;
    }

    fn send(&mut self, to: NodeId, m: Message) {
        if to != self.id {
            self.outbox.push((Endpoint::Node(to.0), m));
        }
    }

    fn broadcast(&mut self, m: Message) {
        for i in 0..self.env.nodes as u32 {
            if i != self.id.0 {
                self.outbox.push((Endpoint::Node(i), m.clone()));
            }
        }
    }

    fn handle(&mut self, env: Envelope<Message>, now: Tick) {
        self.stats.processed += 1;
        let costs = &self.env.costs;
        let cost = match env.msg {
            Message::Request(_) | Message::Forward(_) => costs.verify_txn,
            ref m => costs.consensus_msg + costs.per_txn_in_msg * m.txn_count() as u64,
        };
        self.charge(cost);
        if env.corrupted {
            self.stats.corrupted_rejected += 1;
            return;
        }
        let from = match env.src {
            Endpoint::Node(n) => NodeId(n),
            Endpoint::Client(_) => self.id,
        };
        match env.msg {
            Message::Request(t) => {
                let Endpoint::Client(c) = env.src else { return };
                if self.env.costs.admission_rate.is_some() {
                    if self.tokens < 1.0 {
                        self.stats.admission_drops += 1;
                        return;
                    }
                    self.tokens -= 1.0;
                }
                if !t.verify(self.env.signer.as_ref()) {
                    self.stats.bad_signatures += 1;
                    return;
                }
                self.client_of.insert(t.id, c);
                self.ingest(t, true, now);
            }
            Message::Forward(t) => {
                if !t.verify(self.env.signer.as_ref()) {
                    self.stats.bad_signatures += 1;
                    return;
                }
                self.ingest(t, false, now);
            }
            Message::Reply { .. } => {}
            Message::Block(b) => self.on_block(b, from, now),
            Message::GetBlock { hash } => {
                if let Some(b) = self.chain.get(&hash).cloned() {
                    self.send(from, Message::Block(b));
                }
            }
            Message::GetBlocks { from: lo, to: hi } => {
                let hi = hi.min(self.chain.height()).min(lo.saturating_add(SYNC_CHUNK - 1));
                let blocks: Vec<_> = (lo.max(1)..=hi).filter_map(|h| self.chain.main_block(h).cloned()).collect();
                if !blocks.is_empty() {
                    self.send(from, Message::Blocks(blocks));
                }
            }
            Message::Blocks(bs) => self.on_blocks(bs, from, now),
            Message::Status { height, tip } => {
                if height > self.chain.height() && !self.chain.knows(&tip) {
                    if self.env.consensus.engine.is_final() {
                        self.sync_peer = from.0;
                        self.request_sync(height, now);
                    } else {
                        self.send(from, Message::GetBlock { hash: tip });
                    }
                }
            }
            Message::Pbft(m) => {
                let EngineState::Pbft { replica } = &mut self.engine else { return };
                // Invalid or stale protocol messages are simply ignored.
                if let Ok(outs) = replica.handle(from, m, now) {
                    self.pbft_outputs(outs, now);
                }
            }
            Message::Ordered(ob) => self.on_ordered(ob, now),
        }
    }

    fn ingest(&mut self, t: Arc<Transaction>, from_client: bool, now: Tick) {
        match &mut self.engine {
            EngineState::Pbft { replica } => {
                if replica.submit(t.clone(), now) && from_client {
                    self.broadcast(Message::Forward(t));
                }
            }
            EngineState::Sequencer { sequencer, leader, .. } => match leader {
                Some(s) => {
                    s.submit(t, now);
                }
                None => {
                    if from_client {
                        let to = *sequencer;
                        self.send(to, Message::Forward(t));
                    }
                }
            },
            EngineState::Puzzle { .. } | EngineState::Poa { .. } => {
                if !self.included.contains_key(&t.id) && self.mempool.insert(t.clone()) && from_client {
                    self.broadcast(Message::Forward(t));
                }
            }
        }
    }

    fn engine_tick(&mut self, now: Tick) {
        match &self.engine {
            EngineState::Puzzle { .. } => self.mine(now),
            EngineState::Poa { .. } => self.poa_tick(now),
            EngineState::Pbft { .. } => {
                let EngineState::Pbft { replica } = &mut self.engine else { unreachable!() };
                let outs = replica.tick(now);
                self.pbft_outputs(outs, now);
                self.retry_sync(now);
            }
            EngineState::Sequencer { .. } => self.sequencer_tick(now),
        }
    }

    // ---- block execution -------------------------------------------------

    fn execute(&mut self, height: u64, txns: &[Arc<Transaction>]) -> (BlockExecution, Hash256) {
        let mut scratch = Block::genesis(Hash256::ZERO);
        scratch.header.height = height;
        scratch.txns = txns.to_vec();
        let exec = self.env.runtime.execute_block(&mut self.store, &scratch);
        let costs = &self.env.costs;
        self.charge(costs.exec_txn * txns.len() as u64 + costs.exec_step * exec.steps_used);
        let root = self.store.state_root();
        (exec, root)
    }

    /// Execute a block that just joined the main branch.
    fn apply(&mut self, block: &Arc<Block>) -> Vec<ReceiptStatus> {
        let (exec, root) = self.execute(block.height(), &block.txns);
        if root != block.header.state_root {
            self.stats.root_mismatches += 1;
        }
        self.stats.blocks_executed += 1;
        let statuses: Vec<_> = exec.receipts.iter().map(|r| r.status).collect();
        if self.chain.mode() == ForkMode::LongestChain {
            for t in &block.txns {
                self.included.insert(t.id, block.height());
                self.mempool.remove(&t.id);
            }
            self.applied.push(Applied { written: exec.written, statuses: statuses.clone() });
        }
        statuses
    }

    fn reply(&mut self, block: &Block, statuses: &[ReceiptStatus]) {
        for (t, s) in block.txns.iter().zip(statuses) {
            if let Some(c) = self.client_of.remove(&t.id) {
                self.outbox.push((
                    Endpoint::Client(c),
                    Message::Reply { txn_id: t.id, status: *s, height: block.height() },
                ));
            }
        }
    }

    fn on_main_update(&mut self, upd: MainUpdate) {
        if upd.is_empty() {
            return;
        }
        for h in &upd.detached {
            let a = self.applied.pop().expect("applied tracks the main branch");
            Runtime::undo_block(&mut self.store, &a.written);
            let block = self.chain.get(h).cloned().expect("detached block is known");
            for t in &block.txns {
                self.included.remove(&t.id);
            }
            for t in &block.txns {
                self.mempool.insert(t.clone());
            }
        }
        if !upd.detached.is_empty() {
            self.stats.reorgs += 1;
        }
        if let Some(first) = upd.attached.first() {
            let fork = self.chain.get(first).expect("attached block is known").height() - 1;
            self.replied_upto = self.replied_upto.min(fork);
        }
        for h in &upd.attached {
            let block = self.chain.get(h).cloned().expect("attached block is known");
            self.apply(&block);
        }
        let confirmed = self.chain.confirmed_upto();
        while self.replied_upto < confirmed {
            self.replied_upto += 1;
            let h = self.replied_upto;
            let block = self.chain.main_block(h).cloned().expect("confirmed height on main");
            let statuses = std::mem::take(&mut self.applied[h as usize - 1].statuses);
            self.reply(&block, &statuses);
            self.applied[h as usize - 1].statuses = statuses;
        }
    }

    fn append(&mut self, block: Arc<Block>, from: NodeId) -> Option<MainUpdate> {
        match self.chain.append(block, self.verifier.as_ref()) {
            Ok(upd) => Some(upd),
            Err(ChainError::UnknownParent { parent, .. }) => {
                self.send(from, Message::GetBlock { hash: parent });
                None
            }
            Err(ChainError::DuplicateBlock(_)) => None,
            Err(_) => {
                self.stats.invalid_blocks += 1;
                None
            }
        }
    }

    fn on_block(&mut self, b: Arc<Block>, from: NodeId, now: Tick) {
        if self.chain.knows(&b.hash()) {
            return;
        }
        if self.chain.mode() == ForkMode::Finalized {
            // Finalized engines only take certified blocks through range sync.
            return self.on_blocks(vec![b], from, now);
        }
        if let Some(upd) = self.append(b, from) {
            self.on_main_update(upd);
        }
    }

    // ---- puzzle engines ---------------------------------------------------

    fn build_template(&mut self, now: Tick) -> Template {
        let tip = self.chain.tip_block().clone();
        let txns = self.mempool.peek(self.env.consensus.batch_size);
        let height = tip.height() + 1;
        let (exec, root) = self.execute(height, &txns);
        Runtime::undo_block(&mut self.store, &exec.written);
        Template {
            header: BlockHeader {
                height,
                parent_hash: tip.hash(),
                proposer: self.id,
                nonce: 0,
                state_root: root,
                txn_root: Block::compute_txn_root(&txns),
                timestamp: now,
            },
            txns,
            built_at: now,
        }
    }

    fn mine(&mut self, now: Tick) {
        let tip = self.chain.tip();
        let pool = self.mempool.len();
        let EngineState::Puzzle { template, .. } = &mut self.engine else { unreachable!() };
        let stale = match template {
            None => true,
            Some(t) => {
                t.header.parent_hash != tip
                    || (now - t.built_at >= TEMPLATE_REFRESH && t.txns.len() < pool.min(self.env.consensus.batch_size))
            }
        };
        if stale {
            let t = self.build_template(now);
            let EngineState::Puzzle { template, .. } = &mut self.engine else { unreachable!() };
            *template = Some(t);
        }
        let pos = self.env.consensus.engine == Engine::Pos;
        let stake = if pos {
            match stake_of(self.env.consensus.stake_function, self.id, &self.chain, &self.env.stake, now) {
                Ok(s) => s,
                Err(_) => return,
            }
        } else {
            0
        };
        let EngineState::Puzzle { rng, template } = &mut self.engine else { unreachable!() };
        let t = template.as_mut().expect("template built");
        t.header.nonce = rng.next_u64();
        let found = if pos {
            t.header.timestamp = now;
            pos_meets(&t.header, &self.env.target, stake)
        } else {
            pow_verify(&t.header, &self.env.target)
        };
        if !found {
            return;
        }
        let t = template.take().expect("template built");
        let block = Arc::new(Block { header: t.header, txns: t.txns, cert: Certificate::Work });
        self.produce(block);
    }

    fn produce(&mut self, block: Arc<Block>) {
        match self.chain.append(block.clone(), self.verifier.as_ref()) {
            Ok(upd) => {
                self.on_main_update(upd);
                self.broadcast(Message::Block(block.clone()));
                self.events.push(NodeEvent::Produced(block));
            }
            Err(_) => self.stats.invalid_blocks += 1,
        }
    }

    fn poa_tick(&mut self, now: Tick) {
        let step = self.env.consensus.step_duration;
        if now % step != 0 {
            return;
        }
        let EngineState::Poa { authorities } = &self.engine else { unreachable!() };
        if poa_proposer(now, authorities, step) != self.id {
            return;
        }
        let t = self.build_template(now);
        let mut block = Block { header: t.header, txns: t.txns, cert: Certificate::None };
        block.cert = authority_signature(self.env.signer.as_ref(), self.id, &block.hash());
        self.produce(Arc::new(block));
    }

    // ---- finalized engines ------------------------------------------------

    /// Turn an ordered batch into the next block, execute it and reply.
    fn commit_batch(&mut self, batch: &Batch, cert: Certificate) -> Option<Hash256> {
        if batch.seq != self.chain.height() + 1 {
            self.stats.out_of_order += 1;
            return None;
        }
        let (exec, root) = self.execute(batch.seq, &batch.txns);
        self.stats.blocks_executed += 1;
        let block = Arc::new(Block {
            header: BlockHeader {
                height: batch.seq,
                parent_hash: self.chain.tip(),
                proposer: batch.proposer,
                nonce: 0,
                state_root: root,
                txn_root: batch.txn_root(),
                timestamp: batch.timestamp,
            },
            txns: batch.txns.clone(),
            cert,
        });
        if self.chain.append(block.clone(), self.verifier.as_ref()).is_err() {
            // Our own engine produced an uncertifiable block; undo it.
            Runtime::undo_block(&mut self.store, &exec.written);
            self.stats.invalid_blocks += 1;
            return None;
        }
        let statuses: Vec<_> = exec.receipts.iter().map(|r| r.status).collect();
        self.reply(&block, &statuses);
        if self.honest {
            self.events.push(NodeEvent::Committed(block));
        }
        Some(root)
    }

    fn pbft_outputs(&mut self, outs: Vec<PbftOutput>, now: Tick) {
        let mut work: VecDeque<PbftOutput> = outs.into();
        while let Some(o) = work.pop_front() {
            match o {
                PbftOutput::Broadcast(m) => self.broadcast(Message::Pbft(m)),
                PbftOutput::Send(to, m) => self.send(to, Message::Pbft(m)),
                PbftOutput::Execute(Committed { view, batch, votes }) => {
                    let cert = Certificate::Quorum { view, votes };
                    if let Some(root) = self.commit_batch(&batch, cert) {
                        let EngineState::Pbft { replica } = &mut self.engine else { unreachable!() };
                        if batch.seq % replica.params().checkpoint_interval == 0 {
                            work.extend(replica.checkpoint(batch.seq, root));
                        }
                    }
                }
                PbftOutput::StartedViewChange(v) => self.events.push(NodeEvent::ViewChange(v)),
                PbftOutput::EnteredView(v) => self.events.push(NodeEvent::EnteredView(v)),
                PbftOutput::NeedSync { upto } => self.request_sync(upto, now),
            }
        }
    }

    fn request_sync(&mut self, upto: u64, now: Tick) {
        self.sync_target = self.sync_target.max(upto);
        if self.sync_target <= self.chain.height() {
            return;
        }
        if self.sync_asked.is_some_and(|t| now.saturating_sub(t) < SYNC_RETRY) {
            return;
        }
        let n = self.env.nodes as u32;
        let mut peer = self.sync_peer % n;
        if peer == self.id.0 {
            peer = (peer + 1) % n;
        }
        self.sync_asked = Some(now);
        let from = self.chain.height() + 1;
        self.send(NodeId(peer), Message::GetBlocks { from, to: self.sync_target.min(from + SYNC_CHUNK - 1) });
    }

    fn retry_sync(&mut self, now: Tick) {
        if self.sync_target > self.chain.height() && self.sync_asked.is_some_and(|t| now - t >= SYNC_RETRY) {
            // Ask someone else next time.
            self.sync_peer = self.sync_peer.wrapping_add(1);
            self.sync_asked = None;
            self.request_sync(self.sync_target, now);
        }
    }

    fn on_blocks(&mut self, mut bs: Vec<Arc<Block>>, from: NodeId, now: Tick) {
        if self.chain.mode() == ForkMode::LongestChain {
            for b in bs {
                self.on_block(b, from, now);
            }
            return;
        }
        bs.sort_by_key(|b| b.height());
        let before = self.chain.height();
        let mut ids = Vec::new();
        let mut checkpoints = Vec::new();
        for b in bs {
            if b.height() != self.chain.height() + 1 || b.header.parent_hash != self.chain.tip() {
                continue;
            }
            match self.chain.append(b.clone(), self.verifier.as_ref()) {
                Ok(_) => {
                    let statuses = self.apply(&b);
                    self.reply(&b, &statuses);
                    ids.extend(b.txns.iter().map(|t| t.id));
                    checkpoints.push((b.height(), b.header.state_root));
                }
                Err(_) => {
                    self.stats.invalid_blocks += 1;
                    break;
                }
            }
        }
        let height = self.chain.height();
        if height == before {
            return;
        }
        self.sync_asked = None;
        match &mut self.engine {
            EngineState::Pbft { replica } => {
                // Vote on checkpoints reached through sync too, so the
                // watermark keeps moving for replicas that fell behind.
                let mut outs = Vec::new();
                for (seq, root) in checkpoints {
                    outs.extend(replica.checkpoint(seq, root));
                }
                outs.extend(replica.synced(height, ids, now));
                self.pbft_outputs(outs, now);
            }
            EngineState::Sequencer { follower, .. } => follower.advance_to(height),
            _ => {}
        }
        if self.sync_target > height {
            self.request_sync(self.sync_target, now);
        }
    }

    fn on_ordered(&mut self, ob: OrderedBatch, now: Tick) {
        let EngineState::Sequencer { follower, sigs, .. } = &mut self.engine else { return };
        let (seq, sig) = (ob.batch.seq, ob.sig);
        let expected = follower.next_expected();
        let Ok(ready) = follower.accept(ob) else {
            self.stats.bad_signatures += 1;
            return;
        };
        if seq >= expected {
            sigs.insert(seq, sig);
        }
        let gap = follower.gap().is_some();
        self.deliver_ordered(ready);
        if gap {
            self.gap_since.get_or_insert(now);
        } else {
            self.gap_since = None;
        }
    }

    fn deliver_ordered(&mut self, ready: Vec<Arc<Batch>>) {
        for b in ready {
            let EngineState::Sequencer { sigs, .. } = &mut self.engine else { unreachable!() };
            let Some(signature) = sigs.remove(&b.seq) else { continue };
            self.commit_batch(&b, Certificate::Sequencer { signature });
        }
    }

    fn sequencer_tick(&mut self, now: Tick) {
        let EngineState::Sequencer { leader, sequencer, .. } = &mut self.engine else { unreachable!() };
        let sequencer = *sequencer;
        let ordered = leader.as_mut().map(|s| s.tick(now)).unwrap_or_default();
        for ob in ordered {
            self.broadcast(Message::Ordered(ob.clone()));
            self.on_ordered(ob, now);
        }
        if self.gap_since.is_some_and(|t| now - t >= SYNC_RETRY) {
            self.gap_since = Some(now);
            self.sync_peer = sequencer.0;
            self.sync_asked = None;
            self.request_sync(self.chain.height() + SYNC_CHUNK, now);
        }
    }
}
