//! PBFT replica.
//!
//! The replica is a pure state machine: the host feeds it client requests,
//! protocol messages and clock ticks, and performs the [`PbftOutput`]s it
//! returns. The primary of view `v` is replica `v mod N`. Quorums are
//! `N - f` replicas, which is `2f + 1` when `N = 3f + 1`; any two quorums
//! share at least `f + 1` replicas for every `N >= 3f + 1`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::codec::Encoder;
use crate::hash::Hash256;
use crate::ledger::{Block, NodeId, Principal, Signature, Signer, Transaction};

/// Upper bound on requests waiting for ordering at one replica.
const POOL_LIMIT: usize = 200_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PbftParams {
    pub n: usize,
    pub f: usize,
    pub batch_size: usize,
    pub batch_timeout: u64,
    pub view_change_timeout: u64,
    pub checkpoint_interval: u64,
    /// Sequence numbers the primary may run ahead of the stable checkpoint.
    pub window: u64,
}

impl PbftParams {
    pub fn new(n: usize) -> Self {
        PbftParams {
            n,
            f: max_faulty(n),
            batch_size: 500,
            batch_timeout: 250,
            view_change_timeout: 5_000,
            checkpoint_interval: 10,
            window: 40,
        }
    }

    pub fn quorum(&self) -> usize {
        self.n - self.f
    }

    pub fn primary(&self, view: u64) -> NodeId {
        NodeId((view % self.n as u64) as u32)
    }
}

/// `⌊(N − 1) / 3⌋`.
pub fn max_faulty(n: usize) -> usize {
    n.saturating_sub(1) / 3
}

/// An ordered batch of requests. The digest binds the sequence number,
/// proposer and timestamp so the block built from it is identical at every
/// replica regardless of the view in which it commits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub seq: u64,
    pub proposer: NodeId,
    pub timestamp: u64,
    pub txns: Vec<Arc<Transaction>>,
    txn_root: Hash256,
    digest: Hash256,
}

impl Batch {
    pub fn new(seq: u64, proposer: NodeId, timestamp: u64, txns: Vec<Arc<Transaction>>) -> Self {
        let txn_root = Block::compute_txn_root(&txns);
        let digest = Self::compute_digest(seq, proposer, timestamp, &txn_root);
        Batch { seq, proposer, timestamp, txns, txn_root, digest }
    }

    fn compute_digest(seq: u64, proposer: NodeId, timestamp: u64, txn_root: &Hash256) -> Hash256 {
        let mut e = Encoder::with_capacity(64);
        e.str("pbft-batch").u64(seq).u32(proposer.0).u64(timestamp).digest(txn_root);
        Hash256::digest(e.as_slice())
    }

    pub fn digest(&self) -> Hash256 {
        self.digest
    }

    pub fn txn_root(&self) -> Hash256 {
        self.txn_root
    }

    /// Recompute both digests from the contents.
    pub fn is_consistent(&self) -> bool {
        let root = Block::compute_txn_root(&self.txns);
        root == self.txn_root && Self::compute_digest(self.seq, self.proposer, self.timestamp, &root) == self.digest
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    PrePrepare,
    Prepare,
    Commit,
    Checkpoint,
    ViewChange,
    NewView,
}

pub fn vote_digest(phase: Phase, view: u64, seq: u64, digest: &Hash256) -> Hash256 {
    let mut e = Encoder::with_capacity(64);
    e.u8(phase as u8).u64(view).u64(seq).digest(digest);
    Hash256::digest(e.as_slice())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vote {
    pub view: u64,
    pub seq: u64,
    pub digest: Hash256,
    pub replica: NodeId,
    pub sig: Signature,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreparedEntry {
    pub seq: u64,
    pub view: u64,
    pub batch: Arc<Batch>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewChange {
    pub new_view: u64,
    pub replica: NodeId,
    pub stable_seq: u64,
    pub stable_root: Hash256,
    pub prepared: Vec<PreparedEntry>,
    pub sig: Signature,
}

impl ViewChange {
    fn signed_digest(&self) -> Hash256 {
        let mut e = Encoder::with_capacity(64 + 48 * self.prepared.len());
        e.u64(self.new_view).u32(self.replica.0).u64(self.stable_seq).digest(&self.stable_root);
        for p in &self.prepared {
            e.u64(p.seq).u64(p.view).digest(&p.batch.digest());
        }
        vote_digest(Phase::ViewChange, self.new_view, self.stable_seq, &Hash256::digest(e.as_slice()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NewView {
    pub view: u64,
    pub leader: NodeId,
    /// Replicas whose view-change messages justify this view.
    pub senders: Vec<NodeId>,
    /// Highest stable checkpoint among those messages.
    pub min_seq: u64,
    pub pre_prepares: Vec<Arc<Batch>>,
    pub sig: Signature,
}

impl NewView {
    fn signed_digest(&self) -> Hash256 {
        let mut e = Encoder::with_capacity(64 + 36 * self.pre_prepares.len());
        e.u64(self.view).u32(self.leader.0).u64(self.min_seq);
        for s in &self.senders {
            e.u32(s.0);
        }
        for b in &self.pre_prepares {
            e.digest(&b.digest());
        }
        vote_digest(Phase::NewView, self.view, self.min_seq, &Hash256::digest(e.as_slice()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PbftMessage {
    PrePrepare { view: u64, batch: Arc<Batch>, sig: Signature },
    Prepare(Vote),
    Commit(Vote),
    Checkpoint { seq: u64, state_root: Hash256, replica: NodeId, sig: Signature },
    ViewChange(Arc<ViewChange>),
    NewView(Arc<NewView>),
}

impl PbftMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            PbftMessage::PrePrepare { .. } => "pre-prepare",
            PbftMessage::Prepare(_) => "prepare",
            PbftMessage::Commit(_) => "commit",
            PbftMessage::Checkpoint { .. } => "checkpoint",
            PbftMessage::ViewChange(_) => "view-change",
            PbftMessage::NewView(_) => "new-view",
        }
    }

    /// Number of requests carried, for cost accounting.
    pub fn txn_count(&self) -> usize {
        match self {
            PbftMessage::PrePrepare { batch, .. } => batch.txns.len(),
            PbftMessage::ViewChange(vc) => vc.prepared.iter().map(|p| p.batch.txns.len()).sum(),
            PbftMessage::NewView(nv) => nv.pre_prepares.iter().map(|b| b.txns.len()).sum(),
            _ => 0,
        }
    }
}

/// A batch that gathered a commit quorum, released in sequence order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Committed {
    pub view: u64,
    pub batch: Arc<Batch>,
    pub votes: Vec<(NodeId, Signature)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PbftOutput {
    Broadcast(PbftMessage),
    Send(NodeId, PbftMessage),
    Execute(Committed),
    StartedViewChange(u64),
    EnteredView(u64),
    /// The replica is behind a certified checkpoint and must fetch the
    /// committed blocks up to `upto` from its peers.
    NeedSync { upto: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PbftError {
    #[error("invalid signature on {0} from {1}")]
    InvalidSignature(&'static str, NodeId),
    #[error("{kind} for view {got} while in view {current}")]
    WrongView { kind: &'static str, got: u64, current: u64 },
    #[error("malformed {0}")]
    Malformed(&'static str),
}

/// Adversarial behaviours a replica can be configured with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    #[default]
    Honest,
    /// As primary, send conflicting pre-prepares to the two halves of the
    /// replica set; as backup, vote for every batch it sees.
    Equivocate,
    /// Never vote, propose or change views.
    Withhold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Status {
    Normal,
    ViewChanging { target: u64, since: u64 },
}

#[derive(Default, Debug)]
struct Entry {
    /// Accepted pre-prepare per view.
    pre_prepare: BTreeMap<u64, Arc<Batch>>,
    prepares: HashMap<(u64, Hash256), BTreeSet<NodeId>>,
    commits: HashMap<(u64, Hash256), BTreeMap<NodeId, Signature>>,
    /// Highest view in which this replica saw the entry prepared.
    prepared: Option<(u64, Arc<Batch>)>,
    commit_sent: BTreeSet<u64>,
    committed: Option<Committed>,
    /// Last time the primary (re)sent the pre-prepare.
    proposed_at: u64,
}

pub struct PbftReplica {
    id: NodeId,
    params: PbftParams,
    signer: Arc<dyn Signer>,
    behavior: Behavior,
    view: u64,
    status: Status,
    next_seq: u64,
    last_executed: u64,
    stable: (u64, Hash256),
    log: BTreeMap<u64, Entry>,
    checkpoint_votes: BTreeMap<u64, HashMap<Hash256, BTreeSet<NodeId>>>,
    view_changes: BTreeMap<u64, BTreeMap<NodeId, Arc<ViewChange>>>,
    new_view_sent: BTreeSet<u64>,
    pool: VecDeque<Arc<Transaction>>,
    pending: HashSet<Hash256>,
    inflight: HashSet<Hash256>,
    done: HashSet<Hash256>,
    batch_started: Option<u64>,
    progress_timer: Option<u64>,
    view_changes_started: u64,
}

impl PbftReplica {
    pub fn new(id: NodeId, params: PbftParams, signer: Arc<dyn Signer>) -> Self {
        assert!(params.n >= 3 * params.f + 1, "PBFT requires N >= 3f + 1");
        assert!(params.batch_size >= 1, "batch size must be positive");
        PbftReplica {
            id,
            params,
            signer,
            behavior: Behavior::Honest,
            view: 0,
            status: Status::Normal,
            next_seq: 1,
            last_executed: 0,
            stable: (0, Hash256::ZERO),
            log: BTreeMap::new(),
            checkpoint_votes: BTreeMap::new(),
            view_changes: BTreeMap::new(),
            new_view_sent: BTreeSet::new(),
            pool: VecDeque::new(),
            pending: HashSet::new(),
            inflight: HashSet::new(),
            done: HashSet::new(),
            batch_started: None,
            progress_timer: None,
            view_changes_started: 0,
        }
    }

    pub fn with_behavior(mut self, b: Behavior) -> Self {
        self.behavior = b;
        self
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn params(&self) -> &PbftParams {
        &self.params
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn in_view_change(&self) -> bool {
        matches!(self.status, Status::ViewChanging { .. })
    }

    pub fn is_primary(&self) -> bool {
        self.params.primary(self.view) == self.id
    }

    pub fn last_executed(&self) -> u64 {
        self.last_executed
    }

    pub fn stable_checkpoint(&self) -> (u64, Hash256) {
        self.stable
    }

    pub fn pending_requests(&self) -> usize {
        self.pending.len()
    }

    pub fn view_changes_started(&self) -> u64 {
        self.view_changes_started
    }

    /// Whether `seq` has gathered a commit quorum here (executed or not).
    pub fn is_committed(&self, seq: u64) -> bool {
        seq <= self.last_executed || self.log.get(&seq).is_some_and(|e| e.committed.is_some())
    }

    /// Digest committed at `seq`, while the entry is still in the log.
    pub fn committed_digest(&self, seq: u64) -> Option<Hash256> {
        self.log.get(&seq)?.committed.as_ref().map(|c| c.batch.digest())
    }

    fn sign(&self, m: &Hash256) -> Signature {
        self.signer.sign(Principal::Node(self.id.0), m)
    }

    fn verify(&self, who: NodeId, m: &Hash256, sig: &Signature) -> bool {
        self.signer.verify(Principal::Node(who.0), m, sig)
    }

    fn vote(&self, phase: Phase, view: u64, seq: u64, digest: Hash256) -> Vote {
        Vote { view, seq, digest, replica: self.id, sig: self.sign(&vote_digest(phase, view, seq, &digest)) }
    }

    fn has_work(&self) -> bool {
        !self.pending.is_empty() || self.log.range(self.last_executed + 1..).next().is_some()
    }

    fn arm_timer(&mut self, now: u64) {
        if self.progress_timer.is_none() && self.has_work() {
            self.progress_timer = Some(now);
        }
    }

    /// Queue a client request for ordering. Returns false for duplicates.
    pub fn submit(&mut self, txn: Arc<Transaction>, now: u64) -> bool {
        if self.done.contains(&txn.id) || self.pending.contains(&txn.id) || self.pending.len() >= POOL_LIMIT {
            return false;
        }
        self.pending.insert(txn.id);
        self.pool.push_back(txn);
        if self.batch_started.is_none() {
            self.batch_started = Some(now);
        }
        self.arm_timer(now);
        true
    }

    /// Clock tick: batch cutting, pre-prepare retransmission and timers.
    pub fn tick(&mut self, now: u64) -> Vec<PbftOutput> {
        let mut out = Vec::new();
        if self.behavior == Behavior::Withhold {
            return out;
        }
        match self.status {
            Status::Normal => {
                if self.is_primary() {
                    self.cut_batches(now, &mut out);
                    self.resend_pre_prepares(now, &mut out);
                }
                if let Some(t0) = self.progress_timer {
                    if now.saturating_sub(t0) >= self.params.view_change_timeout {
                        self.start_view_change(self.view + 1, now, &mut out);
                    }
                }
            }
            Status::ViewChanging { target, since } => {
                if now.saturating_sub(since) >= self.params.view_change_timeout {
                    self.start_view_change(target + 1, now, &mut out);
                }
            }
        }
        out
    }

    fn cut_batches(&mut self, now: u64, out: &mut Vec<PbftOutput>) {
        loop {
            if self.next_seq > self.stable.0 + self.params.window {
                return;
            }
            let available = self.pending.len().saturating_sub(self.inflight.len());
            if available == 0 {
                self.batch_started = None;
                return;
            }
            let timed_out = self.batch_started.is_some_and(|t| now.saturating_sub(t) >= self.params.batch_timeout);
            if available < self.params.batch_size && !timed_out {
                return;
            }
            self.compact_pool();
            let mut txns = Vec::with_capacity(self.params.batch_size.min(available));
            for t in &self.pool {
                if txns.len() == self.params.batch_size {
                    break;
                }
                if self.pending.contains(&t.id) && !self.inflight.contains(&t.id) {
                    txns.push(t.clone());
                }
            }
            if txns.is_empty() {
                self.batch_started = None;
                return;
            }
            for t in &txns {
                self.inflight.insert(t.id);
            }
            let seq = self.next_seq;
            self.next_seq += 1;
            self.batch_started = if available > txns.len() { Some(now) } else { None };
            self.propose(Batch::new(seq, self.id, now, txns), now, out);
        }
    }

    /// Drop retired requests from the pool once they dominate it.
    fn compact_pool(&mut self) {
        while self.pool.front().is_some_and(|t| !self.pending.contains(&t.id)) {
            self.pool.pop_front();
        }
        if self.pool.len() > 2 * self.pending.len() + 1024 {
            let pending = &self.pending;
            self.pool.retain(|t| pending.contains(&t.id));
        }
    }

    fn propose(&mut self, batch: Batch, now: u64, out: &mut Vec<PbftOutput>) {
        let view = self.view;
        if self.behavior == Behavior::Equivocate {
            // Same sequence number, different content for each half.
            let alt = Batch::new(batch.seq, batch.proposer, batch.timestamp + 1, batch.txns.clone());
            let (a, b) = (Arc::new(batch), Arc::new(alt));
            for r in 0..self.params.n as u32 {
                if NodeId(r) == self.id {
                    continue;
                }
                let pick = if r % 2 == 0 { &a } else { &b };
                let sig = self.sign(&vote_digest(Phase::PrePrepare, view, pick.seq, &pick.digest()));
                out.push(PbftOutput::Send(NodeId(r), PbftMessage::PrePrepare { view, batch: pick.clone(), sig }));
            }
            return;
        }
        let batch = Arc::new(batch);
        let seq = batch.seq;
        let sig = self.sign(&vote_digest(Phase::PrePrepare, view, seq, &batch.digest()));
        let e = self.log.entry(seq).or_default();
        e.pre_prepare.insert(view, batch.clone());
        e.proposed_at = now;
        out.push(PbftOutput::Broadcast(PbftMessage::PrePrepare { view, batch, sig }));
        self.arm_timer(now);
    }

    fn resend_pre_prepares(&mut self, now: u64, out: &mut Vec<PbftOutput>) {
        let view = self.view;
        let timeout = self.params.batch_timeout;
        let mut resend = Vec::new();
        for (&seq, e) in self.log.range_mut(self.last_executed + 1..) {
            if e.committed.is_some() || now.saturating_sub(e.proposed_at) < timeout {
                continue;
            }
            if let Some(b) = e.pre_prepare.get(&view) {
                e.proposed_at = now;
                resend.push((seq, b.clone()));
            }
        }
        for (seq, batch) in resend {
            let sig = self.sign(&vote_digest(Phase::PrePrepare, view, seq, &batch.digest()));
            out.push(PbftOutput::Broadcast(PbftMessage::PrePrepare { view, batch, sig }));
        }
    }

    /// Process one protocol message from `from`.
    pub fn handle(&mut self, from: NodeId, msg: PbftMessage, now: u64) -> Result<Vec<PbftOutput>, PbftError> {
        let mut out = Vec::new();
        if self.behavior == Behavior::Withhold {
            return Ok(out);
        }
        match msg {
            PbftMessage::PrePrepare { view, batch, sig } => self.on_pre_prepare(from, view, batch, sig, now, &mut out)?,
            PbftMessage::Prepare(v) => self.on_prepare(v, now, &mut out)?,
            PbftMessage::Commit(v) => self.on_commit(v, now, &mut out)?,
            PbftMessage::Checkpoint { seq, state_root, replica, sig } => {
                self.on_checkpoint(seq, state_root, replica, sig, &mut out)?
            }
            PbftMessage::ViewChange(vc) => self.on_view_change(vc, now, &mut out)?,
            PbftMessage::NewView(nv) => self.on_new_view(nv, now, &mut out)?,
        }
        Ok(out)
    }

    fn in_window(&self, seq: u64) -> bool {
        seq > self.stable.0 && seq <= self.stable.0 + self.params.window
    }

    fn on_pre_prepare(
        &mut self,
        from: NodeId,
        view: u64,
        batch: Arc<Batch>,
        sig: Signature,
        now: u64,
        out: &mut Vec<PbftOutput>,
    ) -> Result<(), PbftError> {
        let primary = self.params.primary(view);
        if from != primary {
            return Err(PbftError::Malformed("pre-prepare from a non-primary"));
        }
        if !self.verify(primary, &vote_digest(Phase::PrePrepare, view, batch.seq, &batch.digest()), &sig) {
            return Err(PbftError::InvalidSignature("pre-prepare", from));
        }
        if view != self.view || self.status != Status::Normal {
            return Err(PbftError::WrongView { kind: "pre-prepare", got: view, current: self.view });
        }
        if !self.in_window(batch.seq) || primary == self.id {
            return Ok(());
        }
        if !batch.is_consistent() {
            return Err(PbftError::Malformed("pre-prepare digest"));
        }
        self.accept_pre_prepare(view, batch, now, out);
        Ok(())
    }

    fn accept_pre_prepare(&mut self, view: u64, batch: Arc<Batch>, now: u64, out: &mut Vec<PbftOutput>) {
        let seq = batch.seq;
        let digest = batch.digest();
        let equivocate = self.behavior == Behavior::Equivocate;
        let e = self.log.entry(seq).or_default();
        match e.pre_prepare.get(&view) {
            Some(b) if b.digest() == digest => return,
            Some(_) if !equivocate => return,
            Some(_) => {}
            None => {
                e.pre_prepare.insert(view, batch.clone());
            }
        }
        for t in &batch.txns {
            if self.pending.contains(&t.id) {
                self.inflight.insert(t.id);
            }
        }
        let v = self.vote(Phase::Prepare, view, seq, digest);
        out.push(PbftOutput::Broadcast(PbftMessage::Prepare(v.clone())));
        self.record_prepare(v, now, out);
        if equivocate {
            let c = self.vote(Phase::Commit, view, seq, digest);
            out.push(PbftOutput::Broadcast(PbftMessage::Commit(c)));
        }
        self.arm_timer(now);
    }

    fn on_prepare(&mut self, v: Vote, now: u64, out: &mut Vec<PbftOutput>) -> Result<(), PbftError> {
        if !self.verify(v.replica, &vote_digest(Phase::Prepare, v.view, v.seq, &v.digest), &v.sig) {
            return Err(PbftError::InvalidSignature("prepare", v.replica));
        }
        if v.view != self.view {
            return Err(PbftError::WrongView { kind: "prepare", got: v.view, current: self.view });
        }
        if !self.in_window(v.seq) || v.replica == self.params.primary(v.view) {
            return Ok(());
        }
        self.record_prepare(v, now, out);
        Ok(())
    }

    fn record_prepare(&mut self, v: Vote, now: u64, out: &mut Vec<PbftOutput>) {
        self.log.entry(v.seq).or_default().prepares.entry((v.view, v.digest)).or_default().insert(v.replica);
        self.try_prepared(v.seq, v.view, now, out);
    }

    fn try_prepared(&mut self, seq: u64, view: u64, now: u64, out: &mut Vec<PbftOutput>) {
        let needed = self.params.quorum() - 1;
        let Some(e) = self.log.get_mut(&seq) else { return };
        let Some(batch) = e.pre_prepare.get(&view).cloned() else { return };
        if e.commit_sent.contains(&view) {
            return;
        }
        let count = e.prepares.get(&(view, batch.digest())).map_or(0, BTreeSet::len);
        if count < needed {
            return;
        }
        e.prepared = Some((view, batch.clone()));
        e.commit_sent.insert(view);
        let c = self.vote(Phase::Commit, view, seq, batch.digest());
        out.push(PbftOutput::Broadcast(PbftMessage::Commit(c.clone())));
        self.record_commit(c, now, out);
    }

    fn on_commit(&mut self, v: Vote, now: u64, out: &mut Vec<PbftOutput>) -> Result<(), PbftError> {
        if !self.verify(v.replica, &vote_digest(Phase::Commit, v.view, v.seq, &v.digest), &v.sig) {
            return Err(PbftError::InvalidSignature("commit", v.replica));
        }
        if v.view != self.view {
            return Err(PbftError::WrongView { kind: "commit", got: v.view, current: self.view });
        }
        if !self.in_window(v.seq) {
            return Ok(());
        }
        self.record_commit(v, now, out);
        Ok(())
    }

    fn record_commit(&mut self, v: Vote, now: u64, out: &mut Vec<PbftOutput>) {
        let quorum = self.params.quorum();
        let e = self.log.entry(v.seq).or_default();
        e.commits.entry((v.view, v.digest)).or_default().insert(v.replica, v.sig);
        if e.committed.is_some() {
            return;
        }
        let Some((pv, batch)) = e.prepared.clone() else { return };
        if pv != v.view || batch.digest() != v.digest {
            return;
        }
        let votes = &e.commits[&(v.view, v.digest)];
        if votes.len() < quorum {
            return;
        }
        e.committed = Some(Committed {
            view: v.view,
            batch,
            votes: votes.iter().map(|(n, s)| (*n, *s)).collect(),
        });
        self.try_execute(now, out);
    }

    fn try_execute(&mut self, now: u64, out: &mut Vec<PbftOutput>) {
        while let Some(c) = self.log.get(&(self.last_executed + 1)).and_then(|e| e.committed.clone()) {
            self.last_executed += 1;
            for t in &c.batch.txns {
                self.retire(t.id);
            }
            out.push(PbftOutput::Execute(c));
            self.progress_timer = None;
        }
        self.arm_timer(now);
    }

    fn retire(&mut self, id: Hash256) {
        self.pending.remove(&id);
        self.inflight.remove(&id);
        self.done.insert(id);
    }

    /// Host callback once a checkpointed sequence number has executed.
    pub fn checkpoint(&mut self, seq: u64, state_root: Hash256) -> Vec<PbftOutput> {
        let mut out = Vec::new();
        if self.behavior == Behavior::Withhold || seq % self.params.checkpoint_interval != 0 {
            return out;
        }
        let sig = self.sign(&vote_digest(Phase::Checkpoint, 0, seq, &state_root));
        out.push(PbftOutput::Broadcast(PbftMessage::Checkpoint { seq, state_root, replica: self.id, sig }));
        self.record_checkpoint(seq, state_root, self.id, &mut out);
        out
    }

    fn on_checkpoint(
        &mut self,
        seq: u64,
        root: Hash256,
        replica: NodeId,
        sig: Signature,
        out: &mut Vec<PbftOutput>,
    ) -> Result<(), PbftError> {
        if !self.verify(replica, &vote_digest(Phase::Checkpoint, 0, seq, &root), &sig) {
            return Err(PbftError::InvalidSignature("checkpoint", replica));
        }
        if seq > self.stable.0 {
            self.record_checkpoint(seq, root, replica, out);
        }
        Ok(())
    }

    fn record_checkpoint(&mut self, seq: u64, root: Hash256, replica: NodeId, out: &mut Vec<PbftOutput>) {
        let voters = self.checkpoint_votes.entry(seq).or_default().entry(root).or_default();
        voters.insert(replica);
        if voters.len() >= self.params.quorum() && seq > self.stable.0 {
            self.stable = (seq, root);
            self.log = self.log.split_off(&(seq + 1));
            self.checkpoint_votes = self.checkpoint_votes.split_off(&(seq + 1));
            if self.last_executed < seq {
                out.push(PbftOutput::NeedSync { upto: seq });
            }
        }
    }

    /// Host callback after fetching certified blocks up to `height`.
    pub fn synced(&mut self, height: u64, txn_ids: impl IntoIterator<Item = Hash256>, now: u64) -> Vec<PbftOutput> {
        for id in txn_ids {
            self.retire(id);
        }
        let mut out = Vec::new();
        if height > self.last_executed {
            self.last_executed = height;
            self.next_seq = self.next_seq.max(height + 1);
            self.progress_timer = None;
        }
        self.try_execute(now, &mut out);
        out
    }

    fn start_view_change(&mut self, target: u64, now: u64, out: &mut Vec<PbftOutput>) {
        self.status = Status::ViewChanging { target, since: now };
        self.view_changes_started += 1;
        self.progress_timer = None;
        let prepared = self
            .log
            .iter()
            .filter(|(&s, _)| s > self.stable.0)
            .filter_map(|(&seq, e)| e.prepared.as_ref().map(|(view, batch)| PreparedEntry { seq, view: *view, batch: batch.clone() }))
            .collect();
        let mut vc = ViewChange {
            new_view: target,
            replica: self.id,
            stable_seq: self.stable.0,
            stable_root: self.stable.1,
            prepared,
            sig: Signature::default(),
        };
        vc.sig = self.sign(&vc.signed_digest());
        let vc = Arc::new(vc);
        out.push(PbftOutput::StartedViewChange(target));
        out.push(PbftOutput::Broadcast(PbftMessage::ViewChange(vc.clone())));
        self.view_changes.entry(target).or_default().insert(self.id, vc);
        self.try_new_view(target, now, out);
    }

    fn current_target(&self) -> u64 {
        match self.status {
            Status::Normal => self.view,
            Status::ViewChanging { target, .. } => target,
        }
    }

    fn on_view_change(&mut self, vc: Arc<ViewChange>, now: u64, out: &mut Vec<PbftOutput>) -> Result<(), PbftError> {
        if !self.verify(vc.replica, &vc.signed_digest(), &vc.sig) {
            return Err(PbftError::InvalidSignature("view-change", vc.replica));
        }
        if vc.new_view <= self.view {
            return Ok(());
        }
        let target = vc.new_view;
        self.view_changes.entry(target).or_default().insert(vc.replica, vc);
        // Join once f + 1 replicas want a view beyond ours.
        let current = self.current_target();
        let mut wanting: BTreeMap<NodeId, u64> = BTreeMap::new();
        for (&v, m) in self.view_changes.range(current + 1..) {
            for &r in m.keys() {
                wanting.entry(r).or_insert(v);
            }
        }
        if wanting.len() > self.params.f {
            let smallest = *wanting.values().min().expect("non-empty");
            self.start_view_change(smallest, now, out);
        }
        self.try_new_view(target, now, out);
        Ok(())
    }

    fn try_new_view(&mut self, target: u64, now: u64, out: &mut Vec<PbftOutput>) {
        if self.params.primary(target) != self.id
            || self.current_target() != target
            || self.new_view_sent.contains(&target)
        {
            return;
        }
        let Some(vcs) = self.view_changes.get(&target) else { return };
        if vcs.len() < self.params.quorum() {
            return;
        }
        let chosen: Vec<&Arc<ViewChange>> = vcs.values().take(self.params.quorum()).collect();
        let min_seq = chosen.iter().map(|vc| vc.stable_seq).max().unwrap_or(0);
        let mut best: BTreeMap<u64, (u64, Arc<Batch>)> = BTreeMap::new();
        for vc in &chosen {
            for p in vc.prepared.iter().filter(|p| p.seq > min_seq) {
                let slot = best.entry(p.seq).or_insert((p.view, p.batch.clone()));
                if p.view > slot.0 {
                    *slot = (p.view, p.batch.clone());
                }
            }
        }
        let max_seq = best.keys().next_back().copied().unwrap_or(min_seq);
        let pre_prepares = (min_seq + 1..=max_seq)
            .map(|s| match best.remove(&s) {
                Some((_, b)) => b,
                None => Arc::new(Batch::new(s, self.id, now, Vec::new())),
            })
            .collect();
        let mut nv = NewView {
            view: target,
            leader: self.id,
            senders: chosen.iter().map(|vc| vc.replica).collect(),
            min_seq,
            pre_prepares,
            sig: Signature::default(),
        };
        nv.sig = self.sign(&nv.signed_digest());
        self.new_view_sent.insert(target);
        let nv = Arc::new(nv);
        out.push(PbftOutput::Broadcast(PbftMessage::NewView(nv.clone())));
        self.install_view(&nv, now, out);
    }

    fn on_new_view(&mut self, nv: Arc<NewView>, now: u64, out: &mut Vec<PbftOutput>) -> Result<(), PbftError> {
        if nv.leader != self.params.primary(nv.view) {
            return Err(PbftError::Malformed("new-view from a non-primary"));
        }
        if !self.verify(nv.leader, &nv.signed_digest(), &nv.sig) {
            return Err(PbftError::InvalidSignature("new-view", nv.leader));
        }
        if nv.view <= self.view {
            return Ok(());
        }
        let distinct: BTreeSet<NodeId> = nv.senders.iter().copied().collect();
        if distinct.len() < self.params.quorum() {
            return Err(PbftError::Malformed("new-view without a quorum"));
        }
        if nv.pre_prepares.iter().enumerate().any(|(i, b)| b.seq != nv.min_seq + 1 + i as u64 || !b.is_consistent()) {
            return Err(PbftError::Malformed("new-view pre-prepares"));
        }
        self.install_view(&nv, now, out);
        Ok(())
    }

    fn install_view(&mut self, nv: &NewView, now: u64, out: &mut Vec<PbftOutput>) {
        self.view = nv.view;
        self.status = Status::Normal;
        self.view_changes = self.view_changes.split_off(&(nv.view + 1));
        self.inflight.clear();
        out.push(PbftOutput::EnteredView(nv.view));
        let leader = self.params.primary(nv.view) == self.id;
        let mut max_seq = nv.min_seq;
        for b in &nv.pre_prepares {
            max_seq = max_seq.max(b.seq);
            if b.seq <= self.stable.0 {
                continue;
            }
            if leader {
                let e = self.log.entry(b.seq).or_default();
                e.pre_prepare.insert(nv.view, b.clone());
                e.proposed_at = now;
                for t in &b.txns {
                    self.inflight.insert(t.id);
                }
            } else {
                self.accept_pre_prepare(nv.view, b.clone(), now, out);
            }
        }
        self.next_seq = max_seq.max(self.last_executed).max(self.stable.0) + 1;
        self.batch_started = if self.pending.is_empty() { None } else { Some(now) };
        self.progress_timer = None;
        if nv.min_seq > self.last_executed {
            out.push(PbftOutput::NeedSync { upto: nv.min_seq });
        }
        self.arm_timer(now);
    }
}
