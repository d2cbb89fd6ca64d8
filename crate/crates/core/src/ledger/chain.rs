//! Block forest with fork choice, confirmation and fork accounting.

use std::cmp::Reverse;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::Hash256;
use crate::ledger::block::Block;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForkMode {
    /// Heaviest-by-height head, ties to the smaller digest.
    LongestChain,
    /// The unique certified sequence; conflicting blocks at a height are a
    /// safety violation.
    Finalized,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("parent {parent:?} of block {block:?} is unknown; block buffered")]
    UnknownParent { block: Hash256, parent: Hash256 },
    #[error("invalid certificate: {0}")]
    InvalidCert(String),
    #[error("invalid block: {0}")]
    InvalidBlock(String),
    #[error("block {0:?} already known")]
    DuplicateBlock(Hash256),
    #[error("conflicting certified blocks at height {height}: {first:?} and {second:?}")]
    SafetyViolation { height: u64, first: Hash256, second: Hash256 },
}

/// Validates engine-specific evidence before a block joins the forest.
pub trait CertVerifier {
    fn verify(&self, block: &Block, parent: &Block) -> Result<(), String>;
}

/// Verifier that admits any certificate.
pub struct AcceptAll;

impl CertVerifier for AcceptAll {
    fn verify(&self, _: &Block, _: &Block) -> Result<(), String> {
        Ok(())
    }
}

/// Change to the main branch caused by one append.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct MainUpdate {
    /// Blocks that left the main branch, tip first.
    pub detached: Vec<Hash256>,
    /// Blocks that joined the main branch, lowest height first.
    pub attached: Vec<Hash256>,
}

impl MainUpdate {
    pub fn is_empty(&self) -> bool {
        self.detached.is_empty() && self.attached.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForkDelta {
    pub total_blocks: u64,
    pub main_blocks: u64,
    pub delta: u64,
}

impl ForkDelta {
    /// Share of appended blocks that made it onto the main branch; 1 when
    /// nothing has been appended yet.
    pub fn ratio(&self) -> f64 {
        if self.total_blocks == 0 {
            1.0
        } else {
            self.main_blocks as f64 / self.total_blocks as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct ChainView {
    blocks: HashMap<Hash256, Arc<Block>>,
    children: HashMap<Hash256, Vec<Hash256>>,
    heads: BTreeSet<Hash256>,
    main: Vec<Hash256>,
    orphans: HashMap<Hash256, Vec<Arc<Block>>>,
    orphan_ids: HashSet<Hash256>,
    conflicts: Vec<(u64, Hash256, Hash256)>,
    mode: ForkMode,
    confirmation_depth: u64,
    appended: u64,
}

impl ChainView {
    pub fn new(genesis: Block, mode: ForkMode, confirmation_depth: u64) -> Self {
        let g = genesis.hash();
        let mut blocks = HashMap::new();
        blocks.insert(g, Arc::new(genesis));
        ChainView {
            blocks,
            children: HashMap::new(),
            heads: BTreeSet::from([g]),
            main: vec![g],
            orphans: HashMap::new(),
            orphan_ids: HashSet::new(),
            conflicts: Vec::new(),
            mode,
            confirmation_depth,
            appended: 0,
        }
    }

    pub fn mode(&self) -> ForkMode {
        self.mode
    }

    pub fn genesis(&self) -> Hash256 {
        self.main[0]
    }

    pub fn tip(&self) -> Hash256 {
        *self.main.last().expect("main branch holds genesis")
    }

    pub fn tip_block(&self) -> &Arc<Block> {
        &self.blocks[&self.tip()]
    }

    pub fn height(&self) -> u64 {
        (self.main.len() - 1) as u64
    }

    pub fn get(&self, h: &Hash256) -> Option<&Arc<Block>> {
        self.blocks.get(h)
    }

    pub fn contains(&self, h: &Hash256) -> bool {
        self.blocks.contains_key(h)
    }

    pub fn knows(&self, h: &Hash256) -> bool {
        self.blocks.contains_key(h) || self.orphan_ids.contains(h)
    }

    pub fn main_branch(&self) -> &[Hash256] {
        &self.main
    }

    pub fn main_block(&self, height: u64) -> Option<&Arc<Block>> {
        self.main.get(height as usize).map(|h| &self.blocks[h])
    }

    pub fn is_on_main(&self, h: &Hash256) -> bool {
        match self.blocks.get(h) {
            Some(b) => self.main.get(b.height() as usize) == Some(h),
            None => false,
        }
    }

    pub fn heads(&self) -> &BTreeSet<Hash256> {
        &self.heads
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Arc<Block>> {
        self.blocks.values()
    }

    /// Parents that buffered blocks are waiting for.
    pub fn missing_parents(&self) -> impl Iterator<Item = &Hash256> {
        self.orphans.keys()
    }

    pub fn orphan_count(&self) -> usize {
        self.orphan_ids.len()
    }

    pub fn conflicts(&self) -> &[(u64, Hash256, Hash256)] {
        &self.conflicts
    }

    /// Highest main-branch height considered final.
    pub fn confirmed_upto(&self) -> u64 {
        match self.mode {
            ForkMode::Finalized => self.height(),
            ForkMode::LongestChain => self.height().saturating_sub(self.confirmation_depth),
        }
    }

    /// Insert a block. Blocks whose parent is unknown are buffered and
    /// connected once the parent arrives.
    pub fn append(
        &mut self,
        block: Arc<Block>,
        verifier: &dyn CertVerifier,
    ) -> Result<MainUpdate, ChainError> {
        let h = block.hash();
        if self.knows(&h) {
            return Err(ChainError::DuplicateBlock(h));
        }
        if block.is_genesis() {
            return Err(ChainError::InvalidBlock("second genesis".into()));
        }
        let parent_hash = block.header.parent_hash;
        let Some(parent) = self.blocks.get(&parent_hash).cloned() else {
            self.orphan_ids.insert(h);
            self.orphans.entry(parent_hash).or_default().push(block);
            return Err(ChainError::UnknownParent { block: h, parent: parent_hash });
        };
        Self::validate(&block, &parent, verifier)?;

        let mut connected = vec![h];
        self.insert(h, block);
        // Pull in buffered descendants.
        let mut frontier = vec![h];
        while let Some(p) = frontier.pop() {
            let Some(waiting) = self.orphans.remove(&p) else { continue };
            let parent = self.blocks[&p].clone();
            for child in waiting {
                let ch = child.hash();
                self.orphan_ids.remove(&ch);
                if Self::validate(&child, &parent, verifier).is_ok() {
                    self.insert(ch, child);
                    connected.push(ch);
                    frontier.push(ch);
                }
            }
        }
        Ok(match self.mode {
            ForkMode::LongestChain => self.update_longest(&connected),
            ForkMode::Finalized => self.update_finalized(&connected),
        })
    }

    fn validate(block: &Block, parent: &Block, verifier: &dyn CertVerifier) -> Result<(), ChainError> {
        if block.header.height != parent.header.height + 1 {
            return Err(ChainError::InvalidBlock(format!(
                "height {} does not follow parent height {}",
                block.header.height, parent.header.height
            )));
        }
        if Block::compute_txn_root(&block.txns) != block.header.txn_root {
            return Err(ChainError::InvalidBlock("txn_root mismatch".into()));
        }
        verifier.verify(block, parent).map_err(ChainError::InvalidCert)
    }

    fn insert(&mut self, h: Hash256, block: Arc<Block>) {
        let parent = block.header.parent_hash;
        self.heads.remove(&parent);
        self.heads.insert(h);
        self.children.entry(parent).or_default().push(h);
        self.blocks.insert(h, block);
        self.appended += 1;
    }

    fn key(&self, h: &Hash256) -> (u64, Reverse<Hash256>) {
        (self.blocks[h].height(), Reverse(*h))
    }

    fn update_longest(&mut self, connected: &[Hash256]) -> MainUpdate {
        let best = connected
            .iter()
            .max_by_key(|h| self.key(h))
            .copied()
            .expect("at least one block connected");
        if self.key(&best) <= self.key(&self.tip()) {
            return MainUpdate::default();
        }
        let mut attached = Vec::new();
        let mut cur = best;
        while !self.is_on_main(&cur) {
            attached.push(cur);
            cur = self.blocks[&cur].header.parent_hash;
        }
        let fork_height = self.blocks[&cur].height() as usize;
        let detached: Vec<Hash256> = self.main.drain(fork_height + 1..).rev().collect();
        attached.reverse();
        self.main.extend_from_slice(&attached);
        MainUpdate { detached, attached }
    }

    fn update_finalized(&mut self, connected: &[Hash256]) -> MainUpdate {
        let mut attached = Vec::new();
        loop {
            let tip = self.tip();
            let Some(kids) = self.children.get(&tip).cloned() else { break };
            let next = kids[0];
            for other in &kids[1..] {
                self.record_conflict(self.blocks[&next].height(), next, *other);
            }
            self.main.push(next);
            attached.push(next);
        }
        // Blocks that landed beside the main branch.
        for c in connected {
            let hc = self.blocks[c].height();
            if hc <= self.height() && self.main[hc as usize] != *c {
                self.record_conflict(hc, self.main[hc as usize], *c);
            }
        }
        MainUpdate { detached: Vec::new(), attached }
    }

    fn record_conflict(&mut self, height: u64, a: Hash256, b: Hash256) {
        let (first, second) = if a <= b { (a, b) } else { (b, a) };
        if !self.conflicts.contains(&(height, first, second)) {
            self.conflicts.push((height, first, second));
        }
    }

    /// Recompute the selected branch from the forest alone.
    pub fn fork_choice(&self, mode: ForkMode) -> Result<Vec<Hash256>, ChainError> {
        match mode {
            ForkMode::LongestChain => {
                let best = self
                    .blocks
                    .keys()
                    .max_by_key(|h| self.key(h))
                    .copied()
                    .expect("forest holds genesis");
                let mut path = vec![best];
                let mut cur = best;
                while !self.blocks[&cur].is_genesis() {
                    cur = self.blocks[&cur].header.parent_hash;
                    path.push(cur);
                }
                path.reverse();
                Ok(path)
            }
            ForkMode::Finalized => {
                let mut by_height: HashMap<u64, Vec<Hash256>> = HashMap::new();
                for (h, b) in &self.blocks {
                    by_height.entry(b.height()).or_default().push(*h);
                }
                let mut heights: Vec<u64> = by_height.keys().copied().collect();
                heights.sort_unstable();
                let mut path = Vec::with_capacity(heights.len());
                for hgt in heights {
                    let mut at = by_height.remove(&hgt).unwrap();
                    if at.len() > 1 {
                        at.sort();
                        return Err(ChainError::SafetyViolation { height: hgt, first: at[0], second: at[1] });
                    }
                    let h = at[0];
                    if let Some(prev) = path.last() {
                        if self.blocks[&h].header.parent_hash != *prev {
                            break;
                        }
                    }
                    path.push(h);
                }
                Ok(path)
            }
        }
    }

    pub fn fork_delta(&self) -> ForkDelta {
        let main = self.height();
        ForkDelta { total_blocks: self.appended, main_blocks: main, delta: self.appended - main }
    }

    /// One JSON object per block, ordered by height then digest.
    pub fn dump_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut all: Vec<(&Hash256, &Arc<Block>)> = self.blocks.iter().collect();
        all.sort_by_key(|(h, b)| (b.height(), **h));
        for (h, b) in all {
            let line = ChainDumpLine { hash: *h, on_main: self.is_on_main(h), block: b.as_ref() };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ChainDumpLine<'a> {
    hash: Hash256,
    on_main: bool,
    block: &'a Block,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::block::{BlockHeader, Certificate, NodeId};

    fn child(parent: &Block, salt: u64) -> Arc<Block> {
        Arc::new(Block {
            header: BlockHeader {
                height: parent.height() + 1,
                parent_hash: parent.hash(),
                proposer: NodeId(0),
                nonce: salt,
                state_root: Hash256::ZERO,
                txn_root: Hash256::ZERO,
                timestamp: parent.header.timestamp + 1,
            },
            txns: vec![],
            cert: Certificate::Work,
        })
    }

    fn linear(view: &mut ChainView, from: &Block, n: usize, salt: u64) -> Vec<Arc<Block>> {
        let mut out = Vec::new();
        let mut cur = Arc::new(from.clone());
        for _ in 0..n {
            let b = child(&cur, salt);
            view.append(b.clone(), &AcceptAll).unwrap();
            out.push(b.clone());
            cur = b;
        }
        out
    }

    #[test]
    fn linear_chain_is_main() {
        let g = Block::genesis(Hash256::ZERO);
        let mut v = ChainView::new(g.clone(), ForkMode::LongestChain, 5);
        let bs = linear(&mut v, &g, 3, 0);
        let expect: Vec<Hash256> = std::iter::once(g.hash()).chain(bs.iter().map(|b| b.hash())).collect();
        assert_eq!(v.main_branch(), expect.as_slice());
        assert_eq!(v.fork_choice(ForkMode::LongestChain).unwrap(), expect);
        assert_eq!(v.fork_delta(), ForkDelta { total_blocks: 3, main_blocks: 3, delta: 0 });
    }

    #[test]
    fn longer_branch_wins() {
        let g = Block::genesis(Hash256::ZERO);
        let mut v = ChainView::new(g.clone(), ForkMode::LongestChain, 5);
        let a = linear(&mut v, &g, 5, 1);
        let b = linear(&mut v, &g, 7, 2);
        assert_eq!(v.tip(), b.last().unwrap().hash());
        assert_eq!(v.height(), 7);
        assert_eq!(v.fork_delta().delta, 5);
        assert!(!v.is_on_main(&a[4].hash()));
    }

    #[test]
    fn equal_height_tie_goes_to_smaller_digest() {
        let g = Block::genesis(Hash256::ZERO);
        let mut v = ChainView::new(g.clone(), ForkMode::LongestChain, 5);
        let a = linear(&mut v, &g, 4, 1);
        let b = linear(&mut v, &g, 4, 2);
        let ha = a.last().unwrap().hash();
        let hb = b.last().unwrap().hash();
        assert_eq!(v.tip(), ha.min(hb));
    }

    #[test]
    fn empty_chain_delta_is_zero() {
        let v = ChainView::new(Block::genesis(Hash256::ZERO), ForkMode::LongestChain, 5);
        assert_eq!(v.fork_delta(), ForkDelta { total_blocks: 0, main_blocks: 0, delta: 0 });
        assert_eq!(v.fork_delta().ratio(), 1.0);
    }

    #[test]
    fn orphans_connect_when_parent_arrives() {
        let g = Block::genesis(Hash256::ZERO);
        let b1 = child(&g, 0);
        let b2 = child(&b1, 0);
        let mut v = ChainView::new(g, ForkMode::LongestChain, 1);
        assert!(matches!(v.append(b2.clone(), &AcceptAll), Err(ChainError::UnknownParent { .. })));
        assert_eq!(v.height(), 0);
        assert_eq!(v.missing_parents().next(), Some(&b1.hash()));
        let up = v.append(b1.clone(), &AcceptAll).unwrap();
        assert_eq!(up.attached, vec![b1.hash(), b2.hash()]);
        assert_eq!(v.confirmed_upto(), 1);
        assert_eq!(v.append(b2, &AcceptAll), Err(ChainError::DuplicateBlock(up.attached[1])));
    }

    #[test]
    fn finalized_mode_flags_conflicts() {
        let g = Block::genesis(Hash256::ZERO);
        let mut v = ChainView::new(g.clone(), ForkMode::Finalized, 0);
        v.append(child(&g, 1), &AcceptAll).unwrap();
        assert_eq!(v.confirmed_upto(), 1);
        v.append(child(&g, 2), &AcceptAll).unwrap();
        assert_eq!(v.conflicts().len(), 1);
        assert!(matches!(
            v.fork_choice(ForkMode::Finalized),
            Err(ChainError::SafetyViolation { height: 1, .. })
        ));
    }

    #[test]
    fn reorg_reports_detached_and_attached() {
        let g = Block::genesis(Hash256::ZERO);
        let mut v = ChainView::new(g.clone(), ForkMode::LongestChain, 0);
        let a = linear(&mut v, &g, 2, 1);
        let b1 = child(&g, 2);
        let b2 = child(&b1, 2);
        let b3 = child(&b2, 2);
        v.append(b1.clone(), &AcceptAll).unwrap();
        v.append(b2.clone(), &AcceptAll).unwrap();
        let up = v.append(b3.clone(), &AcceptAll).unwrap();
        // b2 may or may not have already won the tie; either way b3 ends up the tip.
        assert_eq!(v.tip(), b3.hash());
        assert!(up.attached.contains(&b3.hash()));
        if up.attached.len() == 3 {
            assert_eq!(up.detached, vec![a[1].hash(), a[0].hash()]);
        }
    }
}
