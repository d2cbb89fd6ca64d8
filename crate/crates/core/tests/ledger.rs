use std::sync::Arc;

use chainbench::bench::workload::{genesis_store, WorkloadSpec};
use chainbench::contracts::Runtime;
use chainbench::hash::Hash256;
use chainbench::ledger::{hash_header, AcceptAll, Block, ChainError, ChainView, ForkMode, NodeId};
use proptest::prelude::*;

fn child(parent: &Block, proposer: u32, nonce: u64) -> Arc<Block> {
    let mut b = Block::genesis(Hash256::ZERO);
    b.header.height = parent.height() + 1;
    b.header.parent_hash = parent.hash();
    b.header.proposer = NodeId(proposer);
    b.header.nonce = nonce;
    b.header.timestamp = parent.header.timestamp + 1;
    Arc::new(b)
}

fn genesis() -> Block {
    Block::genesis(Hash256::digest(b"ledger-tests"))
}

/// Genesis of the default experiment: builtins deployed into 256 buckets.
#[test]
fn reference_genesis_digest_is_pinned() {
    let store = genesis_store(&WorkloadSpec::default(), &Runtime::default(), 256).unwrap();
    let g = Block::genesis(store.clone().state_root());
    assert_eq!(g.hash(), hash_header(&g.header));
    assert_eq!(g.hash().to_hex(), "c02a1c16781d733d923b0c10cbf3da81a5138fdac150aec28118b41c6ed7acbf");
}

#[test]
fn longest_of_two_heads_wins() {
    let g = genesis();
    let mut view = ChainView::new(g.clone(), ForkMode::LongestChain, 0);
    let mut a = Arc::new(g.clone());
    for i in 0..5 {
        a = child(&a, 1, i);
        view.append(a.clone(), &AcceptAll).unwrap();
    }
    let mut b = Arc::new(g.clone());
    for i in 0..7 {
        b = child(&b, 2, 100 + i);
        view.append(b.clone(), &AcceptAll).unwrap();
    }
    assert_eq!(view.tip(), b.hash());
    assert_eq!(view.height(), 7);
    let d = view.fork_delta();
    assert_eq!((d.total_blocks, d.main_blocks, d.delta), (12, 7, 5));
}

#[test]
fn equal_heads_pick_the_smaller_digest() {
    let g = genesis();
    let mut view = ChainView::new(g.clone(), ForkMode::LongestChain, 0);
    let mut heads = Vec::new();
    for branch in 0..2u32 {
        let mut b = Arc::new(g.clone());
        for i in 0..4 {
            b = child(&b, branch, i);
            view.append(b.clone(), &AcceptAll).unwrap();
        }
        heads.push(hash_header(&b.header));
    }
    assert_eq!(view.tip(), *heads.iter().min().unwrap());
}

#[test]
fn duplicate_and_second_genesis_are_rejected() {
    let g = genesis();
    let mut view = ChainView::new(g.clone(), ForkMode::LongestChain, 0);
    let b = child(&g, 0, 0);
    view.append(b.clone(), &AcceptAll).unwrap();
    assert!(matches!(view.append(b, &AcceptAll), Err(ChainError::DuplicateBlock(_))));
    assert!(view.append(Arc::new(Block::genesis(Hash256::ZERO)), &AcceptAll).is_err());
    let mut bad = (*child(&g, 0, 9)).clone();
    bad.header.height = 5;
    assert!(matches!(view.append(Arc::new(bad), &AcceptAll), Err(ChainError::InvalidBlock(_))));
}

/// A random block tree: entry `i` is the parent index (into the list,
/// 0 = genesis) of block `i + 1`.
fn tree() -> impl Strategy<Value = Vec<usize>> {
    (1usize..40).prop_flat_map(|n| (0..n).map(|i| 0..=i).collect::<Vec<_>>())
}

fn build(parents: &[usize]) -> (Block, Vec<Arc<Block>>) {
    let g = genesis();
    let mut all = vec![Arc::new(g.clone())];
    for (i, &p) in parents.iter().enumerate() {
        let b = child(&all[p], (i % 5) as u32, i as u64);
        all.push(b);
    }
    all.remove(0);
    (g, all)
}

/// Main branch found by walking back from the best block over all blocks.
fn brute_force_main(g: &Block, blocks: &[Arc<Block>]) -> Vec<Hash256> {
    let best = blocks.iter().max_by_key(|b| (b.height(), std::cmp::Reverse(b.hash())));
    let Some(best) = best else { return vec![g.hash()] };
    let mut path = vec![best.hash()];
    let mut cur = best.clone();
    while cur.height() > 1 {
        cur = blocks.iter().find(|b| b.hash() == cur.header.parent_hash).unwrap().clone();
        path.push(cur.hash());
    }
    path.push(g.hash());
    path.reverse();
    path
}

proptest! {
    #[test]
    fn main_branch_is_independent_of_arrival_order(parents in tree(), seed in any::<u64>()) {
        let (g, blocks) = build(&parents);
        let mut in_order = ChainView::new(g.clone(), ForkMode::LongestChain, 0);
        for b in &blocks {
            in_order.append(b.clone(), &AcceptAll).unwrap();
        }
        // Deterministic shuffle; parents may now arrive after children.
        let mut shuffled = blocks.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut any_order = ChainView::new(g.clone(), ForkMode::LongestChain, 0);
        for b in &shuffled {
            match any_order.append(b.clone(), &AcceptAll) {
                Ok(_) | Err(ChainError::UnknownParent { .. }) => {}
                Err(e) => panic!("{e}"),
            }
        }
        prop_assert_eq!(any_order.orphan_count(), 0);
        let want = brute_force_main(&g, &blocks);
        prop_assert_eq!(in_order.main_branch(), want.as_slice());
        prop_assert_eq!(any_order.main_branch(), want.as_slice());
        prop_assert_eq!(in_order.fork_choice(ForkMode::LongestChain).unwrap(), want.clone());
        let off_main = blocks.iter().filter(|b| !want.contains(&b.hash())).count() as u64;
        prop_assert_eq!(any_order.fork_delta().delta, off_main);
        prop_assert_eq!(any_order.fork_delta().total_blocks, blocks.len() as u64);
    }

    #[test]
    fn block_bytes_round_trip(nonce in any::<u64>(), ts in any::<u64>(), h in 1u64..1000) {
        let mut b = (*child(&genesis(), 3, nonce)).clone();
        b.header.timestamp = ts;
        b.header.height = h;
        let back = Block::from_bytes(&b.to_bytes()).unwrap();
        prop_assert_eq!(back.hash(), b.hash());
        prop_assert_eq!(back, b);
    }
}
