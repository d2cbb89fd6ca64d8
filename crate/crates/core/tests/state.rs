use std::collections::BTreeMap;

use chainbench::hash::{merkle_root, Hash256};
use chainbench::state::{bucket_digest, bucket_of, entry_digest, StateError, StateStore};
use primitive_types::U256;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Root computed from nothing but the store's composite entries.
fn rebuilt_root(store: &StateStore) -> Hash256 {
    let n = store.num_buckets();
    let mut acc = vec![U256::zero(); n];
    for (k, v) in store.raw_entries() {
        let b = bucket_of(&k, n);
        acc[b] = acc[b].overflowing_add(U256::from_big_endian(&entry_digest(&k, &v).0)).0;
    }
    let leaves: Vec<Hash256> = acc.iter().map(|a| bucket_digest(&a.to_big_endian())).collect();
    merkle_root(&leaves)
}

/// Plain list of every write: key -> [(value, block)] oldest first.
type History = BTreeMap<Vec<u8>, Vec<(Vec<u8>, u64)>>;

fn random_store(seed: u64, puts: usize, keys: u64, buckets: usize) -> (StateStore, History) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = StateStore::new(buckets);
    let mut history = History::new();
    let mut block = 0u64;
    for _ in 0..puts {
        block += rng.gen_range(0..3);
        let key = format!("acct{}", rng.gen_range(0..keys)).into_bytes();
        let value = rng.gen::<u64>().to_be_bytes().to_vec();
        store.put(&key, &value, block).unwrap();
        history.entry(key).or_default().push((value, block));
    }
    (store, history)
}

fn brute_force_range(history: &History, key: &[u8], start: u64, end: u64) -> Vec<(Vec<u8>, u64)> {
    let mut out: Vec<_> =
        history.get(key).into_iter().flatten().filter(|(_, b)| *b >= start && *b < end).cloned().collect();
    out.reverse();
    out
}

#[test]
fn incremental_root_equals_rebuild_after_10k_puts() {
    let (mut store, _) = random_store(42, 10_000, 700, 256);
    let root = store.state_root();
    assert_eq!(root, rebuilt_root(&store));
    // A second store fed the final state only (one version per key) must
    // differ, because history is part of the commitment.
    let mut flat = StateStore::new(256);
    for (k, v) in store.raw_entries().filter(|(k, _)| k.ends_with(b":latest")) {
        flat.put(&k, &v, 0).unwrap();
    }
    assert_ne!(flat.state_root(), root);
}

#[test]
fn root_checked_at_every_step_of_a_short_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = StateStore::new(7);
    for block in 0..300u64 {
        let k = [rng.gen_range(0..20u8)];
        store.put(&k, &block.to_le_bytes(), block).unwrap();
        assert_eq!(store.state_root(), rebuilt_root(&store), "after put {block}");
    }
}

#[test]
fn account_range_query_matches_brute_force_over_1000_probes() {
    let (store, history) = random_store(7, 8_000, 200, 128);
    let max_block = history.values().flatten().map(|(_, b)| *b).max().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let keys: Vec<&Vec<u8>> = history.keys().collect();
    for probe in 0..1000 {
        let key = keys[rng.gen_range(0..keys.len())];
        let a = rng.gen_range(0..=max_block + 2);
        let b = rng.gen_range(0..=max_block + 2);
        let (start, end) = (a.min(b), a.max(b));
        let got = store.query_account_block_range(key, start, end).unwrap();
        assert_eq!(got, brute_force_range(&history, key, start, end), "probe {probe} [{start},{end})");
    }
}

#[test]
fn range_query_errors() {
    let mut s = StateStore::new(4);
    s.put(b"a", b"1", 2).unwrap();
    assert_eq!(s.query_account_block_range(b"a", 5, 4), Err(StateError::InvalidRange { start: 5, end: 4 }));
    assert!(matches!(s.query_account_block_range(b"zz", 0, 9), Err(StateError::UnknownKey(_))));
    assert_eq!(s.query_account_block_range(b"a", 0, 1).unwrap(), vec![]);
    assert_eq!(s.query_account_block_range(b"a", 0, u64::MAX).unwrap(), vec![(b"1".to_vec(), 2)]);
}

#[test]
fn identical_overwrite_still_moves_the_root() {
    // A new version is a new entry even when the value repeats.
    let mut s = StateStore::new(16);
    s.put(b"k", b"v", 1).unwrap();
    let before = s.state_root();
    s.put(b"k", b"v", 1).unwrap();
    assert_ne!(s.state_root(), before);
    s.pop_version(b"k");
    assert_eq!(s.state_root(), before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn range_query_oracle(seed in any::<u64>(), start in 0u64..60, len in 0u64..60) {
        let (store, history) = random_store(seed, 200, 6, 8);
        for key in history.keys() {
            let got = store.query_account_block_range(key, start, start + len).unwrap();
            prop_assert_eq!(got, brute_force_range(&history, key, start, start + len));
        }
    }

    #[test]
    fn undo_restores_every_earlier_root(seed in any::<u64>(), puts in 1usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = StateStore::new(5);
        let mut roots = vec![store.state_root()];
        let mut keys = Vec::new();
        for i in 0..puts {
            let k = vec![rng.gen_range(0..4u8)];
            store.put(&k, &(i as u64).to_be_bytes(), i as u64).unwrap();
            roots.push(store.state_root());
            keys.push(k);
        }
        while let Some(k) = keys.pop() {
            roots.pop();
            store.pop_version(&k).unwrap();
            prop_assert_eq!(store.state_root(), *roots.last().unwrap());
        }
        prop_assert_eq!(store.entry_count(), 0);
    }
}
