use std::collections::HashMap;
use std::sync::Arc;

use chainbench::bench::workload::{genesis_store, KeyDistribution, WorkloadGen, WorkloadKind, WorkloadSpec};
use chainbench::contracts::builtins::{cpuheavy, doubler, kvstore, smallbank};
use chainbench::contracts::{ContractError, ReceiptStatus, Runtime};
use chainbench::hash::Hash256;
use chainbench::ledger::{AccountId, Block, KeyedHashSigner, Transaction, Value};
use chainbench::state::StateStore;

fn txn(sender: u64, contract: &str, method: &str, args: Vec<Value>) -> Transaction {
    Transaction::new(AccountId(sender), contract, method, args, 0, 0, &KeyedHashSigner)
}

fn fresh(kind: WorkloadKind) -> (Runtime, StateStore) {
    let rt = Runtime::default();
    let spec = WorkloadSpec { kind, ..WorkloadSpec::default() };
    let store = genesis_store(&spec, &rt, 64).unwrap();
    (rt, store)
}

fn block_of(height: u64, txns: Vec<Transaction>) -> Block {
    let txns: Vec<Arc<Transaction>> = txns.into_iter().map(Arc::new).collect();
    let mut b = Block::genesis(Hash256::ZERO);
    b.header.height = height;
    b.header.txn_root = Block::compute_txn_root(&txns);
    b.txns = txns;
    b
}

fn balance(rt: &Runtime, store: &mut StateStore, acct: i64) -> i64 {
    let r = rt.invoke(store, &txn(0, "smallbank", "balance", vec![Value::Int(acct)]), 1);
    match r.output.as_slice() {
        [Value::Int(b)] => *b,
        other => panic!("unexpected output {other:?}"),
    }
}

#[test]
fn smallbank_transfer_and_overdraft() {
    let (rt, mut store) = fresh(WorkloadKind::Donothing);
    smallbank::init_accounts(&mut store, 2, 100, 0).unwrap();
    let pay = |a, b, amt| txn(0, "smallbank", "send_payment", vec![Value::Int(a), Value::Int(b), Value::Int(amt)]);

    let r = rt.invoke(&mut store, &pay(0, 1, 10), 1);
    assert_eq!(r.status, ReceiptStatus::Committed);
    assert_eq!(r.state_keys_written, vec![smallbank::balance_key(0), smallbank::balance_key(1)]);
    assert_eq!((balance(&rt, &mut store, 0), balance(&rt, &mut store, 1)), (90, 110));

    let root = store.state_root();
    let r = rt.invoke(&mut store, &pay(0, 1, 91), 2);
    assert_eq!(r.status, ReceiptStatus::Reverted);
    assert_eq!(r.error, Some(ContractError::InsufficientFunds { balance: 90, amount: 91 }));
    assert!(r.state_keys_written.is_empty());
    assert_eq!(store.state_root(), root);
    assert_eq!((balance(&rt, &mut store, 0), balance(&rt, &mut store, 1)), (90, 110));
}

/// Many payments, a tenth of them deliberately overdrawn, executed block by
/// block on two replicas.
#[test]
fn smallbank_conserves_money_through_10k_txns_with_reverts() {
    let spec = WorkloadSpec {
        kind: WorkloadKind::Smallbank,
        accounts: 100,
        initial_balance: 1_000,
        max_amount: 100,
        read_ratio: 0.1,
        overdraft_ratio: 0.1,
        key_distribution: KeyDistribution::Uniform,
        ..WorkloadSpec::default()
    };
    let rt = Runtime::default();
    let mut per_txn = genesis_store(&spec, &rt, 128).unwrap();
    let mut per_block = per_txn.clone();
    let total = smallbank::total_balance(&per_txn, spec.accounts);
    assert_eq!(total, 1_000 * 100);

    let mut gen = WorkloadGen::new(&spec, 3, 77);
    let (mut committed, mut reverted) = (0, 0);
    for height in 1..=100u64 {
        let txns: Vec<Transaction> = (0..100).map(|_| gen.next_txn(height, &KeyedHashSigner)).collect();
        for t in &txns {
            let before = per_txn.state_root();
            let r = rt.invoke(&mut per_txn, t, height);
            match r.status {
                ReceiptStatus::Committed => committed += 1,
                ReceiptStatus::Reverted => {
                    reverted += 1;
                    assert_eq!(per_txn.state_root(), before, "reverted txn moved the root");
                }
                ReceiptStatus::Aborted => panic!("aborted: {:?}", r.error),
            }
        }
        let exec = rt.execute_block(&mut per_block, &block_of(height, txns));
        assert_eq!(exec.receipts.len(), 100);
        assert_eq!(smallbank::total_balance(&per_block, spec.accounts), total, "block {height}");
        assert_eq!(per_block.state_root(), per_txn.state_root(), "replicas diverged at {height}");
    }
    assert_eq!(committed + reverted, 10_000);
    assert!(reverted >= 900, "only {reverted} reverts");
    assert!(committed >= 8_000, "only {committed} commits");
}

#[test]
fn undo_block_restores_root() {
    let (rt, mut store) = fresh(WorkloadKind::Analytics);
    let root = store.state_root();
    let b = block_of(
        1,
        vec![
            txn(1, "versionkv", "send_value", vec![Value::Str("a".into()), Value::Str("b".into()), Value::Int(7)]),
            txn(1, "kvstore", "write", vec![Value::Str("k".into()), Value::Str("v".into())]),
        ],
    );
    let exec = rt.execute_block(&mut store, &b);
    assert_ne!(store.state_root(), root);
    Runtime::undo_block(&mut store, &exec.written);
    assert_eq!(store.state_root(), root);
}

#[test]
fn doubler_pays_the_first_entrant_once_covered() {
    let (rt, mut store) = fresh(WorkloadKind::Donothing);
    let enter = |who, v| txn(who, "doubler", "enter", vec![Value::Int(v)]);

    let r = rt.invoke(&mut store, &enter(1, 10), 1);
    assert_eq!(r.status, ReceiptStatus::Committed);
    assert!(r.output.is_empty());
    assert_eq!(store.get_latest(&doubler::paid_key(AccountId(1))), None);

    let r = rt.invoke(&mut store, &enter(2, 25), 2);
    assert_eq!(r.output, vec![Value::Int(20)]);
    assert_eq!(store.get_latest(&doubler::paid_key(AccountId(1))), Some(&20i64.to_be_bytes()[..]));
    assert_eq!(store.get_latest(doubler::BALANCE_KEY), Some(&15i64.to_be_bytes()[..]));
    assert_eq!(store.get_latest(doubler::PAYOUT_IDX_KEY), Some(&1i64.to_be_bytes()[..]));

    assert_eq!(rt.invoke(&mut store, &enter(3, 0), 3).status, ReceiptStatus::Reverted);
}

#[test]
fn doubler_never_pays_beyond_its_balance() {
    let (rt, mut store) = fresh(WorkloadKind::Donothing);
    let mut seed = 12345u64;
    let (mut paid_in, mut paid_out) = (0i64, 0i64);
    for i in 0..500u64 {
        seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let v = 1 + (seed >> 40) as i64 % 50;
        let r = rt.invoke(&mut store, &txn(i % 37, "doubler", "enter", vec![Value::Int(v)]), i + 1);
        paid_in += v;
        paid_out += r.output.iter().filter_map(Value::as_int).sum::<i64>();
        assert!(paid_out <= paid_in, "entry {i}: out {paid_out} > in {paid_in}");
        let bal = i64::from_be_bytes(store.get_latest(doubler::BALANCE_KEY).unwrap().try_into().unwrap());
        assert_eq!(bal, paid_in - paid_out);
        assert!(bal >= 0);
    }
    assert!(paid_out > 0);
}

fn sort_checksum(rt: &Runtime, store: &mut StateStore, n: i64) -> (u64, u64) {
    let r = rt.invoke(store, &txn(0, "cpuheavy", "sort", vec![Value::Int(n)]), 1);
    assert_eq!(r.status, ReceiptStatus::Committed, "{:?}", r.error);
    assert!(r.state_keys_written.is_empty());
    let [Value::Int(c)] = r.output.as_slice() else { panic!("{:?}", r.output) };
    (*c as u64, r.steps_used)
}

/// sum_{i=1..n} i * i, wrapping.
fn identity_checksum(n: u64) -> u64 {
    (1..=n).fold(0u64, |acc, i| acc.wrapping_add(i.wrapping_mul(i)))
}

#[test]
fn cpuheavy_sorts_to_the_identity_sequence() {
    let (rt, mut store) = fresh(WorkloadKind::Cpuheavy);
    assert_eq!(sort_checksum(&rt, &mut store, 1).0, 1);
    assert_eq!(sort_checksum(&rt, &mut store, 10).0, 385);
    assert_eq!(sort_checksum(&rt, &mut store, 10).0, cpuheavy::checksum(&(1..=10).collect::<Vec<_>>()));
    assert_eq!(sort_checksum(&rt, &mut store, 100_000).0, identity_checksum(100_000));
    // n(n+1)(2n+1)/6 in exact arithmetic.
    assert_eq!(identity_checksum(100_000), 333_338_333_350_000);
}

#[test]
fn cpuheavy_steps_grow_like_n_log_n() {
    let (rt, mut store) = fresh(WorkloadKind::Cpuheavy);
    let mut prev = 0;
    for k in 10..=15 {
        let (_, steps) = sort_checksum(&rt, &mut store, 1 << k);
        assert!(steps > prev);
        if prev > 0 {
            assert!(steps as f64 / prev as f64 <= 2.6, "2^{k}: {prev} -> {steps}");
        }
        prev = steps;
    }
}

#[test]
fn step_budget_aborts_without_writes() {
    let rt = Runtime::with_builtins(5_000);
    let spec = WorkloadSpec::default();
    let mut store = genesis_store(&spec, &rt, 16).unwrap();
    let root = store.state_root();
    let r = rt.invoke(&mut store, &txn(0, "cpuheavy", "sort", vec![Value::Int(10_000)]), 1);
    assert_eq!(r.status, ReceiptStatus::Aborted);
    assert!(matches!(r.error, Some(ContractError::StepBudgetExceeded { .. })));
    let r = rt.invoke(&mut store, &txn(0, "ioheavy", "write_batch", vec![Value::Int(10_000), Value::Int(1)]), 1);
    assert_eq!(r.status, ReceiptStatus::Aborted);
    assert_eq!(store.state_root(), root);
}

#[test]
fn unknown_contract_and_method_abort() {
    let (rt, mut store) = fresh(WorkloadKind::Ycsb);
    let root = store.state_root();
    let r = rt.invoke(&mut store, &txn(0, "nope", "x", vec![]), 1);
    assert_eq!(r.error, Some(ContractError::UnknownContract("nope".into())));
    let r = rt.invoke(&mut store, &txn(0, "kvstore", "erase", vec![]), 1);
    assert!(matches!(r.error, Some(ContractError::UnknownMethod { .. })));
    assert_eq!(r.status, ReceiptStatus::Aborted);
    assert_eq!(store.state_root(), root);
}

#[test]
fn deployment_through_a_system_txn() {
    let (rt, mut store) = fresh(WorkloadKind::Ycsb);
    let deploy = txn(0, "system", "deploy", vec![Value::Str("bank2".into()), Value::Str("smallbank".into())]);
    assert_eq!(rt.invoke(&mut store, &deploy, 1).status, ReceiptStatus::Committed);
    let r = rt.invoke(&mut store, &txn(0, "bank2", "balance", vec![Value::Int(3)]), 2);
    assert_eq!(r.output, vec![Value::Int(0)]);
    let bad = txn(0, "system", "deploy", vec![Value::Str("x".into()), Value::Str("nosuchkind".into())]);
    assert_eq!(rt.invoke(&mut store, &bad, 3).status, ReceiptStatus::Aborted);
}

#[test]
fn donothing_commits_with_constant_steps() {
    let (rt, mut store) = fresh(WorkloadKind::Donothing);
    let root = store.state_root();
    let steps: Vec<u64> = [vec![], vec![Value::Int(5)], vec![Value::Str("x".repeat(1000))]]
        .into_iter()
        .map(|args| {
            let r = rt.invoke(&mut store, &txn(9, "donothing", "invoke", args), 1);
            assert_eq!(r.status, ReceiptStatus::Committed);
            assert!(r.state_keys_written.is_empty());
            r.steps_used
        })
        .collect();
    assert!(steps.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(store.state_root(), root);
}

#[test]
fn kvstore_replay_matches_a_plain_map() {
    let spec = WorkloadSpec { kind: WorkloadKind::Ycsb, record_count: 300, value_size: 16, ..WorkloadSpec::default() };
    let rt = Runtime::default();
    let mut store = genesis_store(&spec, &rt, 32).unwrap();
    let mut map: HashMap<Vec<u8>, Vec<u8>> = HashMap::new();
    let mut gen = WorkloadGen::new(&spec, 0, 5);
    assert_eq!(
        rt.invoke(&mut store, &txn(0, "kvstore", "read", vec![Value::Str("absent".into())]), 1).output,
        vec![]
    );
    for h in 1..=3000u64 {
        let t = gen.next_txn(h, &KeyedHashSigner);
        let r = rt.invoke(&mut store, &t, h);
        assert_eq!(r.status, ReceiptStatus::Committed);
        let key = t.args[0].as_bytes().unwrap().to_vec();
        match t.method.as_str() {
            "write" => {
                map.insert(key, t.args[1].as_bytes().unwrap().to_vec());
            }
            "read" => assert_eq!(r.output, map.get(&key).cloned().map(Value::Bytes).into_iter().collect::<Vec<_>>()),
            m => panic!("{m}"),
        }
    }
    for (k, v) in &map {
        assert_eq!(store.get_latest(&kvstore::state_key(k)), Some(v.as_slice()));
    }
}

#[test]
fn ioheavy_reads_back_what_it_wrote() {
    let (rt, mut store) = fresh(WorkloadKind::Ioheavy);
    let io = |m: &str, n: i64, s: i64| txn(0, "ioheavy", m, vec![Value::Int(n), Value::Int(s)]);
    assert_eq!(rt.invoke(&mut store, &io("read_batch", 50, 4), 1).output, vec![Value::Int(0)]);
    let w = rt.invoke(&mut store, &io("write_batch", 50, 4), 1);
    assert_eq!(w.output, vec![Value::Int(50)]);
    assert_eq!(w.state_keys_written.len(), 50);
    assert!(w.state_keys_written.iter().all(|k| k.len() == 20));
    assert_eq!(rt.invoke(&mut store, &io("read_batch", 50, 4), 2).output, vec![Value::Int(50)]);
    assert_eq!(rt.invoke(&mut store, &io("read_batch", 80, 4), 2).output, vec![Value::Int(50)]);
    assert_eq!(rt.invoke(&mut store, &io("read_batch", 50, 5), 2).output, vec![Value::Int(0)]);
}

#[test]
fn versionkv_queries_on_a_tiny_chain() {
    let (rt, mut store) = fresh(WorkloadKind::Analytics);
    let send = txn(1, "versionkv", "send_value", vec![Value::Str("alice".into()), Value::Str("bob".into()), Value::Int(7)]);
    rt.execute_block(&mut store, &block_of(1, vec![send]));
    rt.execute_block(&mut store, &block_of(2, vec![]));
    let q = |store: &mut StateStore, m: &str, args: Vec<Value>| rt.invoke(store, &txn(0, "versionkv", m, args), 3).output;

    assert_eq!(q(&mut store, "q1", vec![Value::Int(2), Value::Int(2)]), vec![Value::Int(0)]);
    assert_eq!(q(&mut store, "q1", vec![Value::Int(2), Value::Int(5)]), vec![Value::Int(0)]);
    assert_eq!(q(&mut store, "q1", vec![Value::Int(0), Value::Int(3)]), vec![Value::Int(7)]);
    for who in ["alice", "bob"] {
        assert_eq!(
            q(&mut store, "q2", vec![Value::Str(who.into()), Value::Int(1), Value::Int(2)]),
            vec![Value::Int(7)]
        );
        assert_eq!(q(&mut store, "q2", vec![Value::Str(who.into()), Value::Int(2), Value::Int(9)]), vec![]);
    }
    assert_eq!(q(&mut store, "q2", vec![Value::Str("carol".into()), Value::Int(0), Value::Int(9)]), vec![]);
}
