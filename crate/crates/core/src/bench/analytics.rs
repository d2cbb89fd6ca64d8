//! Historical-query workload: a preloaded chain of transfers and the two
//! range queries, plus brute-force answers computed by replaying the chain.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::contracts::builtins::versionkv;
use crate::contracts::{ReceiptStatus, Runtime};
use crate::hash::Hash256;
use crate::ledger::{AccountId, Block, KeyedHashSigner, Transaction, Value};
use crate::sim::derive_seed;
use crate::state::StateStore;

use super::workload::{genesis_store, KeyDistribution, WorkloadGen, WorkloadKind, WorkloadSpec};

pub struct Preload {
    pub store: StateStore,
    /// Blocks at heights `1..=n`, in order.
    pub chain: Vec<Block>,
    pub accounts: u64,
    pub runtime: Runtime,
}

pub fn account_name(i: u64) -> String {
    format!("acct{i}")
}

/// Execute `blocks` blocks of `txns_per_block` random transfers among
/// `accounts` accounts.
pub fn preload(blocks: u64, txns_per_block: usize, accounts: u64, seed: u64) -> Preload {
    let spec = WorkloadSpec {
        kind: WorkloadKind::Analytics,
        accounts,
        key_distribution: KeyDistribution::Uniform,
        max_amount: 1_000,
        ..WorkloadSpec::default()
    };
    let runtime = Runtime::default();
    let mut store = genesis_store(&spec, &runtime, 1024).expect("fresh store accepts deployments");
    let mut gen = WorkloadGen::new(&spec, 0, seed);
    let mut chain = Vec::with_capacity(blocks as usize);
    for h in 1..=blocks {
        let txns: Vec<Arc<Transaction>> =
            (0..txns_per_block).map(|_| Arc::new(gen.next_txn(h, &KeyedHashSigner))).collect();
        let mut block = Block::genesis(Hash256::ZERO);
        block.header.height = h;
        block.header.txn_root = Block::compute_txn_root(&txns);
        block.txns = txns;
        let exec = runtime.execute_block(&mut store, &block);
        debug_assert!(exec.receipts.iter().all(|r| r.status == ReceiptStatus::Committed));
        chain.push(block);
    }
    Preload { store, chain, accounts, runtime }
}

fn transfers(block: &Block) -> impl Iterator<Item = (&[u8], &[u8], i64)> {
    block.txns.iter().filter(|t| t.method == "send_value").filter_map(|t| {
        Some((t.args.first()?.as_bytes()?, t.args.get(1)?.as_bytes()?, t.args.get(2)?.as_int()?))
    })
}

/// Blocks with height in `[i, j)`.
fn range(chain: &[Block], i: u64, j: u64) -> impl Iterator<Item = &Block> {
    chain.iter().filter(move |b| b.height() >= i && b.height() < j)
}

/// Total transferred value in `[i, j)`, by replaying every transaction.
pub fn replay_q1(chain: &[Block], i: u64, j: u64) -> i64 {
    range(chain, i, j).flat_map(transfers).map(|(_, _, v)| v).sum()
}

/// Largest transfer touching `account` in `[i, j)`, by replaying every
/// transaction.
pub fn replay_q2(chain: &[Block], account: &str, i: u64, j: u64) -> Option<i64> {
    let a = account.as_bytes();
    range(chain, i, j).flat_map(transfers).filter(|(f, t, _)| *f == a || *t == a).map(|(_, _, v)| v).max()
}

impl Preload {
    pub fn q1(&self, i: u64, j: u64) -> i64 {
        versionkv::q1(&self.store, i, j)
    }

    pub fn q2(&self, account: &str, i: u64, j: u64) -> Option<i64> {
        versionkv::q2(&self.store, account, i, j)
    }

    /// Run a query through the contract interface; queries never write.
    pub fn query(&mut self, method: &str, args: Vec<Value>) -> Vec<Value> {
        let h = self.chain.len() as u64;
        let t = Transaction::new(AccountId(u64::MAX), "versionkv", method, args, 0, h, &KeyedHashSigner);
        let r = self.runtime.invoke(&mut self.store, &t, h);
        assert!(r.state_keys_written.is_empty(), "queries are read-only");
        r.output
    }
}

/// Outcome of a battery of random range queries checked against replay.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AnalyticsReport {
    pub name: String,
    pub seed: u64,
    pub blocks: u64,
    pub txns: u64,
    pub accounts: u64,
    pub queries: u64,
    pub q1_mismatches: u64,
    pub q2_mismatches: u64,
    /// Digest over every answer, for run-to-run comparison.
    pub answers_digest: String,
}

impl AnalyticsReport {
    pub fn all_match(&self) -> bool {
        self.q1_mismatches == 0 && self.q2_mismatches == 0
    }
}

/// Ask `queries` random Q1 and Q2 ranges through the contract and compare
/// each answer with a full replay of the chain.
pub fn check_queries(p: &mut Preload, name: &str, queries: u64, seed: u64) -> AnalyticsReport {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "queries", 0));
    let top = p.chain.len() as u64 + 1;
    let mut answers = Vec::new();
    let (mut q1_bad, mut q2_bad) = (0, 0);
    for _ in 0..queries {
        let a = rng.gen_range(0..=top);
        let b = rng.gen_range(0..=top);
        let (i, j) = (a.min(b), a.max(b));
        let acct = account_name(rng.gen_range(0..p.accounts));
        let q1 = p.query("q1", vec![Value::Int(i as i64), Value::Int(j as i64)]);
        if q1 != vec![Value::Int(replay_q1(&p.chain, i, j))] {
            q1_bad += 1;
        }
        let q2 = p.query("q2", vec![Value::Bytes(acct.clone().into_bytes()), Value::Int(i as i64), Value::Int(j as i64)]);
        let want: Vec<Value> = replay_q2(&p.chain, &acct, i, j).map(Value::Int).into_iter().collect();
        if q2 != want {
            q2_bad += 1;
        }
        answers.push(format!("{i} {j} {q1:?} {acct} {q2:?}"));
    }
    AnalyticsReport {
        name: name.to_string(),
        seed,
        blocks: p.chain.len() as u64,
        txns: p.chain.iter().map(|b| b.txns.len() as u64).sum(),
        accounts: p.accounts,
        queries,
        q1_mismatches: q1_bad,
        q2_mismatches: q2_bad,
        answers_digest: Hash256::digest(answers.join("\n").as_bytes()).to_hex(),
    }
}
