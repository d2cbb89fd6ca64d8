use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::Hash256;
use crate::ledger::{AccountId, Block, Transaction, Value};
use crate::state::StateStore;

pub const DEFAULT_STEP_BUDGET: u64 = 100_000_000;

/// Contract id reserved for deployment transactions.
pub const SYSTEM_CONTRACT: &str = "system";

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContractError {
    #[error("unknown contract {0}")]
    UnknownContract(String),
    #[error("unknown method {contract}.{method}")]
    UnknownMethod { contract: String, method: String },
    #[error("step budget exceeded: {used} > {budget}")]
    StepBudgetExceeded { used: u64, budget: u64 },
    #[error("bad arguments: {0}")]
    BadArgs(String),
    #[error("insufficient funds: balance {balance} < amount {amount}")]
    InsufficientFunds { balance: i64, amount: i64 },
    #[error("reverted: {0}")]
    Revert(String),
}

impl ContractError {
    /// Reverts are the contract's own decision; everything else aborts.
    pub fn status(&self) -> ReceiptStatus {
        match self {
            ContractError::InsufficientFunds { .. } | ContractError::Revert(_) => ReceiptStatus::Reverted,
            _ => ReceiptStatus::Aborted,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReceiptStatus {
    Committed,
    Aborted,
    Reverted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub txn_id: Hash256,
    pub status: ReceiptStatus,
    pub steps_used: u64,
    #[serde(serialize_with = "ser_keys")]
    pub state_keys_written: Vec<Vec<u8>>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub output: Vec<Value>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<ContractError>,
}

fn ser_keys<S: serde::Serializer>(keys: &[Vec<u8>], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(keys.len()))?;
    for k in keys {
        seq.serialize_element(&String::from_utf8_lossy(k))?;
    }
    seq.end()
}

/// Execution environment handed to a contract. Reads see the contract's own
/// pending writes; writes are buffered and only reach the store when the
/// invocation commits.
pub struct ContractContext<'a> {
    pub sender: AccountId,
    pub value: i64,
    pub block_height: u64,
    store: &'a StateStore,
    writes: Vec<(Vec<u8>, Vec<u8>)>,
    newest: HashMap<Vec<u8>, usize>,
    steps_used: u64,
    step_budget: u64,
}

impl<'a> ContractContext<'a> {
    pub fn new(store: &'a StateStore, sender: AccountId, block_height: u64, step_budget: u64) -> Self {
        ContractContext {
            sender,
            value: 0,
            block_height,
            store,
            writes: Vec::new(),
            newest: HashMap::new(),
            steps_used: 0,
            step_budget,
        }
    }

    pub fn steps_used(&self) -> u64 {
        self.steps_used
    }

    pub fn charge(&mut self, steps: u64) -> Result<(), ContractError> {
        self.steps_used = self.steps_used.saturating_add(steps);
        if self.steps_used > self.step_budget {
            return Err(ContractError::StepBudgetExceeded { used: self.steps_used, budget: self.step_budget });
        }
        Ok(())
    }

    pub fn get_state(&mut self, key: &[u8]) -> Result<Option<Vec<u8>>, ContractError> {
        self.charge(1)?;
        if let Some(&i) = self.newest.get(key) {
            return Ok(Some(self.writes[i].1.clone()));
        }
        Ok(self.store.get_latest(key).map(<[u8]>::to_vec))
    }

    pub fn put_state(&mut self, key: &[u8], value: &[u8]) -> Result<(), ContractError> {
        self.charge(1)?;
        self.newest.insert(key.to_vec(), self.writes.len());
        self.writes.push((key.to_vec(), value.to_vec()));
        Ok(())
    }

    /// Read-only view of committed state, for queries that walk history.
    pub fn store(&self) -> &StateStore {
        self.store
    }

    /// Every put in issue order; each one becomes its own version.
    fn into_writes(self) -> Vec<(Vec<u8>, Vec<u8>)> {
        self.writes
    }
}

/// A stored procedure. Implementations must be deterministic functions of
/// the context's state reads and their arguments.
pub trait Contract: Send + Sync {
    fn kind(&self) -> &'static str;

    fn call(&self, ctx: &mut ContractContext<'_>, method: &str, args: &[Value]) -> Result<Vec<Value>, ContractError>;

    /// Runs once per block for every contract the block touched, after all
    /// of the block's transactions.
    fn on_block_commit(&self, _ctx: &mut ContractContext<'_>) -> Result<(), ContractError> {
        Ok(())
    }
}

pub(crate) fn arg_int(args: &[Value], i: usize, what: &str) -> Result<i64, ContractError> {
    args.get(i)
        .and_then(Value::as_int)
        .ok_or_else(|| ContractError::BadArgs(format!("argument {i} ({what}) must be an integer")))
}

pub(crate) fn arg_bytes<'v>(args: &'v [Value], i: usize, what: &str) -> Result<&'v [u8], ContractError> {
    args.get(i)
        .and_then(Value::as_bytes)
        .ok_or_else(|| ContractError::BadArgs(format!("argument {i} ({what}) must be bytes or a string")))
}

fn deployment_key(contract_id: &str) -> Vec<u8> {
    format!("contract/{contract_id}").into_bytes()
}

/// Outcome of running a whole block.
#[derive(Debug, Clone)]
pub struct BlockExecution {
    pub receipts: Vec<Receipt>,
    /// Keys written, in write order; popping them in reverse undoes the block.
    pub written: Vec<Vec<u8>>,
    pub steps_used: u64,
}

#[derive(Clone)]
pub struct Runtime {
    kinds: HashMap<String, Arc<dyn Contract>>,
    step_budget: u64,
}

impl Default for Runtime {
    fn default() -> Self {
        Self::with_builtins(DEFAULT_STEP_BUDGET)
    }
}

impl Runtime {
    pub fn empty(step_budget: u64) -> Self {
        Runtime { kinds: HashMap::new(), step_budget }
    }

    pub fn with_builtins(step_budget: u64) -> Self {
        let mut rt = Self::empty(step_budget);
        for c in super::builtins::all() {
            rt.register(c);
        }
        rt
    }

    pub fn step_budget(&self) -> u64 {
        self.step_budget
    }

    /// Make a contract implementation available for deployment.
    pub fn register(&mut self, contract: Arc<dyn Contract>) {
        self.kinds.insert(contract.kind().to_string(), contract);
    }

    /// Bind `contract_id` to a registered implementation in `store`.
    pub fn deploy(&self, store: &mut StateStore, contract_id: &str, kind: &str, height: u64) -> Result<(), ContractError> {
        if !self.kinds.contains_key(kind) {
            return Err(ContractError::UnknownContract(kind.to_string()));
        }
        store
            .put(&deployment_key(contract_id), kind.as_bytes(), height)
            .map_err(|e| ContractError::Revert(e.to_string()))?;
        Ok(())
    }

    pub fn resolve(&self, store: &StateStore, contract_id: &str) -> Result<&Arc<dyn Contract>, ContractError> {
        let kind = store
            .get_latest(&deployment_key(contract_id))
            .ok_or_else(|| ContractError::UnknownContract(contract_id.to_string()))?;
        std::str::from_utf8(kind)
            .ok()
            .and_then(|k| self.kinds.get(k))
            .ok_or_else(|| ContractError::UnknownContract(contract_id.to_string()))
    }

    /// Execute one transaction against `store` at `height`, applying its
    /// writes only if it commits.
    pub fn invoke(&self, store: &mut StateStore, txn: &Transaction, height: u64) -> Receipt {
        let (result, steps, writes) = if txn.contract == SYSTEM_CONTRACT {
            self.invoke_system(txn)
        } else {
            match self.resolve(store, &txn.contract) {
                Err(e) => (Err(e), 1, Vec::new()),
                Ok(contract) => {
                    let mut ctx = ContractContext::new(store, txn.sender, height, self.step_budget);
                    let result = ctx.charge(1).and_then(|_| contract.call(&mut ctx, &txn.method, &txn.args));
                    let steps = ctx.steps_used();
                    (result, steps, ctx.into_writes())
                }
            }
        };
        match result {
            Ok(output) => {
                let mut keys = Vec::with_capacity(writes.len());
                for (k, v) in writes {
                    store.put(&k, &v, height).expect("commit heights are non-decreasing");
                    keys.push(k);
                }
                Receipt { txn_id: txn.id, status: ReceiptStatus::Committed, steps_used: steps, state_keys_written: keys, output, error: None }
            }
            Err(e) => Receipt {
                txn_id: txn.id,
                status: e.status(),
                steps_used: steps,
                state_keys_written: Vec::new(),
                output: Vec::new(),
                error: Some(e),
            },
        }
    }

    fn invoke_system(&self, txn: &Transaction) -> (Result<Vec<Value>, ContractError>, u64, Vec<(Vec<u8>, Vec<u8>)>) {
        if txn.method != "deploy" {
            return (
                Err(ContractError::UnknownMethod { contract: SYSTEM_CONTRACT.into(), method: txn.method.clone() }),
                1,
                Vec::new(),
            );
        }
        let parsed = arg_bytes(&txn.args, 0, "contract id").and_then(|id| {
            let kind = arg_bytes(&txn.args, 1, "kind")?;
            Ok((String::from_utf8_lossy(id).into_owned(), String::from_utf8_lossy(kind).into_owned()))
        });
        match parsed {
            Err(e) => (Err(e), 1, Vec::new()),
            Ok((_, kind)) if !self.kinds.contains_key(&kind) => (Err(ContractError::UnknownContract(kind)), 1, Vec::new()),
            Ok((id, kind)) => (Ok(vec![]), 1, vec![(deployment_key(&id), kind.into_bytes())]),
        }
    }

    /// Execute every transaction of `block` in order, then the per-block
    /// hooks of the contracts it touched.
    pub fn execute_block(&self, store: &mut StateStore, block: &Block) -> BlockExecution {
        let height = block.height();
        let mut receipts = Vec::with_capacity(block.txns.len());
        let mut written = Vec::new();
        let mut steps = 0;
        let mut touched: Vec<&str> = Vec::new();
        for txn in &block.txns {
            let r = self.invoke(store, txn, height);
            steps += r.steps_used;
            written.extend(r.state_keys_written.iter().cloned());
            if !touched.contains(&txn.contract.as_str()) {
                touched.push(txn.contract.as_str());
            }
            receipts.push(r);
        }
        for id in touched {
            let Ok(contract) = self.resolve(store, id) else { continue };
            let contract = contract.clone();
            let mut ctx = ContractContext::new(store, AccountId(0), height, self.step_budget);
            if contract.on_block_commit(&mut ctx).is_ok() {
                steps += ctx.steps_used();
                for (k, v) in ctx.into_writes() {
                    store.put(&k, &v, height).expect("commit heights are non-decreasing");
                    written.push(k);
                }
            }
        }
        BlockExecution { receipts, written, steps_used: steps }
    }

    /// Reverse a previously executed block.
    pub fn undo_block(store: &mut StateStore, written: &[Vec<u8>]) {
        for k in written.iter().rev() {
            store.pop_version(k);
        }
    }
}
