//! Request generators for the macro and micro workloads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::contracts::builtins::smallbank;
use crate::contracts::Runtime;
use crate::ledger::{AccountId, Signer, Transaction, Value};
use crate::netsim::Tick;
use crate::state::{StateError, StateStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    Ycsb,
    Smallbank,
    Donothing,
    Ioheavy,
    Cpuheavy,
    Analytics,
}

impl WorkloadKind {
    pub fn contract(self) -> &'static str {
        match self {
            WorkloadKind::Ycsb => "kvstore",
            WorkloadKind::Smallbank => "smallbank",
            WorkloadKind::Donothing => "donothing",
            WorkloadKind::Ioheavy => "ioheavy",
            WorkloadKind::Cpuheavy => "cpuheavy",
            WorkloadKind::Analytics => "versionkv",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyDistribution {
    Uniform,
    /// Zipfian with exponent `θ`.
    Zipfian(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateKeyword {
    Saturating,
}

/// Open-loop request rate per client.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RequestRate {
    PerSecond(f64),
    Keyword(RateKeyword),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub clients: usize,
    pub threads_per_client: usize,
    /// Requests per client; 0 means until the run ends.
    pub ops: u64,
    pub read_ratio: f64,
    pub key_distribution: KeyDistribution,
    /// Unset means the engine's default rate.
    pub request_rate: Option<RequestRate>,
    /// Per-client rate used when `request_rate = "saturating"`.
    pub saturating_rate: f64,
    /// Closed-loop clients: each thread waits for its previous request.
    pub blocking: bool,
    pub record_count: u64,
    pub value_size: usize,
    pub accounts: u64,
    pub initial_balance: i64,
    pub max_amount: i64,
    /// Share of payments deliberately larger than any balance.
    pub overdraft_ratio: f64,
    pub io_batch: u64,
    pub sort_size: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            kind: WorkloadKind::Ycsb,
            clients: 8,
            threads_per_client: 1,
            ops: 0,
            read_ratio: 0.5,
            key_distribution: KeyDistribution::Zipfian(0.99),
            request_rate: None,
            saturating_rate: 1_000.0,
            blocking: false,
            record_count: 10_000,
            value_size: 100,
            accounts: 1_024,
            initial_balance: 1_000_000,
            max_amount: 100,
            overdraft_ratio: 0.0,
            io_batch: 100,
            sort_size: 1_000,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.read_ratio) {
            return Err(format!("read_ratio must lie in [0, 1], got {}", self.read_ratio));
        }
        if !(0.0..=1.0).contains(&self.overdraft_ratio) {
            return Err(format!("overdraft_ratio must lie in [0, 1], got {}", self.overdraft_ratio));
        }
        if self.blocking && self.threads_per_client == 0 {
            return Err("blocking clients need threads_per_client >= 1".into());
        }
        if let KeyDistribution::Zipfian(t) = self.key_distribution {
            if !(t > 0.0) {
                return Err(format!("zipfian exponent must be positive, got {t}"));
            }
        }
        if let Some(RequestRate::PerSecond(r)) = self.request_rate {
            if !(r >= 0.0) {
                return Err(format!("request_rate must be non-negative, got {r}"));
            }
        }
        if self.record_count == 0 || self.accounts < 2 {
            return Err("record_count must be positive and accounts at least 2".into());
        }
        Ok(())
    }

    /// Requests per second per client in open-loop mode; `engine_default`
    /// applies when no rate is configured.
    pub fn rate_per_client(&self, engine_default: f64) -> f64 {
        match self.request_rate {
            None => engine_default,
            Some(RequestRate::PerSecond(r)) => r,
            Some(RequestRate::Keyword(RateKeyword::Saturating)) => self.saturating_rate,
        }
    }
}

/// Builds the shared genesis state: every builtin deployed under its own
/// name and the payment accounts funded.
pub fn genesis_store(spec: &WorkloadSpec, runtime: &Runtime, num_buckets: usize) -> Result<StateStore, StateError> {
    let mut store = StateStore::new(num_buckets);
    for kind in ["donothing", "kvstore", "smallbank", "ioheavy", "cpuheavy", "versionkv", "doubler"] {
        runtime.deploy(&mut store, kind, kind, 0).map_err(|e| StateError::CorruptRecord(e.to_string()))?;
    }
    if spec.kind == WorkloadKind::Smallbank {
        smallbank::init_accounts(&mut store, spec.accounts, spec.initial_balance, 0)?;
    }
    Ok(store)
}

enum KeyPicker {
    Uniform(u64),
    Zipf(Zipf<f64>),
}

impl KeyPicker {
    fn new(d: KeyDistribution, n: u64) -> Self {
        match d {
            KeyDistribution::Uniform => KeyPicker::Uniform(n),
            KeyDistribution::Zipfian(t) => KeyPicker::Zipf(Zipf::new(n, t).expect("validated exponent")),
        }
    }

    /// Index in `0..n`.
    fn pick<R: Rng>(&self, rng: &mut R) -> u64 {
        match self {
            KeyPicker::Uniform(n) => rng.gen_range(0..*n),
            KeyPicker::Zipf(z) => z.sample(rng) as u64 - 1,
        }
    }
}

/// Per-client deterministic request stream.
pub struct WorkloadGen {
    spec: WorkloadSpec,
    sender: AccountId,
    rng: ChaCha8Rng,
    keys: KeyPicker,
    nonce: u64,
}

impl WorkloadGen {
    pub fn new(spec: &WorkloadSpec, client: u32, seed: u64) -> Self {
        let domain = match spec.kind {
            WorkloadKind::Smallbank | WorkloadKind::Analytics => spec.accounts,
            _ => spec.record_count,
        };
        WorkloadGen {
            spec: spec.clone(),
            sender: AccountId(client as u64),
            rng: ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(client as u64 + 1))),
            keys: KeyPicker::new(spec.key_distribution, domain),
            nonce: 0,
        }
    }

    fn two_accounts(&mut self) -> (u64, u64) {
        let a = self.keys.pick(&mut self.rng);
        let mut b = self.keys.pick(&mut self.rng);
        if a == b {
            b = (a + 1 + self.rng.gen_range(0..self.spec.accounts - 1)) % self.spec.accounts;
        }
        (a, b)
    }

    /// Contract, method and arguments of the next request.
    pub fn next_call(&mut self) -> (&'static str, &'static str, Vec<Value>) {
        let kind = self.spec.kind;
        let read = self.rng.gen_bool(self.spec.read_ratio);
        let (method, args) = match kind {
            WorkloadKind::Ycsb => {
                let key = format!("user{}", self.keys.pick(&mut self.rng)).into_bytes();
                if read {
                    ("read", vec![Value::Bytes(key)])
                } else {
                    let mut v = vec![0u8; self.spec.value_size];
                    self.rng.fill_bytes(&mut v);
                    ("write", vec![Value::Bytes(key), Value::Bytes(v)])
                }
            }
            WorkloadKind::Smallbank => {
                if read {
                    ("balance", vec![Value::Int(self.keys.pick(&mut self.rng) as i64)])
                } else {
                    let (a, b) = self.two_accounts();
                    let amount = if self.rng.gen_bool(self.spec.overdraft_ratio) {
                        self.spec.initial_balance.saturating_mul(self.spec.accounts as i64).saturating_add(1)
                    } else {
                        self.rng.gen_range(1..=self.spec.max_amount.max(1))
                    };
                    ("send_payment", vec![Value::Int(a as i64), Value::Int(b as i64), Value::Int(amount)])
                }
            }
            WorkloadKind::Donothing => ("invoke", vec![]),
            WorkloadKind::Ioheavy => {
                let seed = Value::Int(self.rng.gen_range(0..1 << 20));
                let n = Value::Int(self.spec.io_batch as i64);
                (if read { "read_batch" } else { "write_batch" }, vec![n, seed])
            }
            WorkloadKind::Cpuheavy => ("sort", vec![Value::Int(self.spec.sort_size as i64)]),
            WorkloadKind::Analytics => {
                let (a, b) = self.two_accounts();
                let value = self.rng.gen_range(1..=self.spec.max_amount.max(1));
                (
                    "send_value",
                    vec![Value::Str(format!("acct{a}")), Value::Str(format!("acct{b}")), Value::Int(value)],
                )
            }
        };
        (kind.contract(), method, args)
    }

    pub fn next_txn(&mut self, now: Tick, signer: &dyn Signer) -> Transaction {
        let (contract, method, args) = self.next_call();
        self.nonce += 1;
        Transaction::new(self.sender, contract, method, args, self.nonce, now, signer)
    }

    pub fn issued(&self) -> u64 {
        self.nonce
    }
}
