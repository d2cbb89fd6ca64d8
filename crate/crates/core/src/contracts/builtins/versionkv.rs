//! Historical account lookups for the analytics workload.
//!
//! Transfers are appended to `pending_list` as they execute. At block
//! commit the list is recorded under `block:<height>`, every touched
//! account receives a new version holding `(balance, value)` for each
//! transfer, and `pending_list` is cleared.

use crate::codec::{Decoder, Encoder};
use crate::contracts::{arg_bytes, arg_int, Contract, ContractContext, ContractError};
use crate::ledger::Value;
use crate::state::{block_list_key, decode_txn_list, encode_txn_list, StateStore, TxnSummary};

pub const PENDING_KEY: &[u8] = b"pending_list";

pub struct VersionKv;

/// Account record stored in every version: balance after the transfer and
/// the transfer's value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AccountRecord {
    pub balance: i64,
    pub value: i64,
}

impl AccountRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::with_capacity(16);
        e.i64(self.balance).i64(self.value);
        e.finish()
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        let mut d = Decoder::new(b);
        let r = AccountRecord { balance: d.i64().ok()?, value: d.i64().ok()? };
        d.finish().ok()?;
        Some(r)
    }
}

/// Total transferred value over blocks `[start, end)`.
pub fn q1(store: &StateStore, start: u64, end: u64) -> i64 {
    (start..end)
        .filter_map(|h| store.get_latest(&block_list_key(h)).and_then(decode_txn_list))
        .flat_map(|l| l.into_iter().map(|t| t.value))
        .sum()
}

/// Largest transfer involving `account` over blocks `[start, end)`, found by
/// walking the account's versions.
pub fn q2(store: &StateStore, account: &str, start: u64, end: u64) -> Option<i64> {
    store
        .query_account_block_range(account.as_bytes(), start, end)
        .ok()?
        .iter()
        .filter_map(|(v, _)| AccountRecord::decode(v))
        .map(|r| r.value)
        .max()
}

impl Contract for VersionKv {
    fn kind(&self) -> &'static str {
        "versionkv"
    }

    fn call(&self, ctx: &mut ContractContext<'_>, method: &str, args: &[Value]) -> Result<Vec<Value>, ContractError> {
        match method {
            "send_value" => {
                let from = String::from_utf8_lossy(arg_bytes(args, 0, "from")?).into_owned();
                let to = String::from_utf8_lossy(arg_bytes(args, 1, "to")?).into_owned();
                let value = arg_int(args, 2, "value")?;
                let mut pending = ctx
                    .get_state(PENDING_KEY)?
                    .and_then(|b| decode_txn_list(&b))
                    .unwrap_or_default();
                pending.push(TxnSummary { from, to, value });
                ctx.put_state(PENDING_KEY, &encode_txn_list(&pending))?;
                Ok(vec![])
            }
            "q1" => {
                let (i, j) = (arg_int(args, 0, "start")?, arg_int(args, 1, "end")?);
                let (i, j) = (i.max(0) as u64, j.max(0) as u64);
                ctx.charge(j.saturating_sub(i))?;
                Ok(vec![Value::Int(q1(ctx.store(), i, j))])
            }
            "q2" => {
                let acct = String::from_utf8_lossy(arg_bytes(args, 0, "account")?).into_owned();
                let (i, j) = (arg_int(args, 1, "start")?, arg_int(args, 2, "end")?);
                let (i, j) = (i.max(0) as u64, j.max(0) as u64);
                if i > j {
                    return Err(ContractError::BadArgs("start after end".into()));
                }
                let walked = ctx.store().latest_version(acct.as_bytes()).unwrap_or(0);
                ctx.charge(walked + 1)?;
                Ok(q2(ctx.store(), &acct, i, j).map(Value::Int).into_iter().collect())
            }
            _ => Err(ContractError::UnknownMethod { contract: self.kind().into(), method: method.into() }),
        }
    }

    fn on_block_commit(&self, ctx: &mut ContractContext<'_>) -> Result<(), ContractError> {
        let Some(raw) = ctx.get_state(PENDING_KEY)? else { return Ok(()) };
        let pending = decode_txn_list(&raw).unwrap_or_default();
        if pending.is_empty() {
            return Ok(());
        }
        ctx.put_state(&block_list_key(ctx.block_height), &raw)?;
        for t in &pending {
            for (acct, delta) in [(&t.from, -t.value), (&t.to, t.value)] {
                let prev = ctx.get_state(acct.as_bytes())?.and_then(|b| AccountRecord::decode(&b));
                let balance = prev.map_or(0, |r| r.balance) + delta;
                ctx.put_state(acct.as_bytes(), &AccountRecord { balance, value: t.value }.encode())?;
            }
        }
        ctx.put_state(PENDING_KEY, &encode_txn_list(&[]))?;
        Ok(())
    }
}
