//! Pyramid-scheme contract: each entrant is paid twice their stake once the
//! accumulated balance exceeds that amount.

use super::decode_i64;
use crate::codec::{Decoder, Encoder};
use crate::contracts::{arg_int, Contract, ContractContext, ContractError};
use crate::ledger::{AccountId, Value};

pub const PARTICIPANTS_KEY: &[u8] = b"doubler/participants";
pub const BALANCE_KEY: &[u8] = b"doubler/balance";
pub const PAYOUT_IDX_KEY: &[u8] = b"doubler/payout_idx";

/// Payout multiple applied to an entrant's stake.
pub const PAYOUT_FACTOR: i64 = 2;

pub struct Doubler;

pub fn paid_key(account: AccountId) -> Vec<u8> {
    format!("doubler/paid/{}", account.0).into_bytes()
}

pub fn encode_participants(p: &[(AccountId, i64)]) -> Vec<u8> {
    let mut e = Encoder::new();
    e.u32(p.len() as u32);
    for (a, amt) in p {
        e.u64(a.0).i64(*amt);
    }
    e.finish()
}

pub fn decode_participants(b: &[u8]) -> Option<Vec<(AccountId, i64)>> {
    let mut d = Decoder::new(b);
    let n = d.u32().ok()?;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        out.push((AccountId(d.u64().ok()?), d.i64().ok()?));
    }
    Some(out)
}

impl Contract for Doubler {
    fn kind(&self) -> &'static str {
        "doubler"
    }

    fn call(&self, ctx: &mut ContractContext<'_>, method: &str, args: &[Value]) -> Result<Vec<Value>, ContractError> {
        if method != "enter" {
            return Err(ContractError::UnknownMethod { contract: self.kind().into(), method: method.into() });
        }
        let value = arg_int(args, 0, "value")?;
        if value <= 0 {
            return Err(ContractError::Revert("entry value must be positive".into()));
        }
        ctx.value = value;
        let mut participants = ctx
            .get_state(PARTICIPANTS_KEY)?
            .and_then(|b| decode_participants(&b))
            .unwrap_or_default();
        participants.push((ctx.sender, value));
        let mut balance = decode_i64(ctx.get_state(BALANCE_KEY)?) + value;
        let mut idx = decode_i64(ctx.get_state(PAYOUT_IDX_KEY)?) as usize;
        let mut payouts = Vec::new();
        while idx < participants.len() && balance > PAYOUT_FACTOR * participants[idx].1 {
            let (who, amount) = participants[idx];
            let payout = PAYOUT_FACTOR * amount;
            let key = paid_key(who);
            let paid = decode_i64(ctx.get_state(&key)?);
            ctx.put_state(&key, &(paid + payout).to_be_bytes())?;
            balance -= payout;
            idx += 1;
            payouts.push(Value::Int(payout));
        }
        ctx.put_state(PARTICIPANTS_KEY, &encode_participants(&participants))?;
        ctx.put_state(BALANCE_KEY, &balance.to_be_bytes())?;
        ctx.put_state(PAYOUT_IDX_KEY, &(idx as i64).to_be_bytes())?;
        Ok(payouts)
    }
}
