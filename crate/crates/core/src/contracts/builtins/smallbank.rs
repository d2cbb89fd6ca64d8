use super::decode_i64;
use crate::contracts::{arg_int, Contract, ContractContext, ContractError};
use crate::ledger::Value;
use crate::state::{StateError, StateStore};

/// Money transfers between accounts; every payment updates two keys
/// atomically.
pub struct Smallbank;

pub fn balance_key(account: i64) -> Vec<u8> {
    format!("sb/{account}").into_bytes()
}

/// Seed `accounts` accounts with `initial` each, committed at `height`.
pub fn init_accounts(store: &mut StateStore, accounts: u64, initial: i64, height: u64) -> Result<(), StateError> {
    for a in 0..accounts {
        store.put(&balance_key(a as i64), &initial.to_be_bytes(), height)?;
    }
    Ok(())
}

/// Sum of all balances in `0..accounts`.
pub fn total_balance(store: &StateStore, accounts: u64) -> i64 {
    (0..accounts)
        .map(|a| decode_i64(store.get_latest(&balance_key(a as i64)).map(<[u8]>::to_vec)))
        .sum()
}

impl Contract for Smallbank {
    fn kind(&self) -> &'static str {
        "smallbank"
    }

    fn call(&self, ctx: &mut ContractContext<'_>, method: &str, args: &[Value]) -> Result<Vec<Value>, ContractError> {
        match method {
            "send_payment" => {
                let from = arg_int(args, 0, "from")?;
                let to = arg_int(args, 1, "to")?;
                let amount = arg_int(args, 2, "amount")?;
                if amount < 0 {
                    return Err(ContractError::BadArgs("negative amount".into()));
                }
                let from_bal = decode_i64(ctx.get_state(&balance_key(from))?);
                if from_bal < amount {
                    return Err(ContractError::InsufficientFunds { balance: from_bal, amount });
                }
                ctx.put_state(&balance_key(from), &(from_bal - amount).to_be_bytes())?;
                let to_bal = decode_i64(ctx.get_state(&balance_key(to))?);
                ctx.put_state(&balance_key(to), &(to_bal + amount).to_be_bytes())?;
                Ok(vec![])
            }
            "balance" => {
                let acct = arg_int(args, 0, "account")?;
                Ok(vec![Value::Int(decode_i64(ctx.get_state(&balance_key(acct))?))])
            }
            _ => Err(ContractError::UnknownMethod { contract: self.kind().into(), method: method.into() }),
        }
    }
}
