use crate::contracts::{arg_bytes, Contract, ContractContext, ContractError};
use crate::ledger::Value;

/// Key-value storage targeted by the YCSB workload.
pub struct KvStore;

pub fn state_key(key: &[u8]) -> Vec<u8> {
    let mut k = b"kv/".to_vec();
    k.extend_from_slice(key);
    k
}

impl Contract for KvStore {
    fn kind(&self) -> &'static str {
        "kvstore"
    }

    fn call(&self, ctx: &mut ContractContext<'_>, method: &str, args: &[Value]) -> Result<Vec<Value>, ContractError> {
        match method {
            "read" => {
                let key = state_key(arg_bytes(args, 0, "key")?);
                Ok(ctx.get_state(&key)?.map(Value::Bytes).into_iter().collect())
            }
            "write" => {
                let key = state_key(arg_bytes(args, 0, "key")?);
                let value = arg_bytes(args, 1, "value")?;
                ctx.put_state(&key, value)?;
                Ok(vec![])
            }
            _ => Err(ContractError::UnknownMethod { contract: self.kind().into(), method: method.into() }),
        }
    }
}
