use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contracts::{arg_int, Contract, ContractContext, ContractError};
use crate::ledger::Value;

pub const KEY_LEN: usize = 20;
pub const VALUE_LEN: usize = 100;

/// Bulk random reads and writes that stress the storage layer.
pub struct IoHeavy;

/// The `n` seeded key/value pairs a batch touches.
pub fn batch(n: usize, seed: u64) -> impl Iterator<Item = ([u8; KEY_LEN], [u8; VALUE_LEN])> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(move |_| {
        let mut k = [0u8; KEY_LEN];
        let mut v = [0u8; VALUE_LEN];
        rng.fill_bytes(&mut k);
        rng.fill_bytes(&mut v);
        (k, v)
    })
}

fn count_arg(args: &[Value]) -> Result<(usize, u64), ContractError> {
    let n = arg_int(args, 0, "n")?;
    let seed = arg_int(args, 1, "seed")?;
    if n < 0 {
        return Err(ContractError::BadArgs("negative batch size".into()));
    }
    Ok((n as usize, seed as u64))
}

impl Contract for IoHeavy {
    fn kind(&self) -> &'static str {
        "ioheavy"
    }

    fn call(&self, ctx: &mut ContractContext<'_>, method: &str, args: &[Value]) -> Result<Vec<Value>, ContractError> {
        match method {
            "write_batch" => {
                let (n, seed) = count_arg(args)?;
                for (k, v) in batch(n, seed) {
                    ctx.put_state(&k, &v)?;
                }
                Ok(vec![Value::Int(n as i64)])
            }
            "read_batch" => {
                let (n, seed) = count_arg(args)?;
                let mut found = 0i64;
                for (k, _) in batch(n, seed) {
                    if ctx.get_state(&k)?.is_some() {
                        found += 1;
                    }
                }
                Ok(vec![Value::Int(found)])
            }
            _ => Err(ContractError::UnknownMethod { contract: self.kind().into(), method: method.into() }),
        }
    }
}
