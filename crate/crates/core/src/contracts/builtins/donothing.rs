use crate::contracts::{Contract, ContractContext, ContractError};
use crate::ledger::Value;

/// Accepts any invocation and returns immediately. Isolates consensus cost.
pub struct DoNothing;

impl Contract for DoNothing {
    fn kind(&self) -> &'static str {
        "donothing"
    }

    fn call(&self, _ctx: &mut ContractContext<'_>, _method: &str, _args: &[Value]) -> Result<Vec<Value>, ContractError> {
        Ok(vec![])
    }
}
