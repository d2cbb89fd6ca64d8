//! Deterministic contract execution and the built-in workload contracts.

pub mod builtins;
mod runtime;

pub use runtime::{
    BlockExecution, Contract, ContractContext, ContractError, Receipt, ReceiptStatus, Runtime,
    DEFAULT_STEP_BUDGET, SYSTEM_CONTRACT,
};
pub(crate) use runtime::{arg_bytes, arg_int};
