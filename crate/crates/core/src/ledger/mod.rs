//! Transactions, blocks and the hash-pointer chain.

pub mod block;
pub mod chain;
pub mod signer;
pub mod transaction;

pub use block::{hash_header, Block, BlockHeader, Certificate, NodeId};
pub use chain::{AcceptAll, CertVerifier, ChainError, ChainView, ForkDelta, ForkMode, MainUpdate};
pub use signer::{KeyedHashSigner, Principal, Signature, Signer};
pub use transaction::{AccountId, Transaction, Value};
