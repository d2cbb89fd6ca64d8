//! Workload contracts: one per benchmark layer.

pub mod cpuheavy;
pub mod donothing;
pub mod doubler;
pub mod ioheavy;
pub mod kvstore;
pub mod smallbank;
pub mod versionkv;

use std::sync::Arc;

use super::Contract;

pub fn all() -> Vec<Arc<dyn Contract>> {
    vec![
        Arc::new(donothing::DoNothing),
        Arc::new(kvstore::KvStore),
        Arc::new(smallbank::Smallbank),
        Arc::new(ioheavy::IoHeavy),
        Arc::new(cpuheavy::CpuHeavy),
        Arc::new(versionkv::VersionKv),
        Arc::new(doubler::Doubler),
    ]
}

pub(crate) fn decode_i64(raw: Option<Vec<u8>>) -> i64 {
    raw.and_then(|b| <[u8; 8]>::try_from(b.as_slice()).ok()).map_or(0, i64::from_be_bytes)
}
