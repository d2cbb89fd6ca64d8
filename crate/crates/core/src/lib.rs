pub mod codec;
pub mod hash;
pub mod ledger;
pub mod state;
pub mod contracts;
pub mod consensus;
pub mod netsim;
pub mod sim;
pub mod bench;
pub mod config;
pub mod cli;
