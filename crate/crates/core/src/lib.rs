pub mod agents;
pub mod config;
pub mod error;
pub mod io;
pub mod market;
pub mod policy;
pub mod rl;
pub mod sim;
pub mod truthfulness;
pub mod verify;
pub mod wdp;

pub use error::{MarketError, Result};
