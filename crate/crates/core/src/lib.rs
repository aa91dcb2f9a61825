pub mod cli;
pub mod error;
pub mod l2;
pub mod llc;
pub mod noc;
pub mod partition;
pub mod soc;
pub mod types;
pub mod verify;
pub mod workload;

pub use error::{Error, Result};
