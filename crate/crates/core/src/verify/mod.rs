//! Correctness checking: runtime monitors, litmus tests and state exploration.

pub mod explore;
pub mod litmus;
pub mod monitor;
pub mod oracle;

pub use litmus::{load_corpus, run_litmus, LitmusTest, LitmusVerdict};
pub use monitor::{Monitor, Violation, ViolationKind};
pub use oracle::{Outcome, ScOracle};
