//! The SoC model: tiles, cores and the cycle engine.

pub mod adapter;
pub mod config;
pub mod core;
mod engine;
pub mod l1;
pub mod memory;
pub mod program;
pub mod stats;
pub mod tiles;
pub mod trace;

pub use config::{AccelConfig, AccelMode, DmaDesc, SocConfig, TileKind};
pub use engine::{RunSummary, Soc};
pub use program::{Program, TraceProgram};
pub use stats::SocStats;
pub use trace::{Trace, TraceOp};

#[cfg(test)]
mod tests;
