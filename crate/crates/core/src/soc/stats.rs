//! Run statistics, serialized as deterministic JSON.

use serde::Serialize;

use super::core::CoreStats;
use super::engine::{Soc, Tile};
use super::l1::L1Stats;
use super::tiles::{AccelStats, AuxStats, MemStats};
use crate::l2::L2Stats;
use crate::llc::LlcStats;
use crate::noc::NocStats;

#[derive(Debug, Clone, Serialize)]
pub struct CoreReport {
    pub tile: usize,
    pub core: CoreStats,
    pub l1: L1Stats,
    pub l2: L2Stats,
}

#[derive(Debug, Clone, Serialize)]
pub struct MemReport {
    pub tile: usize,
    pub llc: LlcStats,
    pub memory: MemStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct AccelReport {
    pub tile: usize,
    pub accel: AccelStats,
    pub l2: Option<L2Stats>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SocStats {
    pub seed: u64,
    pub cycles: u64,
    pub completed: bool,
    pub cores: Vec<CoreReport>,
    pub memory_tiles: Vec<MemReport>,
    pub accelerators: Vec<AccelReport>,
    pub aux: AuxStats,
    pub noc: NocStats,
    pub violations: Vec<String>,
}

impl SocStats {
    pub(crate) fn collect(soc: &Soc) -> Self {
        let mut cores = Vec::new();
        let mut memory_tiles = Vec::new();
        let mut accelerators = Vec::new();
        for (i, t) in soc.tiles().iter().enumerate() {
            match t {
                Tile::Processor { core, l2, .. } => {
                    let c = &soc.cores()[*core];
                    cores.push(CoreReport { tile: i, core: c.stats.clone(), l1: c.l1.stats.clone(), l2: l2.stats.clone() });
                }
                Tile::Memory(m) => memory_tiles.push(MemReport { tile: i, llc: m.llc.stats.clone(), memory: m.stats.clone() }),
                Tile::Accelerator(a) => {
                    accelerators.push(AccelReport { tile: i, accel: a.stats.clone(), l2: a.l2.as_ref().map(|l2| l2.stats.clone()) })
                }
                _ => {}
            }
        }
        Self {
            seed: soc.seed(),
            cycles: soc.now(),
            completed: soc.is_finished(),
            cores,
            memory_tiles,
            accelerators,
            aux: soc.aux_stats(),
            noc: soc.mesh().stats.clone(),
            violations: soc.monitor.violations.iter().map(ToString::to_string).collect(),
        }
    }

    /// Pretty-printed JSON; field order is fixed, so equal runs give equal text.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn total_retired(&self) -> u64 {
        self.cores.iter().map(|c| c.core.retired).sum()
    }
}
