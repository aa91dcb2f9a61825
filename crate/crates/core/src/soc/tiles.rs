//! State of the non-processor tiles.

use std::collections::VecDeque;

use serde::Serialize;

use super::config::{AccelMode, DmaDesc};
use crate::l2::L2Controller;
use crate::llc::{DmaBurst, LlcSlice};
use crate::types::TileId;

#[derive(Debug, Clone, Default, Serialize)]
pub struct MemStats {
    pub reads: u64,
    pub writes: u64,
    pub bypass_bursts: u64,
    pub flushes: u64,
}

/// Memory tile: an LLC slice in front of its share of backing memory.
pub struct MemTile {
    pub llc: LlcSlice,
    /// Memory reads in flight: (ready cycle, line).
    pub(crate) reads: VecDeque<(u64, u64)>,
    /// Non-coherent bursts in flight: (ready cycle, burst).
    pub(crate) bypass: VecDeque<(u64, DmaBurst)>,
    pub(crate) flushing: bool,
    /// Cycle at which the last flush's writes have reached memory.
    pub(crate) flush_done_at: u64,
    pub stats: MemStats,
}

impl MemTile {
    pub fn new(llc: LlcSlice) -> Self {
        Self { llc, reads: VecDeque::new(), bypass: VecDeque::new(), flushing: false, flush_done_at: 0, stats: MemStats::default() }
    }

    /// Value of the flush status register.
    pub fn flush_status(&self, now: u64) -> u64 {
        u64::from(!self.flushing && now >= self.flush_done_at)
    }

    pub fn is_idle(&self) -> bool {
        self.reads.is_empty() && self.bypass.is_empty() && !self.flushing && self.llc.is_quiescent()
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AccelStats {
    pub jobs: u64,
    pub bursts: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub compute_cycles: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum AccState {
    Idle,
    /// Waiting for `outstanding` bytes of DMA responses for transfer `desc`.
    Transfer {
        desc: usize,
        outstanding: u64,
    },
    /// Word-by-word access through the private L2.
    Word {
        desc: usize,
        word: u64,
        waiting: bool,
    },
    Compute {
        desc: usize,
        until: u64,
    },
}

pub struct AccelTile {
    pub tile: TileId,
    pub mode: AccelMode,
    pub job: Vec<DmaDesc>,
    pub l2: Option<L2Controller>,
    pub(crate) state: AccState,
    pub(crate) invoker: Option<TileId>,
    /// Every word read by the accelerator: (address, value).
    pub reads: Vec<(u64, u64)>,
    pub stats: AccelStats,
}

impl AccelTile {
    pub fn new(tile: TileId, mode: AccelMode, job: Vec<DmaDesc>, l2: Option<L2Controller>) -> Self {
        Self { tile, mode, job, l2, state: AccState::Idle, invoker: None, reads: Vec::new(), stats: AccelStats::default() }
    }

    pub fn is_idle(&self) -> bool {
        self.state == AccState::Idle && self.l2.as_ref().is_none_or(L2Controller::is_quiescent)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AuxStats {
    pub irqs_received: u64,
    pub resumes_sent: u64,
}
