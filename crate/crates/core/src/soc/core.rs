//! Blocking in-order core: one memory operation outstanding at a time.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::adapter::Adapter;
use super::l1::L1Cache;
use super::program::Program;
use super::trace::TraceOp;
use crate::types::TileId;

#[derive(Debug, Clone, Default, Serialize)]
pub struct CoreStats {
    pub retired: u64,
    pub loads: u64,
    pub stores: u64,
    pub amos: u64,
    pub sc_success: u64,
    pub sc_failure: u64,
    pub mmio: u64,
    pub irqs: u64,
    /// Cycles spent waiting on the memory system.
    pub wait_cycles: u64,
    pub finished_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CoreState {
    /// Fetches its next operation once `ready_at` is reached.
    Ready,
    /// Has a request for the L2 that was not yet accepted.
    Issue(Adapter),
    WaitL2(Adapter),
    WaitMmio {
        read: bool,
        poll: Option<(u64, u64)>,
    },
    PollRetry(u64, u64),
    WaitIrq,
    Done,
}

pub struct Core {
    pub id: usize,
    pub tile: TileId,
    program: Box<dyn Program>,
    pub l1: L1Cache,
    pub(crate) state: CoreState,
    pub(crate) ready_at: u64,
    last: Option<u64>,
    /// Register results of value-producing operations, in program order.
    pub results: Vec<u64>,
    pub stats: CoreStats,
    pub(crate) irqs: u32,
    /// An LR is open: data accesses bypass the L1.
    pub(crate) lr_open: bool,
    pub(crate) current: Option<TraceOp>,
    /// Source and bound of the random delay added before each operation.
    jitter: Option<(ChaCha8Rng, u64)>,
}

impl Core {
    pub(crate) fn new(
        id: usize,
        tile: TileId,
        program: Box<dyn Program>,
        l1: L1Cache,
        start: u64,
        jitter: Option<(ChaCha8Rng, u64)>,
    ) -> Self {
        let mut jitter = jitter;
        let first = jitter.as_mut().map_or(0, |(rng, n): &mut (ChaCha8Rng, u64)| rng.gen_range(0..*n));
        Self {
            id,
            tile,
            program,
            l1,
            state: CoreState::Ready,
            ready_at: start + first,
            last: None,
            results: Vec::new(),
            stats: CoreStats::default(),
            irqs: 0,
            lr_open: false,
            current: None,
            jitter,
        }
    }

    pub(crate) fn fetch(&mut self) -> Option<TraceOp> {
        let op = self.program.next_op(self.last.take());
        self.current = op;
        op
    }

    pub(crate) fn retire(&mut self, value: Option<u64>, now: u64) {
        if let Some(v) = value {
            self.results.push(v);
        }
        self.last = value;
        self.stats.retired += 1;
        self.state = CoreState::Ready;
        self.ready_at = now + 1 + self.jitter.as_mut().map_or(0, |(rng, n)| rng.gen_range(0..*n));
        self.current = None;
    }

    pub fn is_done(&self) -> bool {
        self.state == CoreState::Done
    }

    /// Operation the core is working on, for diagnostics.
    pub fn current(&self) -> Option<TraceOp> {
        self.current
    }
}
