use std::collections::VecDeque;

use super::CoreSideReq;
use crate::types::{CohMsg, LineState};

/// What an MSHR entry is tracking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MshrKind {
    Read,
    Write,
    AtomicAmo,
    AtomicLrsc,
    Writeback,
}

impl MshrKind {
    pub fn is_atomic(self) -> bool {
        matches!(self, MshrKind::AtomicAmo | MshrKind::AtomicLrsc)
    }
}

/// In-flight transaction on one line.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MshrEntry {
    pub addr: u64,
    pub kind: MshrKind,
    pub pending: LineState,
    /// Forwards that arrived while the line could not serve them, FIFO.
    pub stalled: VecDeque<CohMsg>,
    pub atomic_open: bool,
    pub(crate) req: Option<CoreSideReq>,
    /// Line data held for an outstanding writeback.
    pub(crate) wb_data: Option<Vec<u8>>,
    /// The writeback gave up ownership (E or M), so it can still serve forwards.
    pub(crate) wb_owner: bool,
}

impl MshrEntry {
    pub(crate) fn miss(addr: u64, kind: MshrKind, pending: LineState, req: CoreSideReq) -> Self {
        Self { addr, kind, pending, stalled: VecDeque::new(), atomic_open: false, req: Some(req), wb_data: None, wb_owner: false }
    }

    pub(crate) fn writeback(addr: u64, data: Vec<u8>, owner: bool) -> Self {
        Self {
            addr,
            kind: MshrKind::Writeback,
            pending: LineState::MiA,
            stalled: VecDeque::new(),
            atomic_open: false,
            req: None,
            wb_data: Some(data),
            wb_owner: owner,
        }
    }
}
