//! The AMO adapter between a core and its L2.
//!
//! An AMO becomes a locked read followed by a locked write that carries the
//! ALU result. LR and SC each become one locked transaction with `atop` zero
//! and the reservation tag on the `user` field. The SC write response is
//! passed to the core unchanged.

use crate::error::{Error, Result};
use crate::l2::{CoreResp, CoreSideReq, WriteResp};
use crate::types::AtomicOp;

use super::trace::TraceOp;

/// Operations that travel through the adapter to the L2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemOp {
    Load(u64),
    Store(u64, u64),
    Ifetch(u64),
    Amo(AtomicOp, u64, u64),
    Lr(u64),
    Sc(u64, u64),
    Flush,
}

impl MemOp {
    pub fn from_trace(op: &TraceOp) -> Option<Self> {
        Some(match *op {
            TraceOp::Load(a) => MemOp::Load(a),
            TraceOp::Store(a, v) => MemOp::Store(a, v),
            TraceOp::Ifetch(a) => MemOp::Ifetch(a),
            TraceOp::Amo(o, a, v) => MemOp::Amo(o, a, v),
            TraceOp::Lr(a) => MemOp::Lr(a),
            TraceOp::Sc(a, v) => MemOp::Sc(a, v),
            TraceOp::Flush => MemOp::Flush,
            _ => return None,
        })
    }

    pub fn addr(&self) -> Option<u64> {
        match *self {
            MemOp::Load(a) | MemOp::Store(a, _) | MemOp::Ifetch(a) | MemOp::Amo(_, a, _) | MemOp::Lr(a) | MemOp::Sc(a, _) => Some(a),
            MemOp::Flush => None,
        }
    }
}

/// Progress of one operation through the adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Adapter {
    op: MemOp,
    tag: u32,
    /// Old value returned by the read half of an AMO.
    old: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterStep {
    /// Issue [`Adapter::request`] for the next half.
    Next,
    /// The operation retired, with its register result if it has one.
    Finished(Option<u64>),
}

impl Adapter {
    pub fn new(op: MemOp, tag: u32) -> Self {
        Self { op, tag, old: None }
    }

    pub fn op(&self) -> MemOp {
        self.op
    }

    /// True between the two halves of an AMO.
    pub fn in_write_half(&self) -> bool {
        self.old.is_some()
    }

    /// The request for the current half.
    pub fn request(&self) -> CoreSideReq {
        match self.op {
            MemOp::Load(a) => CoreSideReq::load(a),
            MemOp::Store(a, v) => CoreSideReq::store(a, v),
            MemOp::Ifetch(a) => CoreSideReq::ifetch(a),
            MemOp::Amo(op, a, v) => match self.old {
                None => CoreSideReq::amo_read(a, op.atop()),
                Some(old) => CoreSideReq::amo_write(a, op.atop(), op.apply(old, v)),
            },
            MemOp::Lr(a) => CoreSideReq::lr(a, self.tag),
            MemOp::Sc(a, v) => CoreSideReq::sc(a, self.tag, v),
            MemOp::Flush => CoreSideReq::flush(),
        }
    }

    /// Consumes the L2 response to the current half.
    pub fn complete(&mut self, resp: CoreResp) -> Result<AdapterStep> {
        let step = match (self.op, resp, self.old) {
            (MemOp::Load(_) | MemOp::Lr(_), CoreResp::Data(v), _) => AdapterStep::Finished(Some(v)),
            (MemOp::Ifetch(_), CoreResp::Data(_), _) => AdapterStep::Finished(None),
            (MemOp::Store(..), CoreResp::Write(_), _) => AdapterStep::Finished(None),
            (MemOp::Amo(..), CoreResp::Data(v), None) => {
                self.old = Some(v);
                AdapterStep::Next
            }
            (MemOp::Amo(..), CoreResp::Write(_), Some(old)) => AdapterStep::Finished(Some(old)),
            // RISC-V convention: SC writes 0 on success, 1 on failure.
            (MemOp::Sc(..), CoreResp::Write(WriteResp::ExOkay), _) => AdapterStep::Finished(Some(0)),
            (MemOp::Sc(..), CoreResp::Write(WriteResp::Okay), _) => AdapterStep::Finished(Some(1)),
            (MemOp::Flush, CoreResp::FlushDone, _) => AdapterStep::Finished(None),
            (op, resp, _) => return Err(Error::Protocol(format!("adapter got {resp:?} for {op:?}"))),
        };
        Ok(step)
    }
}
