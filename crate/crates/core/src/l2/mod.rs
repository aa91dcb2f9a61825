//! Private L2 cache controller used by processor tiles and fully-coherent
//! accelerator tiles.
//!
//! The controller is a pure state machine: callers hand it core-side requests
//! and NoC messages and collect the resulting [`L2Effect`]s. It never looks at
//! time except to expire an LR hold window, so the same code drives both the
//! cycle-level simulator and the exhaustive explorer.

mod mshr;

use std::collections::VecDeque;
use std::hash::{Hash, Hasher};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::partition::AddressMap;
use crate::types::{Addr, CacheGeometry, CohMsg, Endianness, Grant, LineState, MsgKind, MsgMeta, Perm, Plru, TileId};

pub use mshr::{MshrEntry, MshrKind};

/// Core-side operation, as it leaves the AMO adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum CoreOp {
    Load,
    Store,
    Ifetch,
    AmoRead,
    AmoWrite,
    LrRead,
    ScWrite,
    FlushL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CoreSideReq {
    pub op: CoreOp,
    pub addr: Addr,
    pub data: Option<u64>,
    pub lock: bool,
    pub atop: u8,
    pub user: u32,
}

impl CoreSideReq {
    fn plain(op: CoreOp, addr: u64, data: Option<u64>) -> Self {
        Self { op, addr: Addr(addr), data, lock: false, atop: 0, user: 0 }
    }

    pub fn load(addr: u64) -> Self {
        Self::plain(CoreOp::Load, addr, None)
    }
    pub fn store(addr: u64, value: u64) -> Self {
        Self::plain(CoreOp::Store, addr, Some(value))
    }
    pub fn ifetch(addr: u64) -> Self {
        Self::plain(CoreOp::Ifetch, addr, None)
    }
    pub fn flush() -> Self {
        Self::plain(CoreOp::FlushL2, 0, None)
    }
    pub fn amo_read(addr: u64, atop: u8) -> Self {
        Self { op: CoreOp::AmoRead, addr: Addr(addr), data: None, lock: true, atop, user: 0 }
    }
    /// `value` is the ALU result computed by the adapter.
    pub fn amo_write(addr: u64, atop: u8, value: u64) -> Self {
        Self { op: CoreOp::AmoWrite, addr: Addr(addr), data: Some(value), lock: true, atop, user: 0 }
    }
    pub fn lr(addr: u64, tag: u32) -> Self {
        Self { op: CoreOp::LrRead, addr: Addr(addr), data: None, lock: true, atop: 0, user: tag }
    }
    pub fn sc(addr: u64, tag: u32, value: u64) -> Self {
        Self { op: CoreOp::ScWrite, addr: Addr(addr), data: Some(value), lock: true, atop: 0, user: tag }
    }

    /// Checks the lock/atop conventions of atomic requests.
    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(Error::Protocol(format!("{:?}: {why}", self.op)));
        match self.op {
            CoreOp::AmoRead | CoreOp::AmoWrite => {
                if !self.lock {
                    return bad("AMO halves must carry lock");
                }
                crate::types::AtomicOp::from_atop(self.atop)?;
            }
            CoreOp::LrRead | CoreOp::ScWrite => {
                if !self.lock || self.atop != 0 {
                    return bad("LR/SC carry lock with atop zero");
                }
            }
            _ => {
                if self.lock {
                    return bad("plain accesses do not lock");
                }
            }
        }
        if matches!(self.op, CoreOp::Store | CoreOp::AmoWrite | CoreOp::ScWrite) && self.data.is_none() {
            return bad("write without data");
        }
        Ok(())
    }
}

/// AXI write response code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum WriteResp {
    ExOkay,
    Okay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoreResp {
    Data(u64),
    Write(WriteResp),
    FlushDone,
}

/// Immediate result of a core-side request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoreOutcome {
    /// Serviced this cycle.
    Done(CoreResp),
    /// Accepted; a later [`L2Effect::Respond`] completes it.
    Pending,
    /// Not accepted; retry later.
    Stalled,
}

/// A read or write performed on the coherent image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Access {
    pub tile: TileId,
    pub addr: u64,
    pub value: u64,
    pub write: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum L2Effect {
    Send(CohMsg),
    /// `MakeInvalid` on the snoop address channel toward the L1.
    Snoop {
        line: u64,
        perm: Perm,
    },
    Respond {
        req: CoreSideReq,
        resp: CoreResp,
    },
    /// Assert the L1 flush signal; answered by [`L2Controller::l1_flush_done`].
    L1Flush,
    Perform(Access),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
pub struct L2Config {
    pub geom: CacheGeometry,
    pub mshrs: usize,
    pub endian: Endianness,
    /// Cycles an LR keeps forwards that queued during its own fill.
    pub lr_hold_cycles: u64,
}

impl L2Config {
    pub fn new(geom: CacheGeometry) -> Self {
        Self { geom, mshrs: 4, endian: Endianness::Little, lr_hold_cycles: 16 }
    }
}

/// Event counters. Not part of the controller's identity, so two controllers
/// that differ only in history compare equal.
#[derive(Debug, Clone, Default, Serialize)]
pub struct L2Stats {
    pub hits: u64,
    pub misses: u64,
    pub upgrades: u64,
    pub stalls: u64,
    pub forwards: u64,
    pub forwards_stalled: u64,
    pub l1_invalidations: u64,
    pub writebacks: u64,
    pub evictions: u64,
    pub amos: u64,
    pub sc_success: u64,
    pub sc_failure: u64,
    pub reservations_killed: u64,
    pub flushes: u64,
}

impl PartialEq for L2Stats {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}
impl Eq for L2Stats {}
impl Hash for L2Stats {
    fn hash<H: Hasher>(&self, _: &mut H) {}
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Frame {
    line: u64,
    state: LineState,
    data: Vec<u8>,
    perm: Perm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Reservation {
    line: u64,
    user: u32,
    hold_until: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum FlushPhase {
    /// An AMO is between its read and write.
    WaitAtomic,
    WaitL1,
    Writeback,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct L2Controller {
    tile: TileId,
    cfg: L2Config,
    map: AddressMap,
    sets: Vec<Vec<Option<Frame>>>,
    plru: Vec<Plru>,
    mshrs: Vec<MshrEntry>,
    reservation: Option<Reservation>,
    flush: Option<(FlushPhase, CoreSideReq)>,
    pub stats: L2Stats,
}

fn perm_for(op: CoreOp) -> Perm {
    if op == CoreOp::Ifetch {
        Perm::INSTRUCTION
    } else {
        Perm::DATA
    }
}

impl L2Controller {
    pub fn new(tile: TileId, cfg: L2Config, map: AddressMap) -> Self {
        let sets = (0..cfg.geom.sets).map(|_| vec![None; cfg.geom.ways as usize]).collect();
        let plru = vec![Plru::default(); cfg.geom.sets as usize];
        Self { tile, cfg, map, sets, plru, mshrs: Vec::new(), reservation: None, flush: None, stats: L2Stats::default() }
    }

    pub fn tile(&self) -> TileId {
        self.tile
    }

    pub fn config(&self) -> &L2Config {
        &self.cfg
    }

    pub fn line_of(&self, addr: u64) -> u64 {
        self.cfg.geom.line_of(addr)
    }

    fn find(&self, line: u64) -> Option<(usize, usize)> {
        let set = self.cfg.geom.set_of(line);
        self.sets[set].iter().position(|f| f.as_ref().is_some_and(|f| f.line == line)).map(|w| (set, w))
    }

    fn frame(&mut self, at: (usize, usize)) -> &mut Frame {
        self.sets[at.0][at.1].as_mut().expect("frame present")
    }

    fn mshr_idx(&self, line: u64) -> Option<usize> {
        self.mshrs.iter().position(|m| m.addr == line)
    }

    /// Coherence state of `line` as seen by the directory protocol.
    pub fn line_state(&self, line: u64) -> LineState {
        if let Some(at) = self.find(line) {
            return self.sets[at.0][at.1].as_ref().unwrap().state;
        }
        if self.mshr_idx(line).is_some_and(|i| self.mshrs[i].pending == LineState::MiA) {
            return LineState::MiA;
        }
        LineState::I
    }

    /// Every line with a frame or an outstanding writeback.
    pub fn lines(&self) -> Vec<(u64, LineState)> {
        let mut out: Vec<_> = self.sets.iter().flatten().flatten().map(|f| (f.line, f.state)).collect();
        out.extend(self.mshrs.iter().filter(|m| m.pending == LineState::MiA).map(|m| (m.addr, LineState::MiA)));
        out.sort_unstable_by_key(|(l, _)| *l);
        out
    }

    pub fn mshrs(&self) -> &[MshrEntry] {
        &self.mshrs
    }

    /// No transaction in flight, no atomic open and no flush running.
    pub fn is_quiescent(&self) -> bool {
        self.mshrs.is_empty() && self.flush.is_none()
    }

    pub fn has_reservation(&self) -> bool {
        self.reservation.is_some()
    }

    /// Word currently held in a readable frame, if any.
    pub fn peek_word(&self, addr: u64) -> Option<u64> {
        let line = self.line_of(addr);
        let f = self.find(line).map(|at| self.sets[at.0][at.1].as_ref().unwrap())?;
        f.state.is_readable().then(|| self.cfg.endian.read_word(&f.data[self.cfg.geom.offset_of(addr)..]))
    }

    /// Word this cache is responsible for supplying (owned or writeback in flight).
    pub fn owned_word(&self, addr: u64) -> Option<u64> {
        let line = self.line_of(addr);
        let off = self.cfg.geom.offset_of(addr);
        if let Some(at) = self.find(line) {
            let f = self.sets[at.0][at.1].as_ref().unwrap();
            if f.state.is_writable() {
                return Some(self.cfg.endian.read_word(&f.data[off..]));
            }
        }
        self.mshrs
            .iter()
            .find(|m| m.addr == line && m.pending == LineState::MiA && m.wb_owner)
            .and_then(|m| m.wb_data.as_ref())
            .map(|d| self.cfg.endian.read_word(&d[off..]))
    }

    /// Copy of a readable line, used to fill the L1.
    pub fn line_data(&self, line: u64) -> Option<Vec<u8>> {
        let f = self.find(line).map(|at| self.sets[at.0][at.1].as_ref().unwrap())?;
        f.state.is_readable().then(|| f.data.clone())
    }

    fn send(&self, kind: MsgKind, line: u64, dst: TileId, meta: MsgMeta, data: Option<Vec<u8>>, out: &mut Vec<L2Effect>) {
        let mut msg = CohMsg::new(kind, line, self.tile, dst).with_meta(meta);
        msg.payload = data;
        out.push(L2Effect::Send(msg));
    }

    fn read(&self, f: &Frame, addr: u64) -> u64 {
        self.cfg.endian.read_word(&f.data[self.cfg.geom.offset_of(addr)..])
    }

    fn write(&mut self, at: (usize, usize), addr: u64, value: u64) {
        let off = self.cfg.geom.offset_of(addr);
        let endian = self.cfg.endian;
        endian.write_word(&mut self.frame(at).data[off..], value);
    }

    fn touch(&mut self, at: (usize, usize)) {
        let ways = self.cfg.geom.ways as usize;
        self.plru[at.0].touch(at.1, ways);
    }

    fn perform(&self, addr: u64, value: u64, write: bool, out: &mut Vec<L2Effect>) {
        out.push(L2Effect::Perform(Access { tile: self.tile, addr, value, write }));
    }

    /// Services a request from the core side (the AMO adapter or the socket).
    pub fn handle_core_request(&mut self, req: &CoreSideReq, now: u64, out: &mut Vec<L2Effect>) -> Result<CoreOutcome> {
        req.validate()?;
        let addr = req.addr.0;
        let line = self.line_of(addr);
        if self.flush.is_some() && req.op != CoreOp::AmoWrite {
            self.stats.stalls += 1;
            return Ok(CoreOutcome::Stalled);
        }
        let outcome = match req.op {
            CoreOp::FlushL2 => self.begin_flush(req, out),
            CoreOp::Ifetch => self.access(req, line, out),
            CoreOp::Load | CoreOp::Store => {
                // a data access ends any open atomic from this core
                self.close_atomic(now, out);
                self.access(req, line, out)
            }
            CoreOp::AmoRead | CoreOp::LrRead => self.atomic_read(req, line, now, out),
            CoreOp::AmoWrite => self.amo_write(req, line, now, out)?,
            CoreOp::ScWrite => self.sc_write(req, line, now, out),
        };
        if outcome == CoreOutcome::Stalled {
            self.stats.stalls += 1;
        }
        Ok(outcome)
    }

    fn access(&mut self, req: &CoreSideReq, line: u64, out: &mut Vec<L2Effect>) -> CoreOutcome {
        let addr = req.addr.0;
        if let Some(i) = self.mshr_idx(line) {
            // Instruction fetches are served while an atomic holds the line.
            if req.op == CoreOp::Ifetch && self.mshrs[i].pending == LineState::Xmw {
                let at = self.find(line).expect("XMW line has a frame");
                let v = self.read(self.sets[at.0][at.1].as_ref().unwrap(), addr);
                self.frame(at).perm = self.frame(at).perm.union(Perm::INSTRUCTION);
                self.stats.hits += 1;
                return CoreOutcome::Done(CoreResp::Data(v));
            }
            return CoreOutcome::Stalled;
        }
        if let Some(at) = self.find(line) {
            let state = self.sets[at.0][at.1].as_ref().unwrap().state;
            match (req.op, state) {
                (CoreOp::Load | CoreOp::Ifetch, LineState::S | LineState::E | LineState::M) => {
                    self.touch(at);
                    let p = perm_for(req.op);
                    self.frame(at).perm = self.frame(at).perm.union(p);
                    let v = self.read(self.sets[at.0][at.1].as_ref().unwrap(), addr);
                    self.stats.hits += 1;
                    if req.op == CoreOp::Load {
                        self.perform(addr, v, false, out);
                    }
                    CoreOutcome::Done(CoreResp::Data(v))
                }
                (CoreOp::Store, LineState::E | LineState::M) => {
                    self.touch(at);
                    let v = req.data.unwrap_or_default();
                    self.write(at, addr, v);
                    let f = self.frame(at);
                    f.state = LineState::M;
                    f.perm = f.perm.union(Perm::DATA);
                    self.stats.hits += 1;
                    self.perform(addr, v, true, out);
                    CoreOutcome::Done(CoreResp::Write(WriteResp::Okay))
                }
                (CoreOp::Store, LineState::S) => {
                    if self.mshrs.len() >= self.cfg.mshrs {
                        return CoreOutcome::Stalled;
                    }
                    self.touch(at);
                    self.frame(at).state = LineState::SmA;
                    self.mshrs.push(MshrEntry::miss(line, MshrKind::Write, LineState::SmA, *req));
                    self.stats.upgrades += 1;
                    let meta = MsgMeta { perm: Perm::DATA, ..Default::default() };
                    self.send(MsgKind::GetM, line, self.map.home(line), meta, None, out);
                    CoreOutcome::Pending
                }
                _ => CoreOutcome::Stalled,
            }
        } else {
            let kind = if req.op == CoreOp::Store { MshrKind::Write } else { MshrKind::Read };
            self.miss(req, line, kind, out)
        }
    }

    /// Allocates a frame and an MSHR for a miss and issues the request.
    fn miss(&mut self, req: &CoreSideReq, line: u64, kind: MshrKind, out: &mut Vec<L2Effect>) -> CoreOutcome {
        if self.mshrs.len() >= self.cfg.mshrs {
            return CoreOutcome::Stalled;
        }
        let Some(at) = self.allocate(line, out) else {
            return CoreOutcome::Stalled;
        };
        let exclusive = kind != MshrKind::Read;
        let pending = if exclusive { LineState::ImA } else { LineState::IsA };
        let perm = perm_for(req.op);
        self.sets[at.0][at.1] = Some(Frame { line, state: pending, data: vec![0; self.cfg.geom.line_bytes as usize], perm });
        self.touch(at);
        self.mshrs.push(MshrEntry::miss(line, kind, pending, *req));
        self.stats.misses += 1;
        let kind = if exclusive { MsgKind::GetM } else { MsgKind::GetS };
        let meta = MsgMeta { perm, lock: req.lock, atop: req.atop, user: req.user, ..Default::default() };
        self.send(kind, line, self.map.home(line), meta, None, out);
        CoreOutcome::Pending
    }

    /// Finds a free way for `line`, evicting a stable victim if needed.
    fn allocate(&mut self, line: u64, out: &mut Vec<L2Effect>) -> Option<(usize, usize)> {
        let set = self.cfg.geom.set_of(line);
        if let Some(w) = self.sets[set].iter().position(Option::is_none) {
            return Some((set, w));
        }
        // the victim's writeback needs an MSHR on top of the miss
        if self.mshrs.len() + 2 > self.cfg.mshrs {
            return None;
        }
        let candidates: Vec<usize> =
            self.sets[set].iter().enumerate().filter(|(_, f)| f.as_ref().is_some_and(|f| f.state.is_stable())).map(|(w, _)| w).collect();
        let way = self.plru[set].victim(candidates)?;
        self.evict((set, way), out);
        self.stats.evictions += 1;
        Some((set, way))
    }

    /// Writes a stable frame back to the LLC and frees it.
    fn evict(&mut self, at: (usize, usize), out: &mut Vec<L2Effect>) {
        let f = self.sets[at.0][at.1].take().expect("evicting a present frame");
        out.push(L2Effect::Snoop { line: f.line, perm: f.perm.union(Perm::DATA) });
        self.stats.l1_invalidations += 1;
        if self.reservation.is_some_and(|r| r.line == f.line) {
            self.reservation = None;
            self.stats.reservations_killed += 1;
        }
        let home = self.map.home(f.line);
        let owner = matches!(f.state, LineState::E | LineState::M);
        let meta = MsgMeta { dirty: f.state == LineState::M, ..Default::default() };
        if f.state == LineState::M {
            self.send(MsgKind::PutM, f.line, home, meta, Some(f.data.clone()), out);
        } else {
            self.send(MsgKind::PutS, f.line, home, meta, None, out);
        }
        self.stats.writebacks += 1;
        self.mshrs.push(MshrEntry::writeback(f.line, f.data, owner));
    }

    fn atomic_read(&mut self, req: &CoreSideReq, line: u64, now: u64, out: &mut Vec<L2Effect>) -> CoreOutcome {
        let kind = if req.op == CoreOp::AmoRead { MshrKind::AtomicAmo } else { MshrKind::AtomicLrsc };
        if let Some(m) = self.mshrs.iter().find(|m| m.atomic_open) {
            if m.kind == MshrKind::AtomicAmo {
                return CoreOutcome::Stalled;
            }
            self.close_atomic(now, out);
        }
        if self.mshr_idx(line).is_some() {
            return CoreOutcome::Stalled;
        }
        if self.mshrs.len() >= self.cfg.mshrs {
            return CoreOutcome::Stalled;
        }
        match self.find(line) {
            Some(at) if matches!(self.sets[at.0][at.1].as_ref().unwrap().state, LineState::M | LineState::E) => {
                self.touch(at);
                let f = self.frame(at);
                f.state = LineState::Xmw;
                f.perm = f.perm.union(Perm::DATA);
                let v = self.read(self.sets[at.0][at.1].as_ref().unwrap(), req.addr.0);
                let mut m = MshrEntry::miss(line, kind, LineState::Xmw, *req);
                m.atomic_open = true;
                self.mshrs.push(m);
                self.open_reservation(req, line, now);
                self.stats.hits += 1;
                self.perform(req.addr.0, v, false, out);
                CoreOutcome::Done(CoreResp::Data(v))
            }
            Some(at) => {
                // S: upgrade to M
                self.touch(at);
                self.frame(at).state = LineState::SmA;
                self.mshrs.push(MshrEntry::miss(line, kind, LineState::SmA, *req));
                self.stats.upgrades += 1;
                let meta = MsgMeta { perm: Perm::DATA, lock: true, atop: req.atop, user: req.user, ..Default::default() };
                self.send(MsgKind::GetM, line, self.map.home(line), meta, None, out);
                CoreOutcome::Pending
            }
            None => self.miss(req, line, kind, out),
        }
    }

    fn open_reservation(&mut self, req: &CoreSideReq, line: u64, now: u64) {
        if req.op == CoreOp::LrRead {
            self.reservation = Some(Reservation { line, user: req.user, hold_until: now + self.cfg.lr_hold_cycles });
        }
    }

    fn amo_write(&mut self, req: &CoreSideReq, line: u64, now: u64, out: &mut Vec<L2Effect>) -> Result<CoreOutcome> {
        let Some(i) = self.mshrs.iter().position(|m| m.addr == line && m.atomic_open && m.kind == MshrKind::AtomicAmo) else {
            return Err(Error::Protocol(format!("AmoWrite to {:#x} without an open AMO", req.addr.0)));
        };
        let at = self.find(line).expect("XMW line has a frame");
        let v = req.data.unwrap_or_default();
        self.write(at, req.addr.0, v);
        self.frame(at).state = LineState::M;
        let m = self.mshrs.remove(i);
        self.stats.amos += 1;
        self.perform(req.addr.0, v, true, out);
        self.replay(m.stalled, now, out);
        if let Some((FlushPhase::WaitAtomic, _)) = self.flush {
            self.start_l1_flush(out);
        }
        Ok(CoreOutcome::Done(CoreResp::Write(WriteResp::ExOkay)))
    }

    fn sc_write(&mut self, req: &CoreSideReq, line: u64, now: u64, out: &mut Vec<L2Effect>) -> CoreOutcome {
        let live = self.reservation.is_some_and(|r| r.line == line && r.user == req.user)
            && self.mshr_idx(line).is_some_and(|i| self.mshrs[i].atomic_open && self.mshrs[i].kind == MshrKind::AtomicLrsc);
        if !live {
            self.close_atomic(now, out);
            self.reservation = None;
            self.stats.sc_failure += 1;
            return CoreOutcome::Done(CoreResp::Write(WriteResp::Okay));
        }
        let i = self.mshr_idx(line).unwrap();
        let at = self.find(line).expect("XMW line has a frame");
        let v = req.data.unwrap_or_default();
        self.write(at, req.addr.0, v);
        self.frame(at).state = LineState::M;
        let m = self.mshrs.remove(i);
        self.reservation = None;
        self.stats.sc_success += 1;
        self.perform(req.addr.0, v, true, out);
        self.replay(m.stalled, now, out);
        CoreOutcome::Done(CoreResp::Write(WriteResp::ExOkay))
    }

    /// Ends the open atomic, if any: the line returns to M and its stalled
    /// forwards are replayed. An LR reservation dies with it.
    fn close_atomic(&mut self, now: u64, out: &mut Vec<L2Effect>) {
        let Some(i) = self.mshrs.iter().position(|m| m.atomic_open) else {
            self.reservation = None;
            return;
        };
        let m = self.mshrs.remove(i);
        if let Some(at) = self.find(m.addr) {
            self.frame(at).state = LineState::M;
        }
        if self.reservation.take().is_some() {
            self.stats.reservations_killed += 1;
        }
        self.replay(m.stalled, now, out);
    }

    fn replay(&mut self, stalled: VecDeque<CohMsg>, now: u64, out: &mut Vec<L2Effect>) {
        for msg in stalled {
            self.handle_forward(msg, now, out);
        }
    }

    /// Handles a message delivered from the NoC.
    pub fn handle_msg(&mut self, msg: CohMsg, now: u64, out: &mut Vec<L2Effect>) -> Result<()> {
        match msg.kind {
            MsgKind::FwdGetS | MsgKind::FwdGetM | MsgKind::Inv => {
                self.handle_forward(msg, now, out);
                Ok(())
            }
            MsgKind::DataRsp => self.handle_data(msg, now, out),
            MsgKind::WbAck => self.handle_wback(msg, out),
            other => Err(Error::Protocol(format!("L2 {} cannot handle {other:?}", self.tile))),
        }
    }

    fn handle_forward(&mut self, msg: CohMsg, now: u64, out: &mut Vec<L2Effect>) {
        self.stats.forwards += 1;
        let line = self.line_of(msg.addr.0);
        let llc = msg.src;
        if let Some(i) = self.mshr_idx(line) {
            let m = &self.mshrs[i];
            match m.pending {
                LineState::MiA => {
                    let (owner, data) = (m.wb_owner, m.wb_data.clone());
                    if owner && msg.kind != MsgKind::Inv {
                        self.serve_owned(&msg, llc, data.unwrap(), true, out);
                        self.mshrs[i].wb_owner = false;
                    } else {
                        self.ack(&msg, llc, out);
                    }
                }
                LineState::SmA if msg.kind == MsgKind::Inv => {
                    // lost the shared copy while upgrading
                    let at = self.find(line).expect("SM_A line has a frame");
                    let perm = self.frame(at).perm;
                    self.frame(at).state = LineState::ImA;
                    self.mshrs[i].pending = LineState::ImA;
                    out.push(L2Effect::Snoop { line, perm });
                    self.stats.l1_invalidations += 1;
                    self.ack(&msg, llc, out);
                }
                LineState::Xmw if m.kind == MshrKind::AtomicLrsc && m.stalled.is_empty() => {
                    // served between LR and SC, which kills the reservation
                    let m = self.mshrs.remove(i);
                    if self.reservation.take().is_some() {
                        self.stats.reservations_killed += 1;
                    }
                    let at = self.find(line).expect("XMW line has a frame");
                    self.frame(at).state = LineState::M;
                    self.serve_frame(&msg, at, out);
                    debug_assert!(m.stalled.is_empty());
                    let _ = now;
                }
                _ => {
                    self.stats.forwards_stalled += 1;
                    self.mshrs[i].stalled.push_back(msg);
                }
            }
            return;
        }
        match self.find(line) {
            Some(at) => self.serve_frame(&msg, at, out),
            None => self.ack(&msg, llc, out),
        }
    }

    /// Answers a forward for a line held in a stable frame.
    fn serve_frame(&mut self, msg: &CohMsg, at: (usize, usize), out: &mut Vec<L2Effect>) {
        let llc = msg.src;
        let f = self.sets[at.0][at.1].as_ref().unwrap();
        let line = f.line;
        match f.state {
            LineState::E | LineState::M => {
                let dirty = f.state == LineState::M;
                let data = f.data.clone();
                let perm = f.perm;
                if msg.kind == MsgKind::FwdGetS {
                    self.serve_owned(msg, llc, data, dirty, out);
                    self.frame(at).state = LineState::S;
                } else {
                    self.serve_owned(msg, llc, data, dirty, out);
                    self.sets[at.0][at.1] = None;
                    out.push(L2Effect::Snoop { line, perm });
                    self.stats.l1_invalidations += 1;
                }
            }
            _ => {
                let perm = f.perm;
                self.sets[at.0][at.1] = None;
                out.push(L2Effect::Snoop { line, perm });
                self.stats.l1_invalidations += 1;
                self.ack(msg, llc, out);
            }
        }
    }

    /// Data from an owner: to the requester, plus a copy or an ack to the LLC.
    fn serve_owned(&self, msg: &CohMsg, llc: TileId, data: Vec<u8>, dirty: bool, out: &mut Vec<L2Effect>) {
        let line = self.line_of(msg.addr.0);
        let requester = msg.meta.requester.unwrap_or(llc);
        let grant = if msg.kind == MsgKind::FwdGetS { Grant::Shared } else { Grant::Modified };
        let meta = MsgMeta { grant, dirty, requester: Some(requester), ..Default::default() };
        if requester == llc {
            self.send(MsgKind::DataRsp, line, llc, meta, Some(data), out);
            return;
        }
        self.send(MsgKind::DataRsp, line, requester, meta, Some(data.clone()), out);
        if msg.kind == MsgKind::FwdGetS {
            self.send(MsgKind::DataRsp, line, llc, meta, Some(data), out);
        } else {
            self.send(MsgKind::InvAck, line, llc, meta, None, out);
        }
    }

    /// Acknowledges a forward for which this cache holds nothing.
    fn ack(&self, msg: &CohMsg, llc: TileId, out: &mut Vec<L2Effect>) {
        let line = self.line_of(msg.addr.0);
        let meta = MsgMeta { no_data: msg.kind != MsgKind::Inv, requester: msg.meta.requester, ..Default::default() };
        self.send(MsgKind::InvAck, line, llc, meta, None, out);
    }

    fn handle_data(&mut self, msg: CohMsg, now: u64, out: &mut Vec<L2Effect>) -> Result<()> {
        let line = self.line_of(msg.addr.0);
        let Some(i) = self.mshr_idx(line) else {
            return Err(Error::Protocol(format!("L2 {}: DataRsp for {line:#x} without MSHR", self.tile)));
        };
        let pending = self.mshrs[i].pending;
        if !matches!(pending, LineState::IsA | LineState::ImA | LineState::SmA) {
            return Err(Error::Protocol(format!("L2 {}: DataRsp for {line:#x} in {pending:?}", self.tile)));
        }
        let at = self.find(line).expect("pending line has a frame");
        let data = msg.payload.ok_or_else(|| Error::Protocol("DataRsp without payload".into()))?;
        let req = self.mshrs[i].req.expect("miss carries its request");
        let kind = self.mshrs[i].kind;
        let f = self.frame(at);
        f.data = data;
        f.state = match pending {
            LineState::IsA if msg.meta.grant == Grant::Shared => LineState::S,
            LineState::IsA => LineState::E,
            _ => LineState::M,
        };
        let addr = req.addr.0;
        match req.op {
            CoreOp::Load | CoreOp::Ifetch => {
                let v = self.read(self.sets[at.0][at.1].as_ref().unwrap(), addr);
                if req.op == CoreOp::Load {
                    self.perform(addr, v, false, out);
                }
                out.push(L2Effect::Respond { req, resp: CoreResp::Data(v) });
            }
            CoreOp::Store => {
                let v = req.data.unwrap_or_default();
                self.write(at, addr, v);
                self.frame(at).state = LineState::M;
                self.perform(addr, v, true, out);
                out.push(L2Effect::Respond { req, resp: CoreResp::Write(WriteResp::Okay) });
            }
            CoreOp::AmoRead | CoreOp::LrRead => {
                let v = self.read(self.sets[at.0][at.1].as_ref().unwrap(), addr);
                self.frame(at).state = LineState::Xmw;
                let m = &mut self.mshrs[i];
                m.pending = LineState::Xmw;
                m.atomic_open = true;
                self.open_reservation(&req, line, now);
                self.perform(addr, v, false, out);
                out.push(L2Effect::Respond { req, resp: CoreResp::Data(v) });
                return Ok(());
            }
            other => return Err(Error::Protocol(format!("{other:?} cannot miss"))),
        }
        debug_assert!(!kind.is_atomic());
        let m = self.mshrs.remove(i);
        self.replay(m.stalled, now, out);
        self.flush_progress(out);
        Ok(())
    }

    fn handle_wback(&mut self, msg: CohMsg, out: &mut Vec<L2Effect>) -> Result<()> {
        let line = self.line_of(msg.addr.0);
        let Some(i) = self.mshrs.iter().position(|m| m.addr == line && m.pending == LineState::MiA) else {
            return Err(Error::Protocol(format!("L2 {}: WbAck for {line:#x} without writeback", self.tile)));
        };
        self.mshrs.remove(i);
        self.flush_progress(out);
        Ok(())
    }

    /// Time-driven work: expiry of an LR hold window.
    pub fn tick(&mut self, now: u64, out: &mut Vec<L2Effect>) {
        if let Some(r) = self.reservation {
            let held = self.mshr_idx(r.line).is_some_and(|i| self.mshrs[i].pending == LineState::Xmw && !self.mshrs[i].stalled.is_empty());
            if held && now >= r.hold_until {
                self.close_atomic(now, out);
            }
        }
    }

    /// Whether an LR is holding forwards queued during its fill.
    pub fn holds_forwards(&self) -> bool {
        self.reservation.is_some_and(|r| {
            self.mshr_idx(r.line).is_some_and(|i| self.mshrs[i].pending == LineState::Xmw && !self.mshrs[i].stalled.is_empty())
        })
    }

    /// Forces the LR hold window to end now.
    pub fn expire_hold(&mut self, out: &mut Vec<L2Effect>) {
        if self.holds_forwards() {
            self.close_atomic(0, out);
        }
    }

    fn begin_flush(&mut self, req: &CoreSideReq, out: &mut Vec<L2Effect>) -> CoreOutcome {
        let amo_open = self.mshrs.iter().any(|m| m.atomic_open && m.kind == MshrKind::AtomicAmo);
        if !amo_open && self.reservation.is_some() {
            self.close_atomic(0, out);
        }
        if amo_open {
            self.flush = Some((FlushPhase::WaitAtomic, *req));
        } else {
            self.flush = Some((FlushPhase::WaitL1, *req));
            self.start_l1_flush(out);
        }
        CoreOutcome::Pending
    }

    fn start_l1_flush(&mut self, out: &mut Vec<L2Effect>) {
        if let Some((phase, _)) = self.flush.as_mut() {
            *phase = FlushPhase::WaitL1;
            out.push(L2Effect::L1Flush);
        }
    }

    /// `flush_done` from the L1: write back and invalidate every line.
    pub fn l1_flush_done(&mut self, out: &mut Vec<L2Effect>) {
        if let Some((phase @ FlushPhase::WaitL1, _)) = self.flush.as_mut() {
            *phase = FlushPhase::Writeback;
            self.flush_progress(out);
        }
    }

    fn flush_progress(&mut self, out: &mut Vec<L2Effect>) {
        let Some((FlushPhase::Writeback, req)) = self.flush else {
            return;
        };
        let frames: Vec<(usize, usize)> = self
            .sets
            .iter()
            .enumerate()
            .flat_map(|(s, ways)| {
                ways.iter().enumerate().filter(|(_, f)| f.as_ref().is_some_and(|f| f.state.is_stable())).map(move |(w, _)| (s, w))
            })
            .collect();
        for at in frames {
            if self.mshrs.len() >= self.cfg.mshrs {
                break;
            }
            self.evict(at, out);
        }
        let empty = self.sets.iter().flatten().all(Option::is_none);
        if empty && self.mshrs.is_empty() {
            self.flush = None;
            self.stats.flushes += 1;
            out.push(L2Effect::Respond { req, resp: CoreResp::FlushDone });
        }
    }

    pub fn flush_in_progress(&self) -> bool {
        self.flush.is_some()
    }
}
