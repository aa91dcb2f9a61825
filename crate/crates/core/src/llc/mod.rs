//! Last-level cache slice with its directory, one per memory tile.
//!
//! Each line carries a [`DirEntry`]. The directory blocks per line: while a
//! line is busy (recalling an owner, collecting invalidation acks or waiting
//! for memory) further requests to it queue in arrival order.

mod dma;

use std::collections::{BTreeSet, VecDeque};
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l2::Access;
use crate::types::{CacheGeometry, CohMsg, DirEntry, DirState, Endianness, Grant, MsgKind, MsgMeta, Plru, Sharers, TileId};

pub use dma::DmaBurst;

/// Deliberate protocol bugs used to check that the monitors notice them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Grant M on a GetM without recalling the current owner.
    DuplicateM,
    /// Drop the first data response the directory sends.
    DroppedResponse,
    /// Answer a GetM before the sharers' InvAcks arrive.
    SkipInvAck,
}

impl std::str::FromStr for Fault {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "duplicate-m" => Ok(Fault::DuplicateM),
            "dropped-response" => Ok(Fault::DroppedResponse),
            "skip-inv-ack" => Ok(Fault::SkipInvAck),
            _ => Err(Error::Usage(format!("unknown fault `{s}` (expected duplicate-m, dropped-response or skip-inv-ack)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LlcConfig {
    pub geom: CacheGeometry,
    pub endian: Endianness,
    /// Grant E to a GetS that finds no other holder.
    pub grant_exclusive: bool,
    /// Drop clean lines on flush instead of keeping them in V.
    pub flush_invalidates: bool,
    pub fault: Option<Fault>,
}

impl LlcConfig {
    pub fn new(geom: CacheGeometry) -> Self {
        Self { geom, endian: Endianness::Little, grant_exclusive: false, flush_invalidates: false, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LlcEffect {
    Send(CohMsg),
    MemRead {
        line: u64,
    },
    MemWrite {
        line: u64,
        data: Vec<u8>,
    },
    Perform(Access),
    /// Every dirty line has been handed to memory.
    FlushDone,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LlcStats {
    pub requests: u64,
    pub hits: u64,
    pub misses: u64,
    pub v_hits: u64,
    pub mem_reads: u64,
    pub mem_writes: u64,
    pub forwards_sent: u64,
    pub invalidations_sent: u64,
    pub recalls: u64,
    pub evictions: u64,
    pub stalls: u64,
    pub dma_lines: u64,
    pub flushes: u64,
}

impl PartialEq for LlcStats {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}
impl Eq for LlcStats {}
impl Hash for LlcStats {
    fn hash<H: Hasher>(&self, _: &mut H) {}
}

/// What a busy line does once its outstanding responses are in.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Waiter {
    /// FwdGetS sent to the owner on behalf of `req`.
    GetS { req: TileId },
    /// Invalidations sent to sharers on behalf of `req`.
    GetM { req: TileId },
    /// FwdGetM sent to the owner on behalf of `req`.
    GetMFwd { req: TileId },
    /// Ownership and copies pulled back to the directory.
    Recall(RecallFor),
    /// Memory read; the request to replay, if any.
    Fill(Option<CohMsg>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum RecallFor {
    Dma,
    Evict,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Busy {
    acks: usize,
    owner: Option<TileId>,
    owner_no_data: bool,
    waiter: Waiter,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct LlcLine {
    line: u64,
    dir: DirEntry,
    data: Vec<u8>,
    busy: Option<Busy>,
}

impl LlcLine {
    fn has_holders(&self) -> bool {
        self.dir.owner.is_some() || !self.dir.sharers.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LlcSlice {
    tile: TileId,
    cfg: LlcConfig,
    sets: Vec<Vec<Option<LlcLine>>>,
    plru: Vec<Plru>,
    stalled: VecDeque<CohMsg>,
    dma: VecDeque<DmaBurst>,
    flushing: bool,
    dropped_one: bool,
    pub stats: LlcStats,
}

enum Step {
    Done,
    Blocked,
}

impl LlcSlice {
    pub fn new(tile: TileId, cfg: LlcConfig) -> Self {
        let sets = (0..cfg.geom.sets).map(|_| vec![None; cfg.geom.ways as usize]).collect();
        Self {
            tile,
            cfg,
            sets,
            plru: vec![Plru::default(); cfg.geom.sets as usize],
            stalled: VecDeque::new(),
            dma: VecDeque::new(),
            flushing: false,
            dropped_one: false,
            stats: LlcStats::default(),
        }
    }

    pub fn tile(&self) -> TileId {
        self.tile
    }

    pub fn config(&self) -> &LlcConfig {
        &self.cfg
    }

    fn line_of(&self, addr: u64) -> u64 {
        self.cfg.geom.line_of(addr)
    }

    fn find(&self, line: u64) -> Option<(usize, usize)> {
        let set = self.cfg.geom.set_of(line);
        self.sets[set].iter().position(|l| l.as_ref().is_some_and(|l| l.line == line)).map(|w| (set, w))
    }

    fn at(&mut self, at: (usize, usize)) -> &mut LlcLine {
        self.sets[at.0][at.1].as_mut().expect("line present")
    }

    fn get(&self, at: (usize, usize)) -> &LlcLine {
        self.sets[at.0][at.1].as_ref().expect("line present")
    }

    /// Directory entry for `line`; `I` when the slice does not hold it.
    pub fn dir_entry(&self, line: u64) -> DirEntry {
        match self.find(line) {
            Some(at) => self.get(at).dir,
            None => DirEntry { state: DirState::I, ..DirEntry::valid() },
        }
    }

    /// All resident lines with their directory entries, in address order.
    pub fn lines(&self) -> Vec<(u64, DirEntry)> {
        let mut v: Vec<_> = self.sets.iter().flatten().flatten().map(|l| (l.line, l.dir)).collect();
        v.sort_unstable_by_key(|(l, _)| *l);
        v
    }

    /// Word held by the slice; only current when no private cache owns the line.
    pub fn peek_word(&self, addr: u64) -> Option<u64> {
        let at = self.find(self.line_of(addr))?;
        let l = self.get(at);
        if l.dir.state == DirState::BusyMem {
            return None;
        }
        Some(self.cfg.endian.read_word(&l.data[self.cfg.geom.offset_of(addr)..]))
    }

    pub fn is_dirty(&self, line: u64) -> bool {
        self.find(line).is_some_and(|at| self.get(at).dir.dirty)
    }

    pub fn is_quiescent(&self) -> bool {
        self.stalled.is_empty() && self.dma.is_empty() && !self.flushing && self.sets.iter().flatten().flatten().all(|l| l.busy.is_none())
    }

    /// Structural directory invariants on every stable line.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for l in self.sets.iter().flatten().flatten() {
            if l.busy.is_none() {
                l.dir.check().map_err(|e| format!("line {:#x}: {e}", l.line))?;
            }
        }
        Ok(())
    }

    fn send(&mut self, kind: MsgKind, line: u64, dst: TileId, meta: MsgMeta, data: Option<Vec<u8>>, out: &mut Vec<LlcEffect>) {
        if kind == MsgKind::DataRsp && self.cfg.fault == Some(Fault::DroppedResponse) && !self.dropped_one {
            self.dropped_one = true;
            return;
        }
        match kind {
            MsgKind::FwdGetS | MsgKind::FwdGetM => self.stats.forwards_sent += 1,
            MsgKind::Inv => self.stats.invalidations_sent += 1,
            _ => {}
        }
        let mut msg = CohMsg::new(kind, line, self.tile, dst).with_meta(meta);
        msg.payload = data;
        out.push(LlcEffect::Send(msg));
    }

    fn data_rsp(&mut self, at: (usize, usize), dst: TileId, grant: Grant, out: &mut Vec<LlcEffect>) {
        let (line, data) = {
            let l = self.get(at);
            (l.line, l.data.clone())
        };
        let meta = MsgMeta { grant, ..Default::default() };
        self.send(MsgKind::DataRsp, line, dst, meta, Some(data), out);
    }

    fn wback(&mut self, line: u64, dst: TileId, out: &mut Vec<LlcEffect>) {
        self.send(MsgKind::WbAck, line, dst, MsgMeta::default(), None, out);
    }

    /// Handles a message delivered from the NoC.
    pub fn handle_msg(&mut self, msg: CohMsg, out: &mut Vec<LlcEffect>) -> Result<()> {
        match msg.kind {
            MsgKind::GetS | MsgKind::GetM | MsgKind::PutS | MsgKind::PutM => {
                self.stats.requests += 1;
                self.stalled.push_back(msg);
            }
            MsgKind::InvAck | MsgKind::DataRsp => self.response(msg, out)?,
            MsgKind::DmaReadBurst | MsgKind::DmaWriteBurst => self.dma.push_back(DmaBurst::from_msg(&msg)?),
            other => return Err(Error::Protocol(format!("LLC {} cannot handle {other:?}", self.tile))),
        }
        self.progress(out);
        Ok(())
    }

    /// Retries queued requests, DMA and flush work.
    pub fn progress(&mut self, out: &mut Vec<LlcEffect>) {
        self.drain(out);
        self.dma_progress(out);
        self.flush_progress(out);
    }

    fn drain(&mut self, out: &mut Vec<LlcEffect>) {
        let mut blocked: BTreeSet<u64> = BTreeSet::new();
        let mut keep = VecDeque::new();
        while let Some(msg) = self.stalled.pop_front() {
            let line = self.line_of(msg.addr.0);
            if blocked.contains(&line) {
                keep.push_back(msg);
                continue;
            }
            match self.try_request(&msg, out) {
                Step::Done => {}
                Step::Blocked => {
                    self.stats.stalls += 1;
                    blocked.insert(line);
                    keep.push_back(msg);
                }
            }
        }
        self.stalled = keep;
    }

    fn try_request(&mut self, msg: &CohMsg, out: &mut Vec<LlcEffect>) -> Step {
        let line = self.line_of(msg.addr.0);
        match self.find(line) {
            Some(at) if self.get(at).busy.is_some() => Step::Blocked,
            Some(at) => {
                self.process(at, msg, false, out);
                Step::Done
            }
            None => match msg.kind {
                MsgKind::PutS | MsgKind::PutM => {
                    self.wback(line, msg.src, out);
                    Step::Done
                }
                _ => match self.allocate(line, out) {
                    Some(at) => {
                        self.stats.misses += 1;
                        self.start_fill(at, line, Some(msg.clone()), out);
                        Step::Done
                    }
                    None => Step::Blocked,
                },
            },
        }
    }

    fn start_fill(&mut self, at: (usize, usize), line: u64, msg: Option<CohMsg>, out: &mut Vec<LlcEffect>) {
        let mut dir = DirEntry::valid();
        dir.state = DirState::BusyMem;
        self.sets[at.0][at.1] = Some(LlcLine {
            line,
            dir,
            data: vec![0; self.cfg.geom.line_bytes as usize],
            busy: Some(Busy { acks: 0, owner: None, owner_no_data: false, waiter: Waiter::Fill(msg) }),
        });
        self.stats.mem_reads += 1;
        out.push(LlcEffect::MemRead { line });
    }

    /// Frees a way for `line`. Returns `None` when a victim must first be
    /// recalled or every way is busy.
    fn allocate(&mut self, line: u64, out: &mut Vec<LlcEffect>) -> Option<(usize, usize)> {
        let set = self.cfg.geom.set_of(line);
        if let Some(w) = self.sets[set].iter().position(Option::is_none) {
            return Some((set, w));
        }
        let idle: Vec<usize> =
            (0..self.sets[set].len()).filter(|&w| self.sets[set][w].as_ref().is_some_and(|l| l.busy.is_none())).collect();
        // prefer victims that can leave without a recall
        let quiet: Vec<usize> = idle.iter().copied().filter(|&w| !self.get((set, w)).has_holders()).collect();
        let way = self.plru[set].victim(if quiet.is_empty() { idle } else { quiet })?;
        self.stats.evictions += 1;
        if self.get((set, way)).has_holders() {
            self.start_recall((set, way), Waiter::Recall(RecallFor::Evict), out);
            return None;
        }
        self.drop_line((set, way), out);
        Some((set, way))
    }

    fn drop_line(&mut self, at: (usize, usize), out: &mut Vec<LlcEffect>) {
        let l = self.sets[at.0][at.1].take().expect("line present");
        if l.dir.dirty {
            self.stats.mem_writes += 1;
            out.push(LlcEffect::MemWrite { line: l.line, data: l.data });
        }
    }

    /// Pulls every private copy back: FwdGetM to the owner, Inv to sharers.
    fn start_recall(&mut self, at: (usize, usize), waiter: Waiter, out: &mut Vec<LlcEffect>) {
        self.stats.recalls += 1;
        let (line, dir) = {
            let l = self.get(at);
            (l.line, l.dir)
        };
        let sharers: Vec<TileId> = dir.sharers.iter().collect();
        for s in &sharers {
            self.send(MsgKind::Inv, line, *s, MsgMeta::default(), None, out);
        }
        if let Some(o) = dir.owner {
            let meta = MsgMeta { requester: Some(self.tile), ..Default::default() };
            self.send(MsgKind::FwdGetM, line, o, meta, None, out);
        }
        let l = self.at(at);
        l.dir.state = DirState::BusyRecall;
        l.busy = Some(Busy { acks: sharers.len(), owner: dir.owner, owner_no_data: false, waiter });
    }

    fn touch(&mut self, at: (usize, usize)) {
        let ways = self.cfg.geom.ways as usize;
        self.plru[at.0].touch(at.1, ways);
    }

    /// A coherence request on a resident, non-busy line.
    fn process(&mut self, at: (usize, usize), msg: &CohMsg, after_fill: bool, out: &mut Vec<LlcEffect>) {
        self.touch(at);
        let req = msg.src;
        let (line, dir) = {
            let l = self.get(at);
            (l.line, l.dir)
        };
        if !after_fill && matches!(msg.kind, MsgKind::GetS | MsgKind::GetM) {
            if dir.state == DirState::V {
                self.stats.v_hits += 1;
            }
            if matches!(dir.state, DirState::V | DirState::S) {
                self.stats.hits += 1;
            }
        }
        match (msg.kind, dir.state) {
            (MsgKind::GetS, DirState::V) => {
                let grant = if self.cfg.grant_exclusive { Grant::Exclusive } else { Grant::Shared };
                self.data_rsp(at, req, grant, out);
                let d = &mut self.at(at).dir;
                if grant == Grant::Exclusive {
                    d.state = DirState::E;
                    d.owner = Some(req);
                } else {
                    d.state = DirState::S;
                    d.sharers.insert(req);
                }
            }
            (MsgKind::GetS, DirState::S) => {
                self.data_rsp(at, req, Grant::Shared, out);
                self.at(at).dir.sharers.insert(req);
            }
            (MsgKind::GetS, DirState::E | DirState::M) => {
                let owner = dir.owner.expect("owned line has an owner");
                let meta = MsgMeta { requester: Some(req), ..Default::default() };
                self.send(MsgKind::FwdGetS, line, owner, meta, None, out);
                let l = self.at(at);
                l.dir.state = DirState::BusyRecall;
                l.busy = Some(Busy { acks: 0, owner: Some(owner), owner_no_data: false, waiter: Waiter::GetS { req } });
            }
            (MsgKind::GetM, DirState::V) => {
                self.data_rsp(at, req, Grant::Modified, out);
                let d = &mut self.at(at).dir;
                d.state = DirState::M;
                d.owner = Some(req);
            }
            (MsgKind::GetM, DirState::S) => {
                let others: Vec<TileId> = dir.sharers.iter().filter(|&s| s != req).collect();
                for s in &others {
                    self.send(MsgKind::Inv, line, *s, MsgMeta::default(), None, out);
                }
                if others.is_empty() || self.cfg.fault == Some(Fault::SkipInvAck) {
                    self.data_rsp(at, req, Grant::Modified, out);
                    let d = &mut self.at(at).dir;
                    d.state = DirState::M;
                    d.sharers.clear();
                    d.owner = Some(req);
                } else {
                    let l = self.at(at);
                    l.dir.state = DirState::BusyRecall;
                    l.busy = Some(Busy { acks: others.len(), owner: None, owner_no_data: false, waiter: Waiter::GetM { req } });
                }
            }
            (MsgKind::GetM, DirState::E | DirState::M) => {
                let owner = dir.owner.expect("owned line has an owner");
                if self.cfg.fault == Some(Fault::DuplicateM) {
                    self.data_rsp(at, req, Grant::Modified, out);
                    self.at(at).dir.owner = Some(req);
                    return;
                }
                let meta = MsgMeta { requester: Some(req), ..Default::default() };
                self.send(MsgKind::FwdGetM, line, owner, meta, None, out);
                let l = self.at(at);
                l.dir.state = DirState::BusyRecall;
                l.busy = Some(Busy { acks: 0, owner: Some(owner), owner_no_data: false, waiter: Waiter::GetMFwd { req } });
            }
            (MsgKind::PutS, _) => {
                let d = &mut self.at(at).dir;
                if d.owner == Some(req) {
                    d.owner = None;
                    d.state = DirState::V;
                } else if d.sharers.contains(req) {
                    d.sharers.remove(req);
                    if d.sharers.is_empty() {
                        d.state = DirState::V;
                    }
                }
                self.wback(line, req, out);
            }
            (MsgKind::PutM, _) => {
                let l = self.at(at);
                if l.dir.owner == Some(req) {
                    if let Some(p) = &msg.payload {
                        l.data.clone_from(p);
                    }
                    l.dir.dirty |= msg.meta.dirty;
                    l.dir.owner = None;
                    l.dir.state = DirState::V;
                } else if l.dir.sharers.contains(req) {
                    l.dir.sharers.remove(req);
                    if l.dir.sharers.is_empty() {
                        l.dir.state = DirState::V;
                    }
                }
                self.wback(line, req, out);
            }
            (kind, state) => unreachable!("LLC request {kind:?} in {state:?}"),
        }
    }

    fn response(&mut self, msg: CohMsg, out: &mut Vec<LlcEffect>) -> Result<()> {
        let line = self.line_of(msg.addr.0);
        let busy_at = self.find(line).filter(|&at| self.get(at).busy.is_some());
        let Some(at) = busy_at else {
            if self.cfg.fault == Some(Fault::SkipInvAck) && msg.kind == MsgKind::InvAck {
                return Ok(());
            }
            return Err(Error::Protocol(format!(
                "LLC {}: {:?} from {} for {line:#x} with nothing outstanding",
                self.tile, msg.kind, msg.src
            )));
        };
        let l = self.at(at);
        let busy = l.busy.as_mut().unwrap();
        let from_owner = busy.owner == Some(msg.src);
        match msg.kind {
            MsgKind::DataRsp if from_owner => {
                if let Some(p) = msg.payload {
                    l.data = p;
                }
                l.dir.dirty |= msg.meta.dirty;
                busy.owner = None;
            }
            MsgKind::InvAck if from_owner => {
                busy.owner_no_data = msg.meta.no_data;
                busy.owner = None;
            }
            MsgKind::InvAck if busy.acks > 0 => busy.acks -= 1,
            MsgKind::InvAck if self.cfg.fault == Some(Fault::SkipInvAck) => return Ok(()),
            _ => return Err(Error::Protocol(format!("LLC {}: unexpected {:?} from {} for {line:#x}", self.tile, msg.kind, msg.src))),
        }
        if busy.acks == 0 && busy.owner.is_none() {
            self.complete(at, out);
        }
        Ok(())
    }

    fn complete(&mut self, at: (usize, usize), out: &mut Vec<LlcEffect>) {
        let l = self.at(at);
        let busy = l.busy.take().expect("completing a busy line");
        let prior_owner = l.dir.owner;
        match busy.waiter {
            Waiter::GetS { req } => {
                l.dir.state = DirState::S;
                l.dir.owner = None;
                l.dir.sharers.clear();
                l.dir.sharers.insert(req);
                if busy.owner_no_data {
                    self.data_rsp(at, req, Grant::Shared, out);
                } else if let Some(o) = prior_owner {
                    self.at(at).dir.sharers.insert(o);
                }
            }
            Waiter::GetM { req } => {
                l.dir.state = DirState::M;
                l.dir.sharers = Sharers::default();
                l.dir.owner = Some(req);
                self.data_rsp(at, req, Grant::Modified, out);
            }
            Waiter::GetMFwd { req } => {
                l.dir.state = DirState::M;
                l.dir.owner = Some(req);
                if busy.owner_no_data {
                    self.data_rsp(at, req, Grant::Modified, out);
                }
            }
            Waiter::Recall(for_) => {
                l.dir.state = DirState::V;
                l.dir.owner = None;
                l.dir.sharers.clear();
                if for_ == RecallFor::Evict {
                    self.drop_line(at, out);
                }
            }
            Waiter::Fill(_) => unreachable!("fills complete through mem_read_done"),
        }
        self.progress(out);
    }

    /// Data returned by memory for an earlier [`LlcEffect::MemRead`].
    pub fn mem_read_done(&mut self, line: u64, data: Vec<u8>, out: &mut Vec<LlcEffect>) -> Result<()> {
        let at = self
            .find(line)
            .filter(|&at| matches!(self.get(at).busy, Some(Busy { waiter: Waiter::Fill(_), .. })))
            .ok_or_else(|| Error::Protocol(format!("LLC {}: unexpected memory data for {line:#x}", self.tile)))?;
        let l = self.at(at);
        l.data = data;
        l.dir = DirEntry::valid();
        let Some(Busy { waiter: Waiter::Fill(msg), .. }) = l.busy.take() else { unreachable!() };
        if let Some(msg) = msg {
            self.process(at, &msg, true, out);
        }
        self.progress(out);
        Ok(())
    }

    /// Starts a flush triggered through the memory-mapped register.
    pub fn start_flush(&mut self, out: &mut Vec<LlcEffect>) {
        self.flushing = true;
        self.flush_progress(out);
    }

    fn flush_progress(&mut self, out: &mut Vec<LlcEffect>) {
        if !self.flushing {
            return;
        }
        let mut waiting = false;
        for s in 0..self.sets.len() {
            for w in 0..self.sets[s].len() {
                let Some(l) = self.sets[s][w].as_ref() else { continue };
                if l.busy.is_some() {
                    waiting = true;
                } else if l.dir.owner.is_none() {
                    let drop = self.cfg.flush_invalidates && !l.has_holders();
                    if l.dir.dirty {
                        let (line, data) = (l.line, l.data.clone());
                        self.stats.mem_writes += 1;
                        out.push(LlcEffect::MemWrite { line, data });
                        self.at((s, w)).dir.dirty = false;
                    }
                    if drop {
                        self.drop_line((s, w), out);
                    }
                }
            }
        }
        if !waiting {
            self.flushing = false;
            self.stats.flushes += 1;
            out.push(LlcEffect::FlushDone);
        }
    }
}
