//! Cycle engine tying tiles, cores and the mesh together.
//!
//! Each cycle runs in a fixed order: the mesh advances and hands out
//! packets, tiles handle them in delivery order, time-driven tile work runs,
//! cores issue, and finally every message produced during the cycle is
//! injected into the mesh.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adapter::{Adapter, AdapterStep, MemOp};
use super::config::{AccelMode, SocConfig, TileKind};
use super::core::{Core, CoreState};
use super::l1::L1Cache;
use super::memory::Memory;
use super::program::{Program, TraceProgram};
use super::stats::SocStats;
use super::tiles::{AccState, AccelTile, AuxStats, MemTile};
use super::trace::{Trace, TraceOp};
use crate::error::{Error, Result};
use crate::l2::{Access, CoreOp, CoreOutcome, CoreResp, CoreSideReq, L2Controller, L2Effect, WriteResp};
use crate::llc::{DmaBurst, LlcEffect, LlcSlice};
use crate::noc::{split_burst, BusRequest, Mesh, MmioMap, NocConfig, Proxy};
use crate::partition::AddressMap;
use crate::types::{CohMsg, DirEntry, LineState, MsgKind, MsgMeta, TileId, WORD_BYTES};
use crate::verify::monitor::{Holder, Monitor, ViolationKind};

pub(crate) enum Tile {
    Processor { core: usize, l2: L2Controller, l1_flush_done_at: Option<u64> },
    Memory(MemTile),
    Accelerator(AccelTile),
    Aux(AuxStats),
    Empty,
}

/// Outcome of [`Soc::run`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub cycles: u64,
    /// Every core finished and the system drained.
    pub completed: bool,
    pub violations: usize,
}

pub struct Soc {
    cfg: SocConfig,
    seed: u64,
    now: u64,
    mesh: Mesh,
    proxy: Proxy,
    tiles: Vec<Tile>,
    cores: Vec<Core>,
    memory: Memory,
    pub monitor: Monitor,
    outbox: Vec<CohMsg>,
    last_progress: u64,
    stuck: bool,
}

fn readable(s: LineState) -> bool {
    s.is_readable() || s == LineState::SmA
}

impl Soc {
    /// Builds the SoC. Core `i` runs `programs[i]`; cores without a program idle.
    pub fn new(cfg: SocConfig, programs: Vec<Box<dyn Program>>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let cpus = cfg.processor_tiles();
        if programs.len() > cpus.len() {
            return Err(Error::config(format!("{} programs for {} processor tiles", programs.len(), cpus.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = AddressMap::new(cfg.mem_size, cfg.memory_tiles());
        let proxy = Proxy::new(map.clone(), MmioMap::new(cfg.mmio_base, cfg.tile_count()));
        let mut noc = NocConfig::new(cfg.cols, cfg.rows);
        noc.queue_depth = cfg.queue_depth;
        noc.seed = rng.gen();
        let mut programs = programs.into_iter();
        let mut cores = Vec::new();
        let mut tiles = Vec::new();
        for (i, kind) in cfg.tiles.iter().enumerate() {
            let t = TileId(i);
            tiles.push(match kind {
                TileKind::Processor => {
                    let program = programs.next().unwrap_or_else(|| Box::new(TraceProgram::default()));
                    let start = if cfg.start_skew > 0 { rng.gen_range(0..cfg.start_skew) } else { 0 };
                    let jitter = (cfg.issue_jitter > 0).then(|| (ChaCha8Rng::seed_from_u64(rng.gen()), cfg.issue_jitter));
                    let id = cores.len();
                    cores.push(Core::new(id, t, program, L1Cache::new(cfg.l1, cfg.endian), start, jitter));
                    let mut l2cfg = cfg.l2;
                    l2cfg.endian = cfg.endian;
                    Tile::Processor { core: id, l2: L2Controller::new(t, l2cfg, map.clone()), l1_flush_done_at: None }
                }
                TileKind::Memory => {
                    let mut llc = cfg.llc;
                    llc.endian = cfg.endian;
                    Tile::Memory(MemTile::new(LlcSlice::new(t, llc)))
                }
                TileKind::Accelerator => {
                    let (mode, job) = cfg.accelerator(t).map_or((AccelMode::LlcCoherent, Vec::new()), |a| (a.mode, a.job.clone()));
                    let l2 = (mode == AccelMode::FullyCoherent).then(|| {
                        let mut l2cfg = cfg.l2;
                        l2cfg.endian = cfg.endian;
                        L2Controller::new(t, l2cfg, map.clone())
                    });
                    Tile::Accelerator(AccelTile::new(t, mode, job, l2))
                }
                TileKind::Auxiliary => Tile::Aux(AuxStats::default()),
                TileKind::Empty => Tile::Empty,
            });
        }
        Ok(Self {
            memory: Memory::new(cfg.mem_size, cfg.endian),
            cfg,
            seed,
            now: 0,
            mesh: Mesh::new(noc),
            proxy,
            tiles,
            cores,
            monitor: Monitor::new(),
            outbox: Vec::new(),
            last_progress: 0,
            stuck: false,
        })
    }

    /// Builds the SoC running a parsed trace; addresses are checked up front.
    pub fn with_trace(cfg: SocConfig, trace: &Trace, seed: u64) -> Result<Self> {
        for ops in &trace.cores {
            for op in ops {
                if let Some(a) = op.mem_addr() {
                    if a >= cfg.mem_size {
                        return Err(Error::AddressOutOfRange { addr: a, mem_size: cfg.mem_size });
                    }
                }
            }
        }
        let programs = trace.cores.iter().map(|ops| Box::new(TraceProgram::new(ops.clone())) as Box<dyn Program>).collect();
        Self::new(cfg, programs, seed)
    }

    pub fn config(&self) -> &SocConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_mut(&mut self) -> &mut Mesh {
        &mut self.mesh
    }

    pub fn memory(&self) -> &Memory {
        &self.memory
    }

    /// Writes memory before the run starts and tells the monitor about it.
    pub fn preload_word(&mut self, addr: u64, value: u64) {
        self.memory.write_word(addr, value);
        self.monitor.seed(addr, value);
    }

    pub fn l2(&self, tile: TileId) -> Option<&L2Controller> {
        match &self.tiles[tile.0] {
            Tile::Processor { l2, .. } => Some(l2),
            Tile::Accelerator(a) => a.l2.as_ref(),
            _ => None,
        }
    }

    pub fn mem_tile(&self, tile: TileId) -> Option<&MemTile> {
        match &self.tiles[tile.0] {
            Tile::Memory(m) => Some(m),
            _ => None,
        }
    }

    pub fn accelerator(&self, tile: TileId) -> Option<&AccelTile> {
        match &self.tiles[tile.0] {
            Tile::Accelerator(a) => Some(a),
            _ => None,
        }
    }

    pub(crate) fn aux_stats(&self) -> AuxStats {
        self.tiles
            .iter()
            .find_map(|t| match t {
                Tile::Aux(s) => Some(s.clone()),
                _ => None,
            })
            .unwrap_or_default()
    }

    pub(crate) fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn home(&self, addr: u64) -> TileId {
        self.proxy.map.home(addr)
    }

    pub fn mmio_register(&self, tile: TileId, offset: u64) -> u64 {
        self.proxy.mmio.register(tile, offset)
    }

    /// Directory entry for the line holding `addr` at its home slice.
    pub fn dir_entry(&self, addr: u64) -> DirEntry {
        let line = self.line_of(addr);
        self.mem_tile(self.home(addr)).expect("home is a memory tile").llc.dir_entry(line)
    }

    fn line_of(&self, addr: u64) -> u64 {
        self.cfg.l2.geom.line_of(addr)
    }

    /// Current coherent value of a word: the owning cache, else the LLC, else memory.
    pub fn read_coherent(&self, addr: u64) -> u64 {
        for t in 0..self.tiles.len() {
            if let Some(v) = self.l2(TileId(t)).and_then(|l2| l2.owned_word(addr)) {
                return v;
            }
        }
        if let Some(v) = self.mem_tile(self.home(addr)).and_then(|m| m.llc.peek_word(addr)) {
            return v;
        }
        self.memory.read_word(addr)
    }

    pub fn stats(&self) -> SocStats {
        SocStats::collect(self)
    }

    /// All cores done, accelerators idle and no message or transaction in flight.
    pub fn is_finished(&self) -> bool {
        self.cores.iter().all(Core::is_done) && self.is_drained()
    }

    fn is_drained(&self) -> bool {
        self.mesh.is_idle()
            && self.outbox.is_empty()
            && self.tiles.iter().all(|t| match t {
                Tile::Processor { l2, l1_flush_done_at, .. } => {
                    l1_flush_done_at.is_none() && !l2.flush_in_progress() && l2.mshrs().iter().all(|m| m.atomic_open)
                }
                Tile::Memory(m) => m.is_idle(),
                Tile::Accelerator(a) => a.is_idle(),
                _ => true,
            })
    }

    /// Runs until finished, stuck, or `max_cycles` elapse.
    pub fn run(&mut self, max_cycles: u64) -> Result<RunSummary> {
        while !self.is_finished() && !self.stuck && self.now < max_cycles {
            self.step()?;
        }
        Ok(RunSummary { cycles: self.now, completed: self.is_finished(), violations: self.monitor.violations.len() })
    }

    pub fn is_stuck(&self) -> bool {
        self.stuck
    }

    /// Advances the whole SoC by one cycle.
    pub fn step(&mut self) -> Result<()> {
        self.now += 1;
        for d in self.mesh.step(self.now) {
            self.deliver(d.msg)?;
        }
        self.tick_tiles()?;
        for c in 0..self.cores.len() {
            self.step_core(c)?;
        }
        let now = self.now;
        for msg in std::mem::take(&mut self.outbox) {
            self.mesh.inject(msg, now);
        }
        self.watchdog();
        Ok(())
    }

    fn watchdog(&mut self) {
        if self.now - self.last_progress <= self.cfg.watchdog || self.is_finished() {
            return;
        }
        let waiting: Vec<String> = self
            .cores
            .iter()
            .filter(|c| !c.is_done())
            .map(|c| format!("core {} on {}", c.id, c.current.map_or("-".into(), |o| o.to_string())))
            .collect();
        let addr = self.cores.iter().find_map(|c| c.current.and_then(|o| o.mem_addr())).unwrap_or(0);
        let kind = if self.mesh.is_idle() { ViolationKind::LostMessage } else { ViolationKind::Deadlock };
        let what = format!(
            "no progress for {} cycles; {} packet(s) in flight; waiting: {}",
            self.cfg.watchdog,
            self.mesh.in_flight(),
            if waiting.is_empty() { "none".into() } else { waiting.join(", ") }
        );
        self.monitor.stuck(kind, self.now, addr, what);
        self.stuck = true;
    }

    fn progress(&mut self) {
        self.last_progress = self.now;
    }

    fn send(&mut self, msg: CohMsg) {
        self.outbox.push(msg);
    }

    fn mmio_reply(&mut self, to: &CohMsg, value: u64) {
        let meta = MsgMeta { value, ..Default::default() };
        self.send(CohMsg::new(MsgKind::MmioRsp, to.addr.0, to.dst, to.src).with_meta(meta));
    }

    fn check_swmr(&mut self, line: u64) {
        let mut holders = Vec::new();
        for (i, t) in self.tiles.iter().enumerate() {
            let (l2, l1) = match t {
                Tile::Processor { core, l2, .. } => (l2, Some(&self.cores[*core].l1)),
                Tile::Accelerator(AccelTile { l2: Some(l2), .. }) => (l2, None),
                _ => continue,
            };
            let s = l2.line_state(line);
            let in_l1 = l1.is_some_and(|l1| l1.contains(line));
            if readable(s) || s.is_writable() || in_l1 {
                holders.push(Holder { tile: TileId(i), readable: readable(s) || in_l1, writable: s.is_writable() });
            }
        }
        self.monitor.swmr(self.now, line, &holders);
    }

    fn deliver(&mut self, msg: CohMsg) -> Result<()> {
        let t = msg.dst;
        let line = self.line_of(msg.addr.0);
        match &self.tiles[t.0] {
            Tile::Processor { .. } => self.deliver_processor(msg)?,
            Tile::Memory(_) => self.deliver_memory(msg)?,
            Tile::Accelerator(_) => self.deliver_accelerator(msg)?,
            Tile::Aux(_) => self.deliver_aux(msg),
            Tile::Empty => return Err(Error::Protocol(format!("packet delivered to empty tile {t}: {msg:?}"))),
        }
        self.check_swmr(line);
        Ok(())
    }

    fn deliver_processor(&mut self, msg: CohMsg) -> Result<()> {
        let t = msg.dst;
        match msg.kind {
            MsgKind::MmioRsp => self.core_mmio_response(t, msg.meta.value),
            MsgKind::Irq => {
                let c = self.core_at(t);
                self.cores[c].irqs += 1;
                self.cores[c].stats.irqs += 1;
            }
            MsgKind::MmioRead | MsgKind::MmioWrite => self.mmio_reply(&msg, 0),
            _ => {
                let mut effs = Vec::new();
                if let Tile::Processor { l2, .. } = &mut self.tiles[t.0] {
                    l2.handle_msg(msg, self.now, &mut effs)?;
                }
                self.l2_effects(t, effs)?;
            }
        }
        Ok(())
    }

    fn core_at(&self, t: TileId) -> usize {
        match &self.tiles[t.0] {
            Tile::Processor { core, .. } => *core,
            _ => unreachable!("{t} is not a processor tile"),
        }
    }

    /// Applies the effects of an L2 on `tile`, including effects they cause in turn.
    fn l2_effects(&mut self, tile: TileId, effs: Vec<L2Effect>) -> Result<()> {
        let mut queue = std::collections::VecDeque::from(effs);
        while let Some(e) = queue.pop_front() {
            match e {
                L2Effect::Send(m) => {
                    if matches!(m.kind, MsgKind::PutM | MsgKind::PutS) {
                        if let Tile::Processor { l1_flush_done_at: Some(_), .. } = &self.tiles[tile.0] {
                            self.monitor.flush_order(self.now, tile, m.addr.0);
                        }
                    }
                    self.send(m);
                }
                L2Effect::Snoop { line, perm } => {
                    if let Tile::Processor { core, .. } = &self.tiles[tile.0] {
                        let c = *core;
                        self.cores[c].l1.snoop(line, perm);
                    }
                }
                L2Effect::Perform(a) => {
                    self.monitor.access(self.now, &a, false);
                }
                L2Effect::L1Flush => {
                    let now = self.now;
                    let mut more = Vec::new();
                    match &mut self.tiles[tile.0] {
                        Tile::Processor { core, l2, l1_flush_done_at } => {
                            let l1 = &mut self.cores[*core].l1;
                            let lines = l1.valid_lines() as u64;
                            l1.flush();
                            if lines == 0 {
                                l2.l1_flush_done(&mut more);
                            } else {
                                *l1_flush_done_at = Some(now + lines);
                            }
                        }
                        Tile::Accelerator(AccelTile { l2: Some(l2), .. }) => l2.l1_flush_done(&mut more),
                        _ => {}
                    }
                    queue.extend(more);
                }
                L2Effect::Respond { req, resp } => match &self.tiles[tile.0] {
                    Tile::Processor { core, .. } => {
                        let c = *core;
                        self.core_response(c, req, resp)?;
                    }
                    Tile::Accelerator(_) => self.accel_response(tile, req, resp),
                    _ => {}
                },
            }
        }
        Ok(())
    }

    fn deliver_memory(&mut self, msg: CohMsg) -> Result<()> {
        let t = msg.dst;
        let now = self.now;
        let lat = self.cfg.mem_latency;
        let Tile::Memory(m) = &mut self.tiles[t.0] else { unreachable!() };
        let mut effs = Vec::new();
        match msg.kind {
            MsgKind::MmioWrite => {
                let off = self.proxy.mmio.decode(msg.addr.0).map_or(u64::MAX, |(_, o)| o);
                if off == MmioMap::FLUSH && msg.meta.value != 0 {
                    m.flushing = true;
                    m.stats.flushes += 1;
                    m.llc.start_flush(&mut effs);
                }
                self.mmio_reply(&msg, 0);
            }
            MsgKind::MmioRead => {
                let off = self.proxy.mmio.decode(msg.addr.0).map_or(u64::MAX, |(_, o)| o);
                let v = if off == MmioMap::STATUS { m.flush_status(now) } else { 0 };
                self.mmio_reply(&msg, v);
            }
            MsgKind::DmaReadBurst | MsgKind::DmaWriteBurst if msg.meta.non_coherent => {
                m.stats.bypass_bursts += 1;
                m.bypass.push_back((now + lat, DmaBurst::from_msg(&msg)?));
            }
            _ => m.llc.handle_msg(msg, &mut effs)?,
        }
        self.llc_effects(t, effs);
        Ok(())
    }

    fn llc_effects(&mut self, tile: TileId, effs: Vec<LlcEffect>) {
        let now = self.now;
        let lat = self.cfg.mem_latency;
        for e in effs {
            match e {
                LlcEffect::Send(m) => self.send(m),
                LlcEffect::Perform(a) => self.monitor.access(now, &a, false),
                LlcEffect::MemRead { line } => {
                    let Tile::Memory(m) = &mut self.tiles[tile.0] else { unreachable!() };
                    m.stats.reads += 1;
                    m.reads.push_back((now + lat, line));
                }
                LlcEffect::MemWrite { line, data } => {
                    self.memory.write(line, &data);
                    let Tile::Memory(m) = &mut self.tiles[tile.0] else { unreachable!() };
                    m.stats.writes += 1;
                    m.flush_done_at = m.flush_done_at.max(now + lat);
                }
                LlcEffect::FlushDone => {
                    let Tile::Memory(m) = &mut self.tiles[tile.0] else { unreachable!() };
                    m.flushing = false;
                    m.flush_done_at = m.flush_done_at.max(now);
                }
            }
        }
    }

    fn deliver_accelerator(&mut self, msg: CohMsg) -> Result<()> {
        let t = msg.dst;
        let now = self.now;
        match msg.kind {
            MsgKind::MmioWrite => {
                let off = self.proxy.mmio.decode(msg.addr.0).map_or(u64::MAX, |(_, o)| o);
                let Tile::Accelerator(a) = &mut self.tiles[t.0] else { unreachable!() };
                if off == MmioMap::ACC_START && a.state == AccState::Idle {
                    a.invoker = Some(msg.src);
                    a.stats.jobs += 1;
                    self.accel_start(t, 0);
                }
                self.mmio_reply(&msg, 0);
            }
            MsgKind::MmioRead => {
                let Tile::Accelerator(a) = &self.tiles[t.0] else { unreachable!() };
                let v = u64::from(a.state == AccState::Idle);
                self.mmio_reply(&msg, v);
            }
            MsgKind::DmaRsp => {
                let endian = self.cfg.endian;
                let Tile::Accelerator(a) = &mut self.tiles[t.0] else { unreachable!() };
                if let Some(p) = &msg.payload {
                    for (i, w) in p.chunks(WORD_BYTES as usize).enumerate() {
                        a.reads.push((msg.addr.0 + i as u64 * WORD_BYTES, endian.read_word(w)));
                    }
                    a.stats.bytes_read += p.len() as u64;
                } else {
                    a.stats.bytes_written += msg.meta.value;
                }
                if let AccState::Transfer { desc, outstanding } = a.state {
                    let left = outstanding.saturating_sub(msg.meta.value);
                    a.state = if left == 0 {
                        AccState::Compute { desc, until: now + a.job[desc].compute }
                    } else {
                        AccState::Transfer { desc, outstanding: left }
                    };
                }
                self.progress();
            }
            _ => {
                let mut effs = Vec::new();
                if let Tile::Accelerator(AccelTile { l2: Some(l2), .. }) = &mut self.tiles[t.0] {
                    l2.handle_msg(msg, now, &mut effs)?;
                }
                self.l2_effects(t, effs)?;
            }
        }
        Ok(())
    }

    /// Starts transfer `desc` of the job, or raises the completion interrupt.
    fn accel_start(&mut self, t: TileId, desc: usize) {
        let aux = self.cfg.aux_tile();
        let Tile::Accelerator(a) = &mut self.tiles[t.0] else { unreachable!() };
        let Some(d) = a.job.get(desc).copied() else {
            a.state = AccState::Idle;
            let invoker = a.invoker.take().unwrap_or(t);
            let meta = MsgMeta { value: invoker.0 as u64, ..Default::default() };
            self.send(CohMsg::new(MsgKind::Irq, 0, t, aux).with_meta(meta));
            return;
        };
        if a.mode == AccelMode::FullyCoherent {
            a.state = AccState::Word { desc, word: 0, waiting: false };
            return;
        }
        a.state = AccState::Transfer { desc, outstanding: d.len };
        let burst = if d.write {
            let mut data = vec![0u8; d.len as usize];
            for w in data.chunks_mut(WORD_BYTES as usize) {
                self.cfg.endian.write_word(w, d.value);
            }
            DmaBurst::write(t, d.base, data)
        } else {
            DmaBurst::read(t, d.base, d.len)
        };
        let non_coherent = a.mode == AccelMode::NonCoherent;
        a.stats.bursts += 1;
        for piece in split_burst(&burst, &self.proxy.map) {
            let mut msg = piece.to_msg(self.proxy.map.home(piece.base));
            msg.meta.non_coherent = non_coherent;
            self.send(msg);
        }
    }

    fn accel_response(&mut self, t: TileId, req: CoreSideReq, resp: CoreResp) {
        let Tile::Accelerator(a) = &mut self.tiles[t.0] else { unreachable!() };
        if let AccState::Word { desc, word, .. } = a.state {
            if let CoreResp::Data(v) = resp {
                a.reads.push((req.addr.0, v));
                a.stats.bytes_read += WORD_BYTES;
            } else {
                a.stats.bytes_written += WORD_BYTES;
            }
            a.state = AccState::Word { desc, word: word + 1, waiting: false };
            self.last_progress = self.now;
        }
    }

    fn deliver_aux(&mut self, msg: CohMsg) {
        match msg.kind {
            MsgKind::Irq => {
                let target = TileId(msg.meta.value as usize);
                let aux = msg.dst;
                let Tile::Aux(s) = &mut self.tiles[aux.0] else { unreachable!() };
                s.irqs_received += 1;
                if self.cfg.tiles.get(target.0) == Some(&TileKind::Processor) {
                    s.resumes_sent += 1;
                    self.send(CohMsg::new(MsgKind::Irq, 0, aux, target));
                }
            }
            MsgKind::MmioRead | MsgKind::MmioWrite => self.mmio_reply(&msg, 0),
            _ => {}
        }
    }

    fn tick_tiles(&mut self) -> Result<()> {
        let now = self.now;
        for t in 0..self.tiles.len() {
            let tile = TileId(t);
            match &mut self.tiles[t] {
                Tile::Processor { l2, l1_flush_done_at, .. } => {
                    let mut effs = Vec::new();
                    if l1_flush_done_at.is_some_and(|at| at <= now) {
                        *l1_flush_done_at = None;
                        l2.l1_flush_done(&mut effs);
                    }
                    l2.tick(now, &mut effs);
                    if !effs.is_empty() {
                        self.l2_effects(tile, effs)?;
                    }
                }
                Tile::Memory(m) => {
                    let mut effs = Vec::new();
                    let mut bursts = Vec::new();
                    while m.reads.front().is_some_and(|(at, _)| *at <= now) {
                        let (_, line) = m.reads.pop_front().unwrap();
                        let data = self.memory.read(line, self.cfg.l2.geom.line_bytes as usize);
                        m.llc.mem_read_done(line, data, &mut effs)?;
                    }
                    while m.bypass.front().is_some_and(|(at, _)| *at <= now) {
                        bursts.push(m.bypass.pop_front().unwrap().1);
                    }
                    self.llc_effects(tile, effs);
                    for b in bursts {
                        self.serve_bypass(tile, b);
                    }
                }
                Tile::Accelerator(_) => self.tick_accelerator(tile)?,
                _ => {}
            }
        }
        Ok(())
    }

    /// A non-coherent burst served straight from backing memory.
    fn serve_bypass(&mut self, tile: TileId, b: DmaBurst) {
        let now = self.now;
        let mut payload = Vec::new();
        let mut a = b.base;
        while a < b.end() {
            let value = if b.write {
                let v = self.cfg.endian.read_word(&b.data.as_ref().unwrap()[(a - b.base) as usize..]);
                self.memory.write_word(a, v);
                v
            } else {
                let v = self.memory.read_word(a);
                payload.extend_from_slice(&self.memory.read(a, WORD_BYTES as usize));
                v
            };
            self.monitor.access(now, &Access { tile: b.src, addr: a, value, write: b.write }, true);
            a += WORD_BYTES;
        }
        let Tile::Memory(m) = &mut self.tiles[tile.0] else { unreachable!() };
        if b.write {
            m.stats.writes += 1;
        } else {
            m.stats.reads += 1;
        }
        let meta = MsgMeta { value: b.len, ..Default::default() };
        let mut rsp = CohMsg::new(MsgKind::DmaRsp, b.base, tile, b.src).with_meta(meta);
        if !b.write {
            rsp.payload = Some(payload);
        }
        self.send(rsp);
    }

    fn tick_accelerator(&mut self, t: TileId) -> Result<()> {
        let now = self.now;
        let Tile::Accelerator(a) = &mut self.tiles[t.0] else { unreachable!() };
        match a.state {
            AccState::Compute { desc, until } if now >= until => {
                a.stats.compute_cycles += a.job[desc].compute;
                self.progress();
                self.accel_start(t, desc + 1);
            }
            AccState::Word { desc, word, waiting: false } => {
                let d = a.job[desc];
                if word * WORD_BYTES >= d.len {
                    a.state = AccState::Compute { desc, until: now + d.compute };
                    return Ok(());
                }
                let addr = d.base + word * WORD_BYTES;
                let req = if d.write { CoreSideReq::store(addr, d.value) } else { CoreSideReq::load(addr) };
                let mut effs = Vec::new();
                let l2 = a.l2.as_mut().expect("fully coherent accelerator has an L2");
                let outcome = l2.handle_core_request(&req, now, &mut effs)?;
                if outcome == CoreOutcome::Pending {
                    a.state = AccState::Word { desc, word, waiting: true };
                }
                self.l2_effects(t, effs)?;
                if let CoreOutcome::Done(resp) = outcome {
                    self.accel_response(t, req, resp);
                }
                self.check_swmr(self.line_of(addr));
            }
            _ => {}
        }
        if let Tile::Accelerator(AccelTile { l2: Some(l2), .. }) = &mut self.tiles[t.0] {
            let mut effs = Vec::new();
            l2.tick(now, &mut effs);
            if !effs.is_empty() {
                self.l2_effects(t, effs)?;
            }
        }
        Ok(())
    }

    fn step_core(&mut self, c: usize) -> Result<()> {
        let now = self.now;
        let core = &mut self.cores[c];
        match core.state {
            CoreState::Done => {}
            CoreState::WaitL2(_) | CoreState::WaitMmio { .. } => core.stats.wait_cycles += 1,
            CoreState::WaitIrq => {
                if core.irqs > 0 {
                    core.irqs -= 1;
                    core.retire(None, now);
                    self.progress();
                }
            }
            CoreState::PollRetry(addr, want) => {
                if now >= core.ready_at {
                    self.send_mmio(c, MsgKind::MmioRead, addr, 0, Some((addr, want)));
                }
            }
            CoreState::Issue(adapter) => {
                core.stats.wait_cycles += 1;
                self.issue(c, adapter)?;
            }
            CoreState::Ready => {
                if now < core.ready_at {
                    return Ok(());
                }
                match core.fetch() {
                    None => {
                        core.state = CoreState::Done;
                        core.stats.finished_at = now;
                        self.progress();
                    }
                    Some(op) => self.start_op(c, op)?,
                }
            }
        }
        Ok(())
    }

    fn start_op(&mut self, c: usize, op: TraceOp) -> Result<()> {
        let now = self.now;
        if let Some(a) = op.mem_addr() {
            if a >= self.cfg.mem_size {
                return Err(Error::AddressOutOfRange { addr: a, mem_size: self.cfg.mem_size });
            }
        }
        let line = op.mem_addr().map(|a| self.line_of(a));
        let core = &mut self.cores[c];
        match op {
            TraceOp::Load(a) if !core.lr_open => {
                core.stats.loads += 1;
                if let Some(v) = core.l1.load(a) {
                    let access = Access { tile: core.tile, addr: a, value: v, write: false };
                    core.retire(Some(v), now);
                    self.monitor.access(now, &access, false);
                    self.progress();
                    return Ok(());
                }
            }
            TraceOp::Load(_) => core.stats.loads += 1,
            TraceOp::Store(..) => core.stats.stores += 1,
            TraceOp::Amo(..) | TraceOp::Lr(_) => {
                core.l1.invalidate(line.unwrap());
            }
            TraceOp::Fence | TraceOp::Nop => {
                core.retire(None, now);
                self.progress();
                return Ok(());
            }
            TraceOp::MmioWrite(a, v) => {
                self.send_mmio(c, MsgKind::MmioWrite, a, v, None);
                return Ok(());
            }
            TraceOp::MmioRead(a) => {
                self.send_mmio(c, MsgKind::MmioRead, a, 0, None);
                return Ok(());
            }
            TraceOp::Poll(a, v) => {
                self.send_mmio(c, MsgKind::MmioRead, a, 0, Some((a, v)));
                return Ok(());
            }
            TraceOp::WaitIrq => {
                core.state = CoreState::WaitIrq;
                return Ok(());
            }
            _ => {}
        }
        let mem_op = MemOp::from_trace(&op).expect("memory operation");
        let tag = c as u32 + 1;
        self.issue(c, Adapter::new(mem_op, tag))
    }

    fn send_mmio(&mut self, c: usize, kind: MsgKind, addr: u64, value: u64, poll: Option<(u64, u64)>) {
        let core = &mut self.cores[c];
        core.stats.mmio += 1;
        core.state = CoreState::WaitMmio { read: kind == MsgKind::MmioRead, poll };
        let src = core.tile;
        let mut req = BusRequest::new(kind, addr, src);
        req.meta.value = value;
        let msg = self.proxy.inject(req);
        if msg.dst == src {
            // own tile, or an unmapped register answered by the proxy
            self.core_mmio_response(src, 0);
        } else {
            self.send(msg);
        }
    }

    fn core_mmio_response(&mut self, t: TileId, value: u64) {
        let c = self.core_at(t);
        let now = self.now;
        let core = &mut self.cores[c];
        let CoreState::WaitMmio { read, poll } = core.state else { return };
        match poll {
            Some((addr, want)) if value != want => {
                core.state = CoreState::PollRetry(addr, want);
                core.ready_at = now + 4;
            }
            Some(_) => core.retire(None, now),
            None => core.retire(read.then_some(value), now),
        }
        self.progress();
    }

    fn issue(&mut self, c: usize, adapter: Adapter) -> Result<()> {
        let now = self.now;
        let tile = self.cores[c].tile;
        let req = adapter.request();
        let mut effs = Vec::new();
        let outcome = match &mut self.tiles[tile.0] {
            Tile::Processor { l2, .. } => l2.handle_core_request(&req, now, &mut effs)?,
            _ => unreachable!(),
        };
        self.cores[c].state = match outcome {
            CoreOutcome::Pending => CoreState::WaitL2(adapter),
            CoreOutcome::Stalled => CoreState::Issue(adapter),
            CoreOutcome::Done(_) => CoreState::WaitL2(adapter),
        };
        self.l2_effects(tile, effs)?;
        if let CoreOutcome::Done(resp) = outcome {
            self.core_response(c, req, resp)?;
        }
        if req.op != CoreOp::FlushL2 {
            self.check_swmr(self.line_of(req.addr.0));
        }
        Ok(())
    }

    fn core_response(&mut self, c: usize, req: CoreSideReq, resp: CoreResp) -> Result<()> {
        let now = self.now;
        let tile = self.cores[c].tile;
        let CoreState::WaitL2(mut adapter) = self.cores[c].state else {
            return Err(Error::Protocol(format!("core {c} got {resp:?} with nothing outstanding")));
        };
        let addr = req.addr.0;
        let line = self.line_of(addr);
        let step = adapter.complete(resp)?;
        match step {
            AdapterStep::Next => {
                self.monitor.amo_begin(tile, addr);
                self.cores[c].state = CoreState::Issue(adapter);
                return Ok(());
            }
            AdapterStep::Finished(value) => {
                match adapter.op() {
                    MemOp::Load(_) => {
                        let fill = if self.cores[c].lr_open { None } else { self.l2(tile).and_then(|l2| l2.line_data(line)) };
                        let core = &mut self.cores[c];
                        core.lr_open = false;
                        if let Some(data) = fill {
                            core.l1.fill(line, data);
                        }
                    }
                    MemOp::Store(a, v) => {
                        let core = &mut self.cores[c];
                        core.lr_open = false;
                        core.l1.store(a, v);
                    }
                    MemOp::Amo(..) => {
                        self.cores[c].stats.amos += 1;
                        self.monitor.amo_end(tile);
                    }
                    MemOp::Lr(a) => {
                        self.cores[c].lr_open = true;
                        self.monitor.lr_done(tile, a);
                    }
                    MemOp::Sc(a, v) => {
                        let core = &mut self.cores[c];
                        core.lr_open = false;
                        if resp == CoreResp::Write(WriteResp::ExOkay) {
                            core.stats.sc_success += 1;
                            core.l1.store(a, v);
                            self.monitor.sc_success(now, tile, a);
                        } else {
                            core.stats.sc_failure += 1;
                            self.monitor.sc_failure(tile);
                        }
                    }
                    MemOp::Ifetch(_) | MemOp::Flush => {}
                }
                self.cores[c].retire(value, now);
                self.progress();
            }
        }
        Ok(())
    }
}
