//! Exhaustive state-space exploration of a tiny system.
//!
//! The real L2 and LLC controllers are driven directly, without the mesh or
//! a clock. Every in-flight message sits in a FIFO per (source, destination,
//! plane), and any FIFO head may be delivered next, so the search covers every
//! delivery order the network could produce. Data values are drawn from
//! {0, 1, 2}, which keeps the space finite. Each core issues a bounded number
//! of operations chosen nondeterministically from an operation set.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashSet, VecDeque};
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::l2::{Access, CoreResp, L2Config, L2Controller, L2Effect, WriteResp};
use crate::llc::{Fault, LlcConfig, LlcEffect, LlcSlice};
use crate::partition::AddressMap;
use crate::soc::adapter::{Adapter, AdapterStep, MemOp};
use crate::types::{AtomicOp, CacheGeometry, CohMsg, LineState, TileId};

/// Which operations cores may issue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct OpSet {
    pub load: bool,
    pub store: bool,
    pub amo: bool,
    pub lrsc: bool,
}

impl OpSet {
    pub const ALL: OpSet = OpSet { load: true, store: true, amo: true, lrsc: true };
}

impl FromStr for OpSet {
    type Err = Error;

    /// Comma-separated subset of `load,store,amo,lrsc`.
    fn from_str(s: &str) -> Result<Self> {
        let mut set = OpSet::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "load" => set.load = true,
                "store" => set.store = true,
                "amo" => set.amo = true,
                "lrsc" => set.lrsc = true,
                other => return Err(Error::Usage(format!("unknown operation class `{other}`"))),
            }
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExploreConfig {
    pub cores: usize,
    pub addrs: Vec<u64>,
    pub ops: OpSet,
    /// Operations each core issues before stopping (an LR/SC pair counts once).
    pub ops_per_core: u8,
    /// Values written by stores, swaps and SCs.
    pub values: Vec<u64>,
    pub l2_ways: u32,
    pub llc_ways: u32,
    pub grant_exclusive: bool,
    #[serde(skip)]
    pub fault: Option<Fault>,
    pub max_states: usize,
}

impl ExploreConfig {
    pub fn new(cores: usize, addrs: Vec<u64>, ops: OpSet) -> Self {
        Self {
            cores,
            addrs,
            ops,
            ops_per_core: 2,
            values: vec![1, 2],
            l2_ways: 1,
            llc_ways: 1,
            grant_exclusive: false,
            fault: None,
            max_states: 10_000_000,
        }
    }

    const LINE: u32 = 16;
    const MEM: u64 = 256;

    fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.cores) {
            return Err(Error::Usage("exploration supports 1 or 2 cores".into()));
        }
        if self.addrs.is_empty() || self.addrs.len() > 2 {
            return Err(Error::Usage("exploration supports 1 or 2 addresses".into()));
        }
        if let Some(a) = self.addrs.iter().find(|&&a| a % 8 != 0 || a >= Self::MEM) {
            return Err(Error::Usage(format!("address {a:#x} must be word aligned and below {:#x}", Self::MEM)));
        }
        if self.values.iter().any(|&v| v > 2) {
            return Err(Error::Usage("values are abstracted to {0, 1, 2}".into()));
        }
        if self.ops == OpSet::default() {
            return Err(Error::Usage("empty operation set".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum CoreSt {
    Idle,
    /// LR done: the next operation is an SC to this address.
    AfterLr(u64),
    Issue(Adapter),
    Wait(Adapter),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct State {
    l2s: Vec<L2Controller>,
    llc: LlcSlice,
    chans: BTreeMap<(usize, usize, u8), VecDeque<CohMsg>>,
    mem_reads: VecDeque<u64>,
    memory: BTreeMap<u64, Vec<u8>>,
    cores: Vec<CoreSt>,
    left: Vec<u8>,
    /// Latest value written to each address.
    shadow: BTreeMap<u64, u64>,
    /// Open atomic per core: (address, another core wrote it since).
    open: Vec<Option<(u64, bool)>>,
}

impl State {
    fn busy(&self) -> bool {
        self.chans.values().any(|q| !q.is_empty())
            || !self.mem_reads.is_empty()
            || self.cores.iter().any(|c| matches!(c, CoreSt::Issue(_) | CoreSt::Wait(_)))
    }

    fn fingerprint(&self) -> u128 {
        let mut a = DefaultHasher::new();
        self.hash(&mut a);
        let mut b = DefaultHasher::new();
        0x9e37_79b9_u32.hash(&mut b);
        self.hash(&mut b);
        (u128::from(a.finish()) << 64) | u128::from(b.finish())
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ExploreReport {
    pub states: usize,
    pub transitions: u64,
    /// States with no pending work and every core finished.
    pub terminal: usize,
    pub deadlocks: usize,
    pub violations: usize,
    /// Descriptions of the first few deadlocks and violations.
    pub examples: Vec<String>,
    /// States in which an L2 holds forwards behind an open atomic.
    pub xmw_stall_states: usize,
    /// False when the state bound stopped the search early.
    pub complete: bool,
    /// Unexplored states left when the bound was hit.
    pub frontier: usize,
}

impl ExploreReport {
    pub fn clean(&self) -> bool {
        self.complete && self.deadlocks == 0 && self.violations == 0
    }

    fn note(&mut self, what: String) {
        if self.examples.len() < 8 {
            self.examples.push(what);
        }
    }
}

struct Explorer<'a> {
    cfg: &'a ExploreConfig,
    llc_tile: usize,
    line_bytes: u64,
}

type Step = std::result::Result<State, String>;

impl Explorer<'_> {
    fn initial(&self) -> State {
        let line = CacheGeometry::new(ExploreConfig::LINE, 1, self.cfg.l2_ways).expect("explorer L2 geometry");
        let map = AddressMap::new(ExploreConfig::MEM, vec![TileId(self.llc_tile)]);
        let l2s = (0..self.cfg.cores).map(|c| L2Controller::new(TileId(c), L2Config::new(line), map.clone())).collect();
        let mut llc_cfg = LlcConfig::new(CacheGeometry::new(ExploreConfig::LINE, 1, self.cfg.llc_ways).expect("explorer LLC geometry"));
        llc_cfg.grant_exclusive = self.cfg.grant_exclusive;
        llc_cfg.fault = self.cfg.fault;
        State {
            l2s,
            llc: LlcSlice::new(TileId(self.llc_tile), llc_cfg),
            chans: BTreeMap::new(),
            mem_reads: VecDeque::new(),
            memory: BTreeMap::new(),
            cores: vec![CoreSt::Idle; self.cfg.cores],
            left: vec![self.cfg.ops_per_core; self.cfg.cores],
            shadow: BTreeMap::new(),
            open: vec![None; self.cfg.cores],
        }
    }

    fn choices(&self, st: &State, c: usize) -> Vec<MemOp> {
        if let CoreSt::AfterLr(a) = st.cores[c] {
            return self.cfg.values.iter().map(|&v| MemOp::Sc(a, v)).collect();
        }
        if st.cores[c] != CoreSt::Idle || st.left[c] == 0 {
            return Vec::new();
        }
        let ops = self.cfg.ops;
        let mut v = Vec::new();
        for &a in &self.cfg.addrs {
            if ops.load {
                v.push(MemOp::Load(a));
            }
            for &x in &self.cfg.values {
                if ops.store {
                    v.push(MemOp::Store(a, x));
                }
                if ops.amo {
                    v.push(MemOp::Amo(AtomicOp::Swap, a, x));
                }
            }
            if ops.lrsc {
                v.push(MemOp::Lr(a));
            }
        }
        v
    }

    fn successors(&self, st: &State) -> Vec<Step> {
        let mut out = Vec::new();
        for c in 0..self.cfg.cores {
            for op in self.choices(st, c) {
                let mut n = st.clone();
                if !matches!(op, MemOp::Sc(..)) {
                    n.left[c] -= 1;
                }
                out.push(self.issue(n, c, Adapter::new(op, 1)));
            }
            if let CoreSt::Issue(a) = st.cores[c] {
                out.push(self.issue(st.clone(), c, a));
            }
            if st.l2s[c].holds_forwards() {
                let mut n = st.clone();
                let mut effs = Vec::new();
                n.l2s[c].expire_hold(&mut effs);
                out.push(self.l2_effects(n, c, effs));
            }
        }
        for (&key, q) in &st.chans {
            if q.is_empty() {
                continue;
            }
            let mut n = st.clone();
            let msg = n.chans.get_mut(&key).unwrap().pop_front().unwrap();
            if n.chans[&key].is_empty() {
                n.chans.remove(&key);
            }
            out.push(self.deliver(n, msg));
        }
        if !st.mem_reads.is_empty() {
            let mut n = st.clone();
            let line = n.mem_reads.pop_front().unwrap();
            let data = n.memory.get(&line).cloned().unwrap_or_else(|| vec![0; ExploreConfig::LINE as usize]);
            let mut effs = Vec::new();
            out.push(match n.llc.mem_read_done(line, data, &mut effs) {
                Ok(()) => self.llc_effects(n, effs),
                Err(e) => Err(e.to_string()),
            });
        }
        out
    }

    fn issue(&self, mut n: State, c: usize, a: Adapter) -> Step {
        let req = a.request();
        let mut effs = Vec::new();
        let outcome = n.l2s[c].handle_core_request(&req, 0, &mut effs).map_err(|e| e.to_string())?;
        n.cores[c] = match outcome {
            crate::l2::CoreOutcome::Stalled => CoreSt::Issue(a),
            _ => CoreSt::Wait(a),
        };
        if let crate::l2::CoreOutcome::Done(resp) = outcome {
            effs.push(L2Effect::Respond { req, resp });
        }
        self.l2_effects(n, c, effs)
    }

    fn send(&self, n: &mut State, m: CohMsg) {
        n.chans.entry((m.src.0, m.dst.0, m.kind.plane().0)).or_default().push_back(m);
    }

    fn perform(&self, n: &mut State, a: &Access) -> std::result::Result<(), String> {
        let c = a.tile.0;
        if a.write {
            n.shadow.insert(a.addr, a.value);
            for (o, open) in n.open.iter_mut().enumerate() {
                if let Some((addr, broken)) = open {
                    if o != c && *addr / self.line_bytes == a.addr / self.line_bytes {
                        *broken = true;
                    }
                }
            }
        } else {
            let want = n.shadow.get(&a.addr).copied().unwrap_or(0);
            if a.value != want {
                return Err(format!("data value: tile {} read {} at {:#x}, latest write is {want}", c, a.value, a.addr));
            }
        }
        Ok(())
    }

    fn l2_effects(&self, mut n: State, c: usize, effs: Vec<L2Effect>) -> Step {
        let mut queue = VecDeque::from(effs);
        while let Some(e) = queue.pop_front() {
            match e {
                L2Effect::Send(m) => self.send(&mut n, m),
                L2Effect::Snoop { .. } => {}
                L2Effect::L1Flush => {
                    let mut more = Vec::new();
                    n.l2s[c].l1_flush_done(&mut more);
                    queue.extend(more);
                }
                L2Effect::Perform(a) => self.perform(&mut n, &a)?,
                L2Effect::Respond { resp, .. } => self.complete(&mut n, c, resp)?,
            }
        }
        Ok(n)
    }

    fn complete(&self, n: &mut State, c: usize, resp: CoreResp) -> std::result::Result<(), String> {
        let CoreSt::Wait(mut a) = n.cores[c] else {
            return Err(format!("core {c} got {resp:?} with nothing outstanding"));
        };
        let step = a.complete(resp).map_err(|e| e.to_string())?;
        let op = a.op();
        match step {
            AdapterStep::Next => {
                n.open[c] = op.addr().map(|x| (x, false));
                n.cores[c] = CoreSt::Issue(a);
            }
            AdapterStep::Finished(_) => {
                n.cores[c] = CoreSt::Idle;
                match op {
                    MemOp::Amo(_, addr, _) => {
                        if n.open[c].take().is_some_and(|(_, broken)| broken) {
                            return Err(format!("atomicity: AMO of core {c} at {addr:#x} was interleaved with a remote write"));
                        }
                    }
                    MemOp::Lr(addr) => {
                        n.open[c] = Some((addr, false));
                        n.cores[c] = CoreSt::AfterLr(addr);
                    }
                    MemOp::Sc(addr, _) => {
                        let broken = n.open[c].take().is_some_and(|(_, b)| b);
                        if resp == CoreResp::Write(WriteResp::ExOkay) && broken {
                            return Err(format!("atomicity: SC of core {c} at {addr:#x} succeeded after a remote write"));
                        }
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    fn llc_effects(&self, mut n: State, effs: Vec<LlcEffect>) -> Step {
        for e in effs {
            match e {
                LlcEffect::Send(m) => self.send(&mut n, m),
                LlcEffect::MemRead { line } => n.mem_reads.push_back(line),
                LlcEffect::MemWrite { line, data } => {
                    n.memory.insert(line, data);
                }
                LlcEffect::Perform(a) => self.perform(&mut n, &a)?,
                LlcEffect::FlushDone => {}
            }
        }
        Ok(n)
    }

    fn deliver(&self, mut n: State, msg: CohMsg) -> Step {
        let dst = msg.dst.0;
        if dst == self.llc_tile {
            let mut effs = Vec::new();
            n.llc.handle_msg(msg, &mut effs).map_err(|e| e.to_string())?;
            self.llc_effects(n, effs)
        } else {
            let mut effs = Vec::new();
            n.l2s[dst].handle_msg(msg, 0, &mut effs).map_err(|e| e.to_string())?;
            self.l2_effects(n, dst, effs)
        }
    }

    /// Invariants every reachable state must satisfy.
    fn check(&self, st: &State) -> std::result::Result<(), String> {
        st.llc.check_invariants()?;
        let mut lines: Vec<u64> = self.cfg.addrs.iter().map(|a| a / self.line_bytes * self.line_bytes).collect();
        lines.dedup();
        for line in lines {
            let states: Vec<LineState> = st.l2s.iter().map(|l2| l2.line_state(line)).collect();
            let writers = states.iter().filter(|s| s.is_writable()).count();
            let readers = states.iter().filter(|s| s.is_readable() || **s == LineState::SmA).count();
            if writers > 1 || (writers == 1 && readers > 1) {
                return Err(format!("SWMR: line {line:#x} held as {states:?}"));
            }
        }
        Ok(())
    }

    fn xmw_stall(&self, st: &State) -> bool {
        st.l2s.iter().any(|l2| l2.mshrs().iter().any(|m| m.atomic_open && !m.stalled.is_empty()))
    }
}

/// Breadth-first search to a fixpoint or the state bound.
pub fn explore(cfg: &ExploreConfig) -> Result<ExploreReport> {
    cfg.validate()?;
    let ex = Explorer { cfg, llc_tile: cfg.cores, line_bytes: u64::from(ExploreConfig::LINE) };
    let start = ex.initial();
    let mut seen: HashSet<u128> = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(start.fingerprint());
    queue.push_back(start);
    let mut report = ExploreReport::default();
    while let Some(st) = queue.pop_front() {
        report.states += 1;
        if let Err(e) = ex.check(&st) {
            report.violations += 1;
            report.note(e);
            continue;
        }
        if ex.xmw_stall(&st) {
            report.xmw_stall_states += 1;
        }
        let next = ex.successors(&st);
        let mut moved = false;
        for s in next {
            report.transitions += 1;
            match s {
                Err(e) => {
                    report.violations += 1;
                    report.note(e);
                }
                Ok(s) if s == st => {}
                Ok(s) => {
                    moved = true;
                    if seen.insert(s.fingerprint()) {
                        queue.push_back(s);
                    }
                }
            }
        }
        if !moved {
            if st.busy() {
                report.deadlocks += 1;
                let cores: Vec<String> = st.cores.iter().map(|c| format!("{c:?}")).collect();
                report.note(format!(
                    "deadlock: cores [{}], {} message(s) in flight",
                    cores.join(", "),
                    st.chans.values().map(VecDeque::len).sum::<usize>()
                ));
            } else {
                report.terminal += 1;
            }
        }
        if seen.len() > cfg.max_states {
            report.frontier = queue.len();
            return Ok(report);
        }
    }
    report.complete = true;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(ops: &str) -> ExploreConfig {
        ExploreConfig::new(2, vec![0x0], ops.parse().unwrap())
    }

    #[test]
    fn load_store_is_clean() {
        let r = explore(&cfg("load,store")).unwrap();
        assert!(r.clean(), "{r:?}");
        assert!(r.terminal > 0);
    }

    #[test]
    fn amo_pairs_are_clean_and_stall_forwards() {
        let r = explore(&cfg("load,amo")).unwrap();
        assert!(r.clean(), "{r:?}");
        assert!(r.xmw_stall_states > 0);
    }

    #[test]
    fn skipped_inv_ack_is_caught() {
        let mut c = cfg("load,store");
        c.fault = Some(Fault::SkipInvAck);
        let r = explore(&c).unwrap();
        assert!(r.violations > 0, "{r:?}");
    }

    #[test]
    fn duplicate_m_is_caught() {
        let mut c = cfg("store");
        c.fault = Some(Fault::DuplicateM);
        assert!(explore(&c).unwrap().violations > 0);
    }

    #[test]
    fn bound_gives_partial_report() {
        let mut c = cfg("load,store");
        c.max_states = 10;
        let r = explore(&c).unwrap();
        assert!(!r.complete);
        assert!(r.frontier > 0);
    }

    #[test]
    fn op_set_parsing() {
        assert_eq!("load,store,amo,lrsc".parse::<OpSet>().unwrap(), OpSet::ALL);
        assert!("load,jump".parse::<OpSet>().is_err());
        assert!(explore(&ExploreConfig::new(3, vec![0], OpSet::ALL)).is_err());
    }
}
