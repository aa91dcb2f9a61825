//! Global coherence monitors fed by the simulator.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::Serialize;

use crate::l2::Access;
use crate::types::TileId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ViolationKind {
    Swmr,
    DataValue,
    Atomicity,
    LostMessage,
    Deadlock,
    StaleDma,
    /// An L2 wrote back data before its L1 reported the flush done.
    FlushOrder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub cycle: u64,
    pub addr: u64,
    /// Description followed by the most recent monitored events.
    pub narrative: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at cycle {} addr {:#x}: {}", self.kind, self.cycle, self.addr, self.narrative)
    }
}

/// How one cache holds a line, for the single-writer check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Holder {
    pub tile: TileId,
    pub readable: bool,
    pub writable: bool,
}

const HISTORY: usize = 12;

#[derive(Debug, Clone, Default)]
pub struct Monitor {
    shadow: BTreeMap<u64, u64>,
    /// Write count and last writer per word.
    writes: BTreeMap<u64, (u64, TileId)>,
    amo_open: BTreeMap<TileId, u64>,
    reservations: BTreeMap<TileId, (u64, u64)>,
    swmr_bad: BTreeSet<u64>,
    history: VecDeque<String>,
    pub violations: Vec<Violation>,
    pub accesses: u64,
}

impl Monitor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets the value a word holds before any write is observed.
    pub fn seed(&mut self, addr: u64, value: u64) {
        self.shadow.insert(addr, value);
    }

    /// Value of the most recent observed write (or seed) to `addr`.
    pub fn expected(&self, addr: u64) -> u64 {
        self.shadow.get(&addr).copied().unwrap_or(0)
    }

    /// Words written at least once, with their latest value.
    pub fn image(&self) -> &BTreeMap<u64, u64> {
        &self.shadow
    }

    fn note(&mut self, line: String) {
        if self.history.len() == HISTORY {
            self.history.pop_front();
        }
        self.history.push_back(line);
    }

    fn report(&mut self, kind: ViolationKind, cycle: u64, addr: u64, what: String) {
        let mut narrative = what;
        if !self.history.is_empty() {
            narrative += "; recent: ";
            narrative += &self.history.iter().cloned().collect::<Vec<_>>().join(" | ");
        }
        log::warn!("{kind:?} at cycle {cycle} addr {addr:#x}");
        self.violations.push(Violation { kind, cycle, addr, narrative });
    }

    /// A read or write performed at its serialization point. `bypass` marks
    /// accesses that go straight to backing memory.
    pub fn access(&mut self, cycle: u64, a: &Access, bypass: bool) {
        self.accesses += 1;
        let verb = if a.write { "W" } else { "R" };
        self.note(format!("{cycle}:{}:{verb}[{:#x}]={}", a.tile, a.addr, a.value));
        if a.write {
            if let Some((&other, _)) = self.amo_open.iter().find(|(t, addr)| **t != a.tile && **addr == a.addr) {
                self.report(ViolationKind::Atomicity, cycle, a.addr, format!("{} wrote inside the atomic of {other}", a.tile));
            }
            self.shadow.insert(a.addr, a.value);
            let e = self.writes.entry(a.addr).or_insert((0, a.tile));
            e.0 += 1;
            e.1 = a.tile;
        } else {
            let want = self.expected(a.addr);
            if a.value != want {
                let kind = if bypass { ViolationKind::StaleDma } else { ViolationKind::DataValue };
                self.report(kind, cycle, a.addr, format!("{} read {} but the latest write is {}", a.tile, a.value, want));
            }
        }
    }

    pub fn amo_begin(&mut self, tile: TileId, addr: u64) {
        self.amo_open.insert(tile, addr);
    }

    pub fn amo_end(&mut self, tile: TileId) {
        self.amo_open.remove(&tile);
    }

    pub fn lr_done(&mut self, tile: TileId, addr: u64) {
        let n = self.writes.get(&addr).map_or(0, |w| w.0);
        self.reservations.insert(tile, (addr, n));
    }

    /// A successful SC; its own write has already been observed.
    pub fn sc_success(&mut self, cycle: u64, tile: TileId, addr: u64) {
        let Some((raddr, n)) = self.reservations.remove(&tile) else {
            self.report(ViolationKind::Atomicity, cycle, addr, format!("{tile} SC succeeded without an LR"));
            return;
        };
        let (count, last) = self.writes.get(&addr).copied().unwrap_or((0, tile));
        if raddr != addr || count != n + 1 || last != tile {
            self.report(
                ViolationKind::Atomicity,
                cycle,
                addr,
                format!("{tile} SC succeeded although {} other write(s) followed its LR", count.saturating_sub(n + 1)),
            );
        }
    }

    pub fn sc_failure(&mut self, tile: TileId) {
        self.reservations.remove(&tile);
    }

    /// Checks single-writer/multiple-reader for `line`; reports only on the
    /// transition into a bad state.
    pub fn swmr(&mut self, cycle: u64, line: u64, holders: &[Holder]) {
        let writers: Vec<_> = holders.iter().filter(|h| h.writable).collect();
        let bad = match writers.as_slice() {
            [] => false,
            [w] => holders.iter().any(|h| h.tile != w.tile && h.readable),
            _ => true,
        };
        if bad {
            if self.swmr_bad.insert(line) {
                let who: Vec<String> = holders.iter().map(|h| format!("{}{}", h.tile, if h.writable { "(W)" } else { "(R)" })).collect();
                self.report(ViolationKind::Swmr, cycle, line, format!("line held by {}", who.join(", ")));
            }
        } else {
            self.swmr_bad.remove(&line);
        }
    }

    pub fn flush_order(&mut self, cycle: u64, tile: TileId, line: u64) {
        self.report(ViolationKind::FlushOrder, cycle, line, format!("{tile} wrote back before its L1 finished flushing"));
    }

    pub fn stuck(&mut self, kind: ViolationKind, cycle: u64, addr: u64, what: String) {
        self.report(kind, cycle, addr, what);
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(tile: usize, addr: u64, value: u64) -> Access {
        Access { tile: TileId(tile), addr, value, write: true }
    }

    fn r(tile: usize, addr: u64, value: u64) -> Access {
        Access { tile: TileId(tile), addr, value, write: false }
    }

    #[test]
    fn reads_must_see_latest_write() {
        let mut m = Monitor::new();
        m.access(1, &r(0, 8, 0), false);
        m.access(2, &w(0, 8, 5), false);
        m.access(3, &r(1, 8, 5), false);
        assert!(m.violations.is_empty());
        m.access(4, &r(1, 8, 0), false);
        m.access(5, &r(2, 8, 0), true);
        assert_eq!(m.count(ViolationKind::DataValue), 1);
        assert_eq!(m.count(ViolationKind::StaleDma), 1);
    }

    #[test]
    fn swmr_reports_once_per_episode() {
        let mut m = Monitor::new();
        let h = |t, wr| Holder { tile: TileId(t), readable: true, writable: wr };
        m.swmr(1, 0x40, &[h(0, false), h(1, false)]);
        assert!(m.violations.is_empty());
        m.swmr(2, 0x40, &[h(0, true), h(1, true)]);
        m.swmr(3, 0x40, &[h(0, true), h(1, true)]);
        assert_eq!(m.count(ViolationKind::Swmr), 1);
        m.swmr(4, 0x40, &[h(0, true)]);
        m.swmr(5, 0x40, &[h(0, true), h(1, false)]);
        assert_eq!(m.count(ViolationKind::Swmr), 2);
    }

    #[test]
    fn remote_write_inside_amo_breaks_atomicity() {
        let mut m = Monitor::new();
        m.amo_begin(TileId(0), 8);
        m.access(1, &w(1, 8, 3), false);
        m.amo_end(TileId(0));
        assert_eq!(m.count(ViolationKind::Atomicity), 1);
    }

    #[test]
    fn sc_success_needs_untouched_reservation() {
        let mut m = Monitor::new();
        m.lr_done(TileId(0), 8);
        m.access(1, &w(0, 8, 1), false);
        m.sc_success(1, TileId(0), 8);
        assert!(m.violations.is_empty());
        m.lr_done(TileId(0), 8);
        m.access(2, &w(1, 8, 7), false);
        m.access(3, &w(0, 8, 1), false);
        m.sc_success(3, TileId(0), 8);
        assert_eq!(m.count(ViolationKind::Atomicity), 1);
    }
}
