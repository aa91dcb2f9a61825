//! Write-through, no-write-allocate L1 data cache.
//!
//! The L1 never holds the only copy of dirty data, so the L2 can keep it
//! coherent with data-less `MakeInvalid` snoops.

use serde::Serialize;

use crate::types::{CacheGeometry, Endianness, Perm, Plru};

#[derive(Debug, Clone, Default, Serialize)]
pub struct L1Stats {
    pub hits: u64,
    pub misses: u64,
    pub fills: u64,
    pub snoop_invalidations: u64,
    pub snoop_ignored: u64,
    pub icache_invalidations: u64,
    pub flushes: u64,
}

#[derive(Debug, Clone)]
struct L1Line {
    line: u64,
    data: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct L1Cache {
    geom: CacheGeometry,
    endian: Endianness,
    sets: Vec<Vec<Option<L1Line>>>,
    plru: Vec<Plru>,
    pub stats: L1Stats,
}

impl L1Cache {
    pub fn new(geom: CacheGeometry, endian: Endianness) -> Self {
        Self {
            geom,
            endian,
            sets: vec![vec![None; geom.ways as usize]; geom.sets as usize],
            plru: vec![Plru::default(); geom.sets as usize],
            stats: L1Stats::default(),
        }
    }

    fn find(&self, line: u64) -> Option<(usize, usize)> {
        let set = self.geom.set_of(line);
        self.sets[set].iter().position(|l| l.as_ref().is_some_and(|l| l.line == line)).map(|w| (set, w))
    }

    pub fn contains(&self, addr: u64) -> bool {
        self.find(self.geom.line_of(addr)).is_some()
    }

    pub fn valid_lines(&self) -> usize {
        self.sets.iter().flatten().flatten().count()
    }

    /// Word at `addr` on a hit.
    pub fn load(&mut self, addr: u64) -> Option<u64> {
        match self.find(self.geom.line_of(addr)) {
            Some((s, w)) => {
                self.stats.hits += 1;
                self.plru[s].touch(w, self.geom.ways as usize);
                let l = self.sets[s][w].as_ref().unwrap();
                Some(self.endian.read_word(&l.data[self.geom.offset_of(addr)..]))
            }
            None => {
                self.stats.misses += 1;
                None
            }
        }
    }

    /// Installs a line just read through the L2.
    pub fn fill(&mut self, line: u64, data: Vec<u8>) {
        self.stats.fills += 1;
        let set = self.geom.set_of(line);
        let way = match self.find(line) {
            Some((_, w)) => w,
            None => match self.sets[set].iter().position(Option::is_none) {
                Some(w) => w,
                None => self.plru[set].victim(0..self.geom.ways as usize).unwrap_or(0),
            },
        };
        self.sets[set][way] = Some(L1Line { line, data });
        self.plru[set].touch(way, self.geom.ways as usize);
    }

    /// Write-through update; lines not present are not allocated.
    pub fn store(&mut self, addr: u64, value: u64) {
        if let Some((s, w)) = self.find(self.geom.line_of(addr)) {
            let off = self.geom.offset_of(addr);
            let l = self.sets[s][w].as_mut().unwrap();
            self.endian.write_word(&mut l.data[off..], value);
        }
    }

    /// Local invalidation, used before an atomic leaves the core.
    pub fn invalidate(&mut self, line: u64) -> bool {
        match self.find(line) {
            Some((s, w)) => {
                self.sets[s][w] = None;
                true
            }
            None => false,
        }
    }

    /// `MakeInvalid` from the L2. Instruction-side snoops leave the
    /// instruction cache alone and are only counted.
    pub fn snoop(&mut self, line: u64, perm: Perm) {
        if perm.contains(Perm::INSTRUCTION) {
            self.stats.icache_invalidations += 1;
        }
        if perm.contains(Perm::DATA) {
            if self.invalidate(line) {
                self.stats.snoop_invalidations += 1;
            } else {
                self.stats.snoop_ignored += 1;
            }
        }
    }

    pub fn flush(&mut self) {
        self.stats.flushes += 1;
        for l in self.sets.iter_mut().flatten() {
            *l = None;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l1() -> L1Cache {
        L1Cache::new(CacheGeometry::new(16, 4, 2).unwrap(), Endianness::Little)
    }

    fn line(v: u64) -> Vec<u8> {
        let mut d = vec![0; 16];
        Endianness::Little.write_word(&mut d, v);
        d
    }

    #[test]
    fn snoop_hit_invalidates() {
        let mut c = l1();
        c.fill(0x40, line(5));
        assert_eq!(c.load(0x40), Some(5));
        c.snoop(0x40, Perm::DATA);
        assert_eq!(c.load(0x40), None);
        assert_eq!(c.stats.snoop_invalidations, 1);
    }

    #[test]
    fn snoop_miss_is_ignored() {
        let mut c = l1();
        c.snoop(0x40, Perm::DATA);
        assert_eq!((c.stats.snoop_ignored, c.stats.snoop_invalidations), (1, 0));
    }

    #[test]
    fn instruction_snoop_changes_nothing() {
        let mut c = l1();
        c.fill(0x40, line(5));
        c.snoop(0x40, Perm::INSTRUCTION);
        assert_eq!(c.stats.icache_invalidations, 1);
        assert_eq!(c.load(0x40), Some(5));
    }

    #[test]
    fn write_through_without_allocation() {
        let mut c = l1();
        c.store(0x40, 9);
        assert!(!c.contains(0x40));
        c.fill(0x40, line(1));
        c.store(0x48, 9);
        assert_eq!(c.load(0x48), Some(9));
    }

    #[test]
    fn flush_empties() {
        let mut c = l1();
        c.fill(0x40, line(1));
        c.fill(0x50, line(1));
        assert_eq!(c.valid_lines(), 2);
        c.flush();
        assert_eq!(c.valid_lines(), 0);
    }
}
