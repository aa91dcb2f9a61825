//! Synthetic workloads: random traces and data-driven programs.
//!
//! Programs are state machines that see the result of their previous
//! operation, so spin loops, locks and graph traversal run against the
//! simulated memory rather than a precomputed schedule.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::soc::{Program, Trace, TraceOp};
use crate::types::{AtomicOp, WORD_BYTES};

/// Random loads, stores, AMOs and LR/SC pairs over `lines` shared lines.
pub fn random_mix(cores: usize, total_ops: usize, lines: u64, line_bytes: u64, seed: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Trace::new(vec![Vec::new(); cores]);
    let words = line_bytes / WORD_BYTES;
    let per_core = total_ops / cores;
    for ops in &mut trace.cores {
        while ops.len() < per_core {
            let addr = rng.gen_range(0..lines) * line_bytes + rng.gen_range(0..words) * WORD_BYTES;
            let value = rng.gen_range(1..1000);
            let op = match rng.gen_range(0..100) {
                0..=44 => TraceOp::Load(addr),
                45..=79 => TraceOp::Store(addr, value),
                80..=91 => TraceOp::Amo(AtomicOp::ALL[rng.gen_range(0..AtomicOp::ALL.len())], addr, value),
                _ if per_core - ops.len() >= 2 => {
                    ops.push(TraceOp::Lr(addr));
                    TraceOp::Sc(addr, value)
                }
                _ => TraceOp::Load(addr),
            };
            ops.push(op);
        }
    }
    trace
}

/// `n` AMOADD(+1) operations on one word.
pub fn amo_counter(addr: u64, n: usize) -> Vec<TraceOp> {
    vec![TraceOp::Amo(AtomicOp::Add, addr, 1); n]
}

/// Increments a plain counter `n` times under an LR/SC spinlock.
#[derive(Debug, Clone)]
pub struct SpinlockIncrement {
    lock: u64,
    counter: u64,
    left: usize,
    step: Spin,
}

#[derive(Debug, Clone, Copy)]
enum Spin {
    Lr,
    Sc,
    CheckSc,
    Load,
    Store,
    Release,
}

impl SpinlockIncrement {
    pub fn new(lock: u64, counter: u64, n: usize) -> Self {
        Self { lock, counter, left: n, step: Spin::Lr }
    }
}

impl Program for SpinlockIncrement {
    fn next_op(&mut self, last: Option<u64>) -> Option<TraceOp> {
        loop {
            let (op, next) = match self.step {
                Spin::Lr if self.left == 0 => return None,
                Spin::Lr => (Some(TraceOp::Lr(self.lock)), Spin::Sc),
                Spin::Sc if last != Some(0) => (None, Spin::Lr),
                Spin::Sc => (Some(TraceOp::Sc(self.lock, 1)), Spin::CheckSc),
                Spin::CheckSc if last != Some(0) => (None, Spin::Lr),
                Spin::CheckSc => (Some(TraceOp::Load(self.counter)), Spin::Load),
                Spin::Load => (Some(TraceOp::Store(self.counter, last.unwrap_or(0) + 1)), Spin::Store),
                Spin::Store => (Some(TraceOp::Store(self.lock, 0)), Spin::Release),
                Spin::Release => {
                    self.left -= 1;
                    (None, Spin::Lr)
                }
            };
            self.step = next;
            if op.is_some() {
                return op;
            }
        }
    }
}

/// Workloads that split a fixed amount of work over a number of threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Workload {
    /// Level-synchronous breadth-first search on a random graph.
    Bfs,
    /// Independent per-thread partitions of an array, no sharing.
    Parallel,
    /// All work inside one global AMO-based lock.
    Serial,
}

impl FromStr for Workload {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bfs" => Ok(Workload::Bfs),
            "parallel" => Ok(Workload::Parallel),
            "serial" => Ok(Workload::Serial),
            other => Err(Error::Usage(format!("unknown workload `{other}` (bfs, parallel, serial)"))),
        }
    }
}

/// Programs plus the memory image they expect.
pub struct Instance {
    pub programs: Vec<Box<dyn Program>>,
    pub init: Vec<(u64, u64)>,
}

impl Workload {
    pub fn instance(self, threads: usize, seed: u64) -> Instance {
        match self {
            Workload::Bfs => {
                let g = Graph::random(512, 4, seed);
                let layout = BfsLayout::new(&g, threads);
                let init = layout.init(&g);
                let programs = (0..threads).map(|t| Box::new(BfsThread::new(layout, t)) as Box<dyn Program>).collect();
                Instance { programs, init }
            }
            Workload::Parallel => {
                let items = 1024;
                let programs = (0..threads)
                    .map(|t| {
                        let lo = items * t / threads;
                        let hi = items * (t + 1) / threads;
                        let mut ops = Vec::new();
                        for i in lo..hi {
                            let a = 0x1_0000 + i as u64 * WORD_BYTES;
                            ops.push(TraceOp::Load(a));
                            ops.extend([TraceOp::Nop; 4]);
                            ops.push(TraceOp::Store(a, i as u64));
                        }
                        Box::new(crate::soc::TraceProgram::new(ops)) as Box<dyn Program>
                    })
                    .collect();
                Instance { programs, init: Vec::new() }
            }
            Workload::Serial => {
                let sections = 256;
                let programs = (0..threads)
                    .map(|t| {
                        let n = sections * (t + 1) / threads - sections * t / threads;
                        Box::new(LockedSections::new(0x100, 0x200, n)) as Box<dyn Program>
                    })
                    .collect();
                Instance { programs, init: Vec::new() }
            }
        }
    }
}

/// Critical sections guarded by an AMOSWAP test-and-set lock.
#[derive(Debug, Clone)]
struct LockedSections {
    lock: u64,
    data: u64,
    left: usize,
    step: u8,
}

impl LockedSections {
    fn new(lock: u64, data: u64, n: usize) -> Self {
        Self { lock, data, left: n, step: 0 }
    }
}

impl Program for LockedSections {
    fn next_op(&mut self, last: Option<u64>) -> Option<TraceOp> {
        let op = match self.step {
            0 if self.left == 0 => return None,
            0 => TraceOp::Amo(AtomicOp::Swap, self.lock, 1),
            1 if last != Some(0) => {
                self.step = 0;
                return self.next_op(None);
            }
            1 => TraceOp::Load(self.data),
            2 => TraceOp::Store(self.data, last.unwrap_or(0) + 1),
            3..=26 => TraceOp::Nop,
            _ => {
                self.left -= 1;
                self.step = 0;
                return Some(TraceOp::Store(self.lock, 0));
            }
        };
        self.step += 1;
        Some(op)
    }
}

/// A directed graph in compressed sparse row form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    pub row: Vec<u64>,
    pub col: Vec<u64>,
}

impl Graph {
    /// `n` vertices, each with `degree` random out-edges plus an edge to its
    /// successor so every vertex is reachable from vertex 0.
    pub fn random(n: usize, degree: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut row = vec![0];
        let mut col = Vec::new();
        for v in 0..n {
            col.push(((v + 1) % n) as u64);
            for _ in 0..degree {
                col.push(rng.gen_range(0..n) as u64);
            }
            row.push(col.len() as u64);
        }
        Self { row, col }
    }

    pub fn vertices(&self) -> usize {
        self.row.len() - 1
    }

    /// BFS levels from vertex 0, computed on the host.
    pub fn levels(&self) -> Vec<Option<u64>> {
        let mut level = vec![None; self.vertices()];
        level[0] = Some(0);
        let mut frontier = vec![0usize];
        let mut d = 0;
        while !frontier.is_empty() {
            d += 1;
            let mut next = Vec::new();
            for v in frontier {
                for &u in &self.col[self.row[v] as usize..self.row[v + 1] as usize] {
                    if level[u as usize].is_none() {
                        level[u as usize] = Some(d);
                        next.push(u as usize);
                    }
                }
            }
            frontier = next;
        }
        level
    }
}

/// Addresses of the BFS data structures.
#[derive(Debug, Clone, Copy)]
pub struct BfsLayout {
    pub threads: usize,
    pub vertices: u64,
    pub row: u64,
    pub col: u64,
    pub visited: u64,
    pub frontier: [u64; 2],
    pub count: [u64; 3],
    pub barrier: u64,
}

impl BfsLayout {
    pub fn new(g: &Graph, threads: usize) -> Self {
        let n = g.vertices() as u64;
        let row = 0x1_0000;
        let col = row + (n + 1) * WORD_BYTES;
        let visited = col + g.col.len() as u64 * WORD_BYTES;
        let f0 = visited + n * WORD_BYTES;
        let f1 = f0 + n * WORD_BYTES;
        // counters on separate lines
        let counters = (f1 + n * WORD_BYTES + 0x3f) & !0x3f;
        Self {
            threads,
            vertices: n,
            row,
            col,
            visited,
            frontier: [f0, f1],
            count: [counters, counters + 0x40, counters + 0x80],
            barrier: counters + 0xc0,
        }
    }

    /// Graph arrays, the root in the first frontier and the root marked visited.
    pub fn init(&self, g: &Graph) -> Vec<(u64, u64)> {
        let mut v = Vec::new();
        for (i, &r) in g.row.iter().enumerate() {
            v.push((self.row + i as u64 * WORD_BYTES, r));
        }
        for (i, &c) in g.col.iter().enumerate() {
            v.push((self.col + i as u64 * WORD_BYTES, c));
        }
        v.push((self.visited, 1));
        v.push((self.frontier[0], 0));
        v.push((self.count[0], 1));
        v
    }
}

#[derive(Debug, Clone, Copy)]
enum Bfs {
    Start,
    Count,
    Vertex,
    RowStart,
    RowEnd,
    Edge,
    Visit,
    Claim,
    Push,
    Arrive,
    Arrived,
    Spin,
    Next,
    Done,
}

/// One thread of a level-synchronous BFS.
///
/// Each level, thread `t` takes frontier entries `t, t + T, ...`, claims
/// unvisited neighbours with AMOSWAP, appends them to the next frontier
/// through an AMOADD counter, and waits at a counting barrier.
#[derive(Debug, Clone)]
pub struct BfsThread {
    l: BfsLayout,
    t: usize,
    level: u64,
    step: Bfs,
    n: u64,
    i: u64,
    v: u64,
    j: u64,
    end: u64,
    u: u64,
}

impl BfsThread {
    pub fn new(layout: BfsLayout, t: usize) -> Self {
        Self { l: layout, t, level: 0, step: Bfs::Start, n: 0, i: 0, v: 0, j: 0, end: 0, u: 0 }
    }

    fn w(base: u64, i: u64) -> u64 {
        base + i * WORD_BYTES
    }

    fn cur(&self) -> usize {
        (self.level % 2) as usize
    }
}

impl Program for BfsThread {
    fn next_op(&mut self, last: Option<u64>) -> Option<TraceOp> {
        let mut last = last;
        loop {
            let l = self.l;
            let lv = self.level as usize;
            let (op, next) = match self.step {
                Bfs::Start if self.t == 0 => (Some(TraceOp::Store(l.count[(lv + 2) % 3], 0)), Bfs::Count),
                Bfs::Start => (None, Bfs::Count),
                Bfs::Count => (Some(TraceOp::Load(l.count[lv % 3])), Bfs::Vertex),
                Bfs::Vertex => {
                    if let Some(n) = last.take() {
                        self.n = n;
                        self.i = self.t as u64;
                    }
                    if self.i >= self.n {
                        (None, Bfs::Arrive)
                    } else {
                        (Some(TraceOp::Load(Self::w(l.frontier[self.cur()], self.i))), Bfs::RowStart)
                    }
                }
                Bfs::RowStart => {
                    self.v = last.take().unwrap_or(0);
                    (Some(TraceOp::Load(Self::w(l.row, self.v))), Bfs::RowEnd)
                }
                Bfs::RowEnd => {
                    self.j = last.take().unwrap_or(0);
                    (Some(TraceOp::Load(Self::w(l.row, self.v + 1))), Bfs::Edge)
                }
                Bfs::Edge => {
                    if let Some(e) = last.take() {
                        self.end = e;
                    }
                    if self.j >= self.end {
                        self.i += l.threads as u64;
                        (None, Bfs::Vertex)
                    } else {
                        (Some(TraceOp::Load(Self::w(l.col, self.j))), Bfs::Visit)
                    }
                }
                Bfs::Visit => {
                    self.u = last.take().unwrap_or(0);
                    self.j += 1;
                    (Some(TraceOp::Amo(AtomicOp::Swap, Self::w(l.visited, self.u), 1)), Bfs::Claim)
                }
                Bfs::Claim if last.take() == Some(0) => (Some(TraceOp::Amo(AtomicOp::Add, l.count[(lv + 1) % 3], 1)), Bfs::Push),
                Bfs::Claim => (None, Bfs::Edge),
                Bfs::Push => {
                    let idx = last.take().unwrap_or(0);
                    (Some(TraceOp::Store(Self::w(l.frontier[1 - self.cur()], idx), self.u)), Bfs::Edge)
                }
                Bfs::Arrive => (Some(TraceOp::Amo(AtomicOp::Add, l.barrier, 1)), Bfs::Arrived),
                Bfs::Arrived => {
                    // the AMO returns the count before this thread's arrival
                    let arrived = last.take().unwrap_or(0) + 1;
                    if arrived >= l.threads as u64 * (self.level + 1) {
                        (None, Bfs::Next)
                    } else {
                        (Some(TraceOp::Load(l.barrier)), Bfs::Spin)
                    }
                }
                Bfs::Spin => {
                    if last.take().unwrap_or(0) >= l.threads as u64 * (self.level + 1) {
                        (None, Bfs::Next)
                    } else {
                        (Some(TraceOp::Load(l.barrier)), Bfs::Spin)
                    }
                }
                Bfs::Next => {
                    if last.is_none() {
                        (Some(TraceOp::Load(l.count[(lv + 1) % 3])), Bfs::Next)
                    } else if last.take() == Some(0) {
                        (None, Bfs::Done)
                    } else {
                        self.level += 1;
                        (None, Bfs::Start)
                    }
                }
                Bfs::Done => return None,
            };
            self.step = next;
            if op.is_some() {
                return op;
            }
        }
    }
}
