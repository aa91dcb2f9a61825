//! Sequential-consistency reference model.
//!
//! Enumerates every interleaving of the per-core operation lists over a flat
//! atomic memory and collects the reachable outcomes. States already visited
//! are skipped, so the search is a depth-first walk of the state graph rather
//! than of the (much larger) interleaving tree.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::soc::TraceOp;

/// Largest total operation count the oracle accepts.
pub const MAX_ORACLE_OPS: usize = 16;

/// Register results per core plus the final value of each observed address.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Outcome {
    pub regs: Vec<Vec<u64>>,
    pub mem: Vec<(u64, u64)>,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (c, r) in self.regs.iter().enumerate() {
            let vals: Vec<String> = r.iter().map(u64::to_string).collect();
            write!(f, "c{c}=[{}] ", vals.join(","))?;
        }
        let mem: Vec<String> = self.mem.iter().map(|(a, v)| format!("{a:#x}={v}")).collect();
        write!(f, "mem{{{}}}", mem.join(","))
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct State {
    pc: Vec<usize>,
    mem: BTreeMap<u64, u64>,
    /// Per core: reserved line, cleared when another core touches it.
    resv: Vec<Option<u64>>,
    regs: Vec<Vec<u64>>,
}

/// Outcome sets of a multi-core program under sequential consistency.
pub struct ScOracle {
    line_bytes: u64,
}

impl ScOracle {
    /// `line_bytes` is the reservation granule for LR/SC.
    pub fn new(line_bytes: u64) -> Self {
        Self { line_bytes }
    }

    /// All outcomes reachable by some interleaving. `observe` lists the
    /// addresses whose final values are part of the outcome.
    pub fn outcomes(&self, cores: &[Vec<TraceOp>], init: &[(u64, u64)], observe: &[u64]) -> Result<BTreeSet<Outcome>> {
        let total: usize = cores.iter().map(Vec::len).sum();
        if total > MAX_ORACLE_OPS {
            return Err(Error::BoundExceeded(format!("{total} operations exceed the oracle bound of {MAX_ORACLE_OPS}")));
        }
        let start = State {
            pc: vec![0; cores.len()],
            mem: init.iter().copied().collect(),
            resv: vec![None; cores.len()],
            regs: vec![Vec::new(); cores.len()],
        };
        let mut seen = HashSet::new();
        let mut stack = vec![start];
        let mut out = BTreeSet::new();
        while let Some(s) = stack.pop() {
            if !seen.insert(s.clone()) {
                continue;
            }
            let mut any = false;
            for (c, ops) in cores.iter().enumerate() {
                if let Some(op) = ops.get(s.pc[c]) {
                    any = true;
                    stack.push(self.apply(&s, c, op));
                }
            }
            if !any {
                let mem = observe.iter().map(|&a| (a, s.mem.get(&a).copied().unwrap_or(0))).collect();
                out.insert(Outcome { regs: s.regs, mem });
            }
        }
        Ok(out)
    }

    fn apply(&self, s: &State, c: usize, op: &TraceOp) -> State {
        let mut n = s.clone();
        n.pc[c] += 1;
        let read = |a: u64| s.mem.get(&a).copied().unwrap_or(0);
        if let Some(a) = op.mem_addr() {
            let line = a / self.line_bytes;
            for (o, r) in n.resv.iter_mut().enumerate() {
                if o != c && *r == Some(line) {
                    *r = None;
                }
            }
        }
        match *op {
            TraceOp::Load(a) | TraceOp::Ifetch(a) => n.regs[c].push(read(a)),
            TraceOp::Store(a, v) => {
                n.mem.insert(a, v);
            }
            TraceOp::Amo(f, a, v) => {
                let old = read(a);
                n.mem.insert(a, f.apply(old, v));
                n.regs[c].push(old);
            }
            TraceOp::Lr(a) => {
                n.regs[c].push(read(a));
                n.resv[c] = Some(a / self.line_bytes);
            }
            TraceOp::Sc(a, v) => {
                let ok = n.resv[c] == Some(a / self.line_bytes);
                if ok {
                    n.mem.insert(a, v);
                }
                n.resv[c] = None;
                n.regs[c].push(u64::from(!ok));
            }
            TraceOp::MmioRead(_) => n.regs[c].push(0),
            _ => {}
        }
        n
    }
}
