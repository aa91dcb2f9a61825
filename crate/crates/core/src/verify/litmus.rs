//! Litmus tests: small multi-core programs whose allowed outcomes come from
//! the SC oracle, run on the full simulator under many timing perturbations.
//!
//! File format: the trace format plus `key: value` directives.
//!
//! ```text
//! name: MP
//! expect: oracle
//! observe: 0x0 0x80000
//! init: 0x0 0
//! core 0: ST 0x0 1
//! core 0: ST 0x80000 1
//! core 1: LD 0x80000
//! core 1: LD 0x0
//! ```
//!
//! `observe` defaults to every address the test touches.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::oracle::{Outcome, ScOracle};
use crate::error::{Error, Result};
use crate::soc::trace::{parse_line, parse_value};
use crate::soc::{Soc, SocConfig, Trace, TraceOp};

/// Per-operation issue jitter used for litmus runs, in cycles. It is large
/// enough compared with a miss that racing operations reorder across seeds.
pub const LITMUS_JITTER: u64 = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LitmusTest {
    pub name: String,
    pub cores: Vec<Vec<TraceOp>>,
    pub init: Vec<(u64, u64)>,
    pub observe: Vec<u64>,
}

impl LitmusTest {
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut name = None;
        let mut expect = None;
        let mut init = Vec::new();
        let mut observe = None;
        let mut trace = Trace::default();
        for (i, raw) in text.lines().enumerate() {
            let err = |msg: String| Error::parse(file, i + 1, msg);
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with("core") {
                if let Some((c, op)) = parse_line(line).map_err(err)? {
                    trace.push(c, op);
                }
                continue;
            }
            let (key, value) = line.split_once(':').ok_or_else(|| err(format!("expected `key: value`, got `{line}`")))?;
            let value = value.trim();
            let nums = || -> Result<Vec<u64>> { value.split_whitespace().map(|v| parse_value(v).map_err(err)).collect() };
            match key.trim() {
                "name" => name = Some(value.to_string()),
                "expect" if value == "oracle" => expect = Some(()),
                "expect" => return Err(err(format!("unsupported expectation `{value}` (only `oracle`)"))),
                "init" => match nums()?.as_slice() {
                    [a, v] => init.push((*a, *v)),
                    _ => return Err(err("init takes an address and a value".into())),
                },
                "observe" => observe = Some(nums()?),
                k => return Err(err(format!("unknown directive `{k}`"))),
            }
        }
        if expect.is_none() {
            return Err(Error::parse(file, 1, "missing `expect: oracle` directive"));
        }
        if trace.cores.is_empty() {
            return Err(Error::parse(file, 1, "test has no operations"));
        }
        let observe = observe.unwrap_or_else(|| {
            let set: BTreeSet<u64> = trace.cores.iter().flatten().filter_map(TraceOp::mem_addr).collect();
            set.into_iter().collect()
        });
        let name = name.unwrap_or_else(|| Path::new(file).file_stem().map_or(file.to_string(), |s| s.to_string_lossy().into()));
        Ok(Self { name, cores: trace.cores, init, observe })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn total_ops(&self) -> usize {
        self.cores.iter().map(Vec::len).sum()
    }

    pub fn allowed(&self, line_bytes: u64) -> Result<BTreeSet<Outcome>> {
        ScOracle::new(line_bytes).outcomes(&self.cores, &self.init, &self.observe)
    }

    /// Runs the test once on the simulator and returns what it observed.
    pub fn run_once(&self, cfg: &SocConfig, seed: u64) -> Result<Run> {
        let trace = Trace { cores: self.cores.clone() };
        let mut soc = Soc::with_trace(cfg.clone(), &trace, seed)?;
        for &(a, v) in &self.init {
            soc.preload_word(a, v);
        }
        let summary = soc.run(1_000_000)?;
        let regs = (0..self.cores.len()).map(|c| soc.cores()[c].results.clone()).collect();
        let mem = self.observe.iter().map(|&a| (a, soc.read_coherent(a))).collect();
        Ok(Run {
            outcome: Outcome { regs, mem },
            completed: summary.completed,
            violations: soc.monitor.violations.iter().map(ToString::to_string).collect(),
        })
    }
}

/// Result of one simulator run of a litmus test.
#[derive(Debug, Clone)]
pub struct Run {
    pub outcome: Outcome,
    pub completed: bool,
    pub violations: Vec<String>,
}

/// Aggregate over many seeds.
#[derive(Debug, Clone, Serialize)]
pub struct LitmusVerdict {
    pub name: String,
    pub seeds: u64,
    pub allowed: usize,
    /// Observed outcome counts.
    #[serde(serialize_with = "entries")]
    pub observed: BTreeMap<Outcome, u64>,
    /// Outcomes outside the allowed set, with the first seed that produced each.
    #[serde(serialize_with = "entries")]
    pub forbidden: BTreeMap<Outcome, u64>,
    /// Seeds whose run hung or raised a monitor violation, with a description.
    pub failures: BTreeMap<u64, String>,
    pub pass: bool,
}

/// Serializes an outcome-keyed map as a list of `[outcome, value]` pairs.
fn entries<S: serde::Serializer>(map: &BTreeMap<Outcome, u64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(map.iter())
}

impl LitmusVerdict {
    /// One line for a verdict table.
    pub fn row(&self) -> String {
        format!(
            "{:<14} {:<4} seeds={} allowed={} observed={} forbidden={} failures={}",
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.seeds,
            self.allowed,
            self.observed.len(),
            self.forbidden.len(),
            self.failures.len()
        )
    }
}

#[derive(Default)]
struct Tally {
    observed: BTreeMap<Outcome, u64>,
    forbidden: BTreeMap<Outcome, u64>,
    failures: BTreeMap<u64, String>,
}

impl Tally {
    fn merge(mut self, other: Tally) -> Tally {
        for (o, n) in other.observed {
            *self.observed.entry(o).or_default() += n;
        }
        for (o, s) in other.forbidden {
            let e = self.forbidden.entry(o).or_insert(s);
            *e = (*e).min(s);
        }
        self.failures.extend(other.failures);
        self
    }
}

/// Runs `test` once per seed in `seeds`, in parallel, and checks every
/// observed outcome against the oracle.
pub fn run_litmus(test: &LitmusTest, cfg: &SocConfig, seeds: std::ops::Range<u64>) -> Result<LitmusVerdict> {
    let allowed = test.allowed(u64::from(cfg.l2.geom.line_bytes))?;
    run_against(test, cfg, seeds, &allowed)
}

/// Like [`run_litmus`] with a caller-supplied allowed set.
pub fn run_against(test: &LitmusTest, cfg: &SocConfig, seeds: std::ops::Range<u64>, allowed: &BTreeSet<Outcome>) -> Result<LitmusVerdict> {
    let n = seeds.end - seeds.start;
    let tally = seeds
        .into_par_iter()
        .map(|seed| -> Result<Tally> {
            let run = test.run_once(cfg, seed)?;
            let mut t = Tally::default();
            if !run.completed {
                t.failures.insert(seed, "did not complete".into());
            } else if let Some(v) = run.violations.first() {
                t.failures.insert(seed, v.clone());
            }
            if !allowed.contains(&run.outcome) {
                t.forbidden.insert(run.outcome.clone(), seed);
            }
            t.observed.insert(run.outcome, 1);
            Ok(t)
        })
        .try_reduce(Tally::default, |a, b| Ok(a.merge(b)))?;
    Ok(LitmusVerdict {
        name: test.name.clone(),
        seeds: n,
        allowed: allowed.len(),
        pass: tally.forbidden.is_empty() && tally.failures.is_empty(),
        observed: tally.observed,
        forbidden: tally.forbidden,
        failures: tally.failures,
    })
}

/// Loads every `*.litmus` file in `dir`, sorted by file name.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<LitmusTest>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "litmus"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Usage(format!("no .litmus files in {}", dir.display())));
    }
    paths.iter().map(LitmusTest::from_file).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MP: &str = "name: MP\nexpect: oracle\ncore 0: ST 0x0 1\ncore 0: ST 0x80000 1\ncore 1: LD 0x80000\ncore 1: LD 0x0\n";

    #[test]
    fn parses_directives() {
        let t = LitmusTest::parse(MP, "mp.litmus").unwrap();
        assert_eq!(t.name, "MP");
        assert_eq!(t.total_ops(), 4);
        assert_eq!(t.observe, vec![0x0, 0x80000]);
    }

    #[test]
    fn requires_expectation() {
        let text = MP.replace("expect: oracle\n", "");
        assert!(LitmusTest::parse(&text, "x").is_err());
        let text = MP.replace("oracle", "manual");
        assert!(matches!(LitmusTest::parse(&text, "x"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn mp_passes_on_a_few_seeds() {
        let t = LitmusTest::parse(MP, "mp").unwrap();
        let v = run_litmus(&t, &SocConfig::quad(), 0..16).unwrap();
        assert!(v.pass, "{v:?}");
        assert_eq!(v.allowed, 3);
        assert_eq!(v.observed.values().sum::<u64>(), 16);
    }

    #[test]
    fn forbidden_outcome_is_reported() {
        let t = LitmusTest::parse(MP, "mp").unwrap();
        let v = run_against(&t, &SocConfig::quad(), 0..8, &BTreeSet::new()).unwrap();
        assert!(!v.pass);
        assert_eq!(v.forbidden.len(), v.observed.len());
        assert!(v.row().contains("FAIL"));
    }
}
