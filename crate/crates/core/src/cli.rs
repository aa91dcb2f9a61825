//! The `espsim` command line.
//!
//! Exit codes: 0 when clean, 1 when a run found violations or a suite
//! failed, 2 for usage, parse and I/O errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::llc::Fault;
use crate::soc::{Soc, SocConfig, Trace};
use crate::verify::explore::{explore, ExploreConfig, OpSet};
use crate::verify::litmus::{load_corpus, run_litmus, LitmusTest, LITMUS_JITTER};
use crate::workload::{random_mix, Workload};

pub const EXIT_CLEAN: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Normalized BFS times at 2 and 4 cores measured on hardware, shown next to
/// simulated BFS sweeps.
pub const REFERENCE_NORMALIZED: [(usize, f64); 2] = [(2, 0.58), (4, 0.34)];

#[derive(Parser, Debug)]
#[command(name = "espsim", version, about = "Cycle-level tile SoC simulator with coherence checking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a trace or workload and emit statistics.
    Run(RunArgs),
    /// Run litmus tests against the SC oracle.
    Litmus(LitmusArgs),
    /// Exhaustively explore a tiny configuration.
    Explore(ExploreArgs),
    /// Execution time of a workload across core counts.
    Scale(ScaleArgs),
    /// Write a random mixed trace.
    GenTrace(GenArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// SoC description (TOML). Defaults to the built-in 3x3 layout.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for output files. Without it, results go to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// LLC fault to inject: duplicate-m, dropped-response or skip-inv-ack.
    #[arg(long = "inject-fault")]
    pub inject_fault: Option<Fault>,
}

impl Common {
    fn config(&self) -> Result<SocConfig> {
        let mut cfg = match &self.config {
            Some(p) => SocConfig::from_file(p)?,
            None => SocConfig::quad(),
        };
        if self.inject_fault.is_some() {
            cfg.llc.fault = self.inject_fault;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// Per-core operation trace.
    #[arg(long, conflicts_with = "workload")]
    pub trace: Option<PathBuf>,
    /// Built-in workload instead of a trace: bfs, parallel or serial.
    #[arg(long)]
    pub workload: Option<Workload>,
    /// Threads for --workload; defaults to every processor tile.
    #[arg(long, requires = "workload")]
    pub threads: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Record every packet injection.
    #[arg(long = "noc-trace")]
    pub noc_trace: bool,
    #[arg(long, default_value_t = 100_000_000)]
    pub max_cycles: u64,
}

#[derive(Args, Debug)]
pub struct LitmusArgs {
    #[command(flatten)]
    pub common: Common,
    /// A corpus directory or a single .litmus file.
    pub path: PathBuf,
    /// Run only the test with this name.
    #[arg(long)]
    pub test: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random delay bound before each operation, in cycles.
    #[arg(long, default_value_t = LITMUS_JITTER)]
    pub jitter: u64,
}

#[derive(Args, Debug)]
pub struct ExploreArgs {
    /// Cores in the abstract system (at most two).
    #[arg(long, default_value_t = 2)]
    pub cores: usize,
    /// Addresses, comma separated (at most two).
    #[arg(long, default_value = "0x0", value_delimiter = ',')]
    pub addrs: Vec<String>,
    /// Operation classes: load,store,amo,lrsc.
    #[arg(long, default_value = "load,store,amo,lrsc")]
    pub ops: OpSet,
    /// Operations each core issues; an LR/SC pair counts as one.
    #[arg(long = "ops-per-core", default_value_t = 3)]
    pub ops_per_core: u8,
    /// Stop after visiting this many states and report a partial result.
    #[arg(long = "max-states", default_value_t = 10_000_000)]
    pub max_states: usize,
    /// LLC fault to inject: duplicate-m, dropped-response or skip-inv-ack.
    #[arg(long = "inject-fault")]
    pub inject_fault: Option<Fault>,
    /// Directory for explore.json. Without it, the report goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScaleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "bfs")]
    pub workload: Workload,
    /// Core counts, comma separated.
    #[arg(long, default_value = "1,2,4", value_delimiter = ',')]
    pub cores: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 4)]
    pub cores: usize,
    #[arg(long, default_value_t = 100_000)]
    pub ops: usize,
    #[arg(long, default_value_t = 64)]
    pub lines: u64,
    #[arg(long, default_value_t = 16)]
    pub line_bytes: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// What a command produced: text for stdout and an exit code.
pub struct Outcome {
    pub stdout: String,
    pub code: i32,
}

fn write_out(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn emit(common_out: &Option<PathBuf>, name: &str, text: String, summary: String) -> Result<String> {
    match common_out {
        Some(dir) => {
            write_out(dir, name, &text)?;
            Ok(summary)
        }
        None => Ok(text),
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<Outcome> {
    let cfg = args.common.config()?;
    let mut soc = match (&args.trace, args.workload) {
        (Some(path), _) => Soc::with_trace(cfg, &Trace::from_file(path)?, args.seed)?,
        (None, Some(w)) => {
            let threads = args.threads.unwrap_or(cfg.processor_tiles().len());
            check_threads(&cfg, threads)?;
            let inst = w.instance(threads, args.seed);
            let mut soc = Soc::new(cfg, inst.programs, args.seed)?;
            for (a, v) in inst.init {
                soc.preload_word(a, v);
            }
            soc
        }
        (None, None) => return Err(Error::Usage("run needs --trace or --workload".into())),
    };
    if args.noc_trace {
        soc.mesh_mut().enable_trace();
    }
    let summary = soc.run(args.max_cycles)?;
    log::info!("finished after {} cycles, {} violation(s)", summary.cycles, summary.violations);
    for v in &soc.monitor.violations {
        eprintln!("violation: {v}");
    }
    if !summary.completed && summary.violations == 0 {
        eprintln!("run stopped at the cycle limit before completing");
    }
    let mut stdout = emit(
        &args.common.out,
        "stats.json",
        soc.stats().to_json() + "\n",
        format!("cycles={} completed={} violations={}\n", summary.cycles, summary.completed, summary.violations),
    )?;
    if args.noc_trace {
        let trace = soc.mesh_mut().take_trace().join("\n") + "\n";
        let dir = args.common.out.clone().unwrap_or_else(|| PathBuf::from("."));
        write_out(&dir, "noc_trace.txt", &trace)?;
        let _ = writeln!(stdout, "noc trace: {}", dir.join("noc_trace.txt").display());
    }
    let code = if summary.violations > 0 || !summary.completed { EXIT_VIOLATION } else { EXIT_CLEAN };
    Ok(Outcome { stdout, code })
}

pub fn cmd_litmus(args: &LitmusArgs) -> Result<Outcome> {
    let mut cfg = args.common.config()?;
    cfg.issue_jitter = args.jitter;
    let mut tests = if args.path.is_dir() { load_corpus(&args.path)? } else { vec![LitmusTest::from_file(&args.path)?] };
    if let Some(name) = &args.test {
        tests.retain(|t| &t.name == name);
        if tests.is_empty() {
            return Err(Error::Usage(format!("no test named `{name}`")));
        }
    }
    let mut table = String::new();
    let mut records = String::new();
    let mut failed = false;
    for t in &tests {
        let v = run_litmus(t, &cfg, args.seed..args.seed + args.seeds)?;
        failed |= !v.pass;
        let _ = writeln!(table, "{}", v.row());
        for (o, seed) in &v.forbidden {
            let _ = writeln!(table, "  forbidden {o} first at seed {seed}");
        }
        for (seed, why) in v.failures.iter().take(3) {
            let _ = writeln!(table, "  seed {seed}: {why}");
        }
        records += &serde_json::to_string(&v).expect("verdict serializes");
        records.push('\n');
    }
    if let Some(dir) = &args.common.out {
        write_out(dir, "litmus.jsonl", &records)?;
    }
    Ok(Outcome { stdout: table, code: if failed { EXIT_VIOLATION } else { EXIT_CLEAN } })
}

pub fn cmd_explore(args: &ExploreArgs) -> Result<Outcome> {
    let addrs = args.addrs.iter().map(|a| crate::soc::trace::parse_value(a).map_err(Error::Usage)).collect::<Result<Vec<_>>>()?;
    let mut cfg = ExploreConfig::new(args.cores, addrs, args.ops);
    cfg.ops_per_core = args.ops_per_core;
    cfg.max_states = args.max_states;
    cfg.fault = args.inject_fault;
    let report = explore(&cfg)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    let summary =
        format!("states={} deadlocks={} violations={} complete={}\n", report.states, report.deadlocks, report.violations, report.complete);
    let stdout = emit(&args.out, "explore.json", json, summary)?;
    Ok(Outcome { stdout, code: if report.clean() { EXIT_CLEAN } else { EXIT_VIOLATION } })
}

fn check_threads(cfg: &SocConfig, threads: usize) -> Result<()> {
    let cpus = cfg.processor_tiles().len();
    if threads == 0 || threads > cpus {
        return Err(Error::Usage(format!("{threads} cores requested, the configuration has {cpus} processor tiles")));
    }
    Ok(())
}

/// One row of a scaling sweep.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ScalePoint {
    pub cores: usize,
    pub cycles: u64,
    pub normalized: f64,
}

/// Runs `workload` at each core count and normalizes to the first.
pub fn scale(cfg: &SocConfig, workload: Workload, cores: &[usize], seed: u64) -> Result<Vec<ScalePoint>> {
    for &n in cores {
        check_threads(cfg, n)?;
    }
    let cycles = cores
        .par_iter()
        .map(|&n| -> Result<u64> {
            let inst = workload.instance(n, seed);
            let mut soc = Soc::new(cfg.clone(), inst.programs, seed)?;
            for (a, v) in inst.init {
                soc.preload_word(a, v);
            }
            let s = soc.run(u64::MAX)?;
            if !s.completed || s.violations > 0 {
                return Err(Error::Protocol(format!("{n}-core run did not finish cleanly: {:?}", soc.monitor.violations.first())));
            }
            Ok(s.cycles)
        })
        .collect::<Result<Vec<_>>>()?;
    let base = cycles[0] as f64;
    Ok(cores.iter().zip(cycles).map(|(&cores, cycles)| ScalePoint { cores, cycles, normalized: cycles as f64 / base }).collect())
}

pub fn cmd_scale(args: &ScaleArgs) -> Result<Outcome> {
    if args.cores.is_empty() {
        return Err(Error::Usage("no core counts given".into()));
    }
    let cfg = args.common.config()?;
    let points = scale(&cfg, args.workload, &args.cores, args.seed)?;
    let mut csv = String::from("cores,cycles,normalized,reference\n");
    for p in &points {
        let reference = REFERENCE_NORMALIZED
            .iter()
            .find(|(n, _)| args.workload == Workload::Bfs && *n == p.cores)
            .map_or(String::new(), |(_, r)| format!("{r:.2}"));
        let _ = writeln!(csv, "{},{},{:.4},{}", p.cores, p.cycles, p.normalized, reference);
    }
    let stdout = emit(&args.common.out, "scale.csv", csv.clone(), csv)?;
    Ok(Outcome { stdout, code: EXIT_CLEAN })
}

pub fn cmd_gen(args: &GenArgs) -> Result<Outcome> {
    if args.cores == 0 {
        return Err(Error::Usage("at least one core".into()));
    }
    let t = random_mix(args.cores, args.ops, args.lines, args.line_bytes, args.seed);
    Ok(Outcome { stdout: t.to_text(), code: EXIT_CLEAN })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_CLEAN };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Litmus(a) => cmd_litmus(a),
        Command::Explore(a) => cmd_explore(a),
        Command::Scale(a) => cmd_scale(a),
        Command::GenTrace(a) => cmd_gen(a),
    };
    match result {
        Ok(o) => {
            print!("{}", o.stdout);
            o.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Protocol(_) => EXIT_VIOLATION,
                _ => EXIT_USAGE,
            }
        }
    }
}
