//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line;
//! the process exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use espsim::cli::scale;
use espsim::llc::Fault;
use espsim::noc::{Mesh, MmioMap, NocConfig};
use espsim::soc::memory::Memory;
use espsim::soc::{AccelMode, DmaDesc, Program, Soc, SocConfig, Trace, TraceOp, TraceProgram};
use espsim::types::{CohMsg, DirState, MsgKind, Plane, TileId};
use espsim::verify::explore::{explore, ExploreConfig, OpSet};
use espsim::verify::litmus::LITMUS_JITTER;
use espsim::verify::{load_corpus, run_litmus, ViolationKind};
use espsim::workload::{amo_counter, random_mix, SpinlockIncrement, Workload};

const LITMUS_MIN_TESTS: usize = 10;
const LITMUS_SEEDS: u64 = 1000;
const LITMUS_BUDGET: Duration = Duration::from_secs(600);
const ATOMIC_OPS_PER_CORE: usize = 1000;
const MONITOR_MIX_OPS: usize = 100_000;
const MONITOR_LINES: u64 = 64;
const FAULT_MIX_OPS: usize = 4_000;
const EXPLORE_MAX_STATES: usize = 10_000_000;
const EXPLORE_OPS_PER_CORE: u8 = 6;
const EXPLORE_BUDGET: Duration = Duration::from_secs(300);
const SOAK_CYCLES: u64 = 3_000;
const SOAK_INJECT_PER_CYCLE: usize = 3;
const SCALE_FOUR_CORE_MAX: f64 = 0.75;
const SCALE_REFERENCE: [(usize, f64); 2] = [(2, 0.58), (4, 0.34)];
const RUN_LIMIT: u64 = 20_000_000;

type Check = fn() -> Result<String, String>;

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("litmus soundness", litmus_soundness),
        ("atomicity", atomicity),
        ("swmr and data-value monitors", monitors),
        ("valid-state semantics", valid_state),
        ("flush correctness", flush),
        ("exhaustive exploration", exhaustive),
        ("noc timing", noc_timing),
        ("scaling", scaling),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}; {secs:.1}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why}; {secs:.1}s)", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn line_bytes(cfg: &SocConfig) -> u64 {
    u64::from(cfg.l2.geom.line_bytes)
}

fn run_to_end(soc: &mut Soc) -> Result<(), String> {
    let s = soc.run(RUN_LIMIT).map_err(|e| e.to_string())?;
    ensure(s.completed, || format!("run did not complete: {:?}", soc.monitor.violations.first()))
}

fn mem_reads(soc: &Soc) -> (u64, u64) {
    let stats = soc.stats();
    let llc = stats.memory_tiles.iter().map(|m| m.llc.mem_reads).sum();
    let mem = stats.memory_tiles.iter().map(|m| m.memory.reads).sum();
    (llc, mem)
}

fn litmus_soundness() -> Result<String, String> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("litmus");
    let corpus = load_corpus(&dir).map_err(|e| e.to_string())?;
    ensure(corpus.len() >= LITMUS_MIN_TESTS, || format!("only {} tests", corpus.len()))?;
    let mut cfg = SocConfig::quad();
    cfg.issue_jitter = LITMUS_JITTER;
    let start = Instant::now();
    let mut bad = Vec::new();
    let mut observed = 0;
    for test in &corpus {
        let v = run_litmus(test, &cfg, 0..LITMUS_SEEDS).map_err(|e| e.to_string())?;
        observed += v.observed.len();
        if !v.pass {
            bad.push(v.row());
        }
    }
    let took = start.elapsed();
    ensure(bad.is_empty(), || bad.join("; "))?;
    ensure(took < LITMUS_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("{} tests x {LITMUS_SEEDS} seeds, {observed} distinct outcomes, all within the SC set", corpus.len()))
}

fn atomicity() -> Result<String, String> {
    let cfg = SocConfig::quad();
    let cores = cfg.processor_tiles().len();
    let expected = (cores * ATOMIC_OPS_PER_CORE) as u64;

    let programs = (0..cores).map(|_| Box::new(TraceProgram::new(amo_counter(0x200, ATOMIC_OPS_PER_CORE))) as Box<dyn Program>).collect();
    let mut soc = Soc::new(cfg.clone(), programs, 1).map_err(|e| e.to_string())?;
    run_to_end(&mut soc)?;
    let amo = soc.read_coherent(0x200);
    ensure(amo == expected, || format!("AMOADD counter {amo}, want {expected}"))?;

    let programs = (0..cores).map(|_| Box::new(SpinlockIncrement::new(0x100, 0x80200, ATOMIC_OPS_PER_CORE)) as Box<dyn Program>).collect();
    let mut soc = Soc::new(cfg, programs, 2).map_err(|e| e.to_string())?;
    run_to_end(&mut soc)?;
    let locked = soc.read_coherent(0x80200);
    ensure(locked == expected, || format!("spinlock counter {locked}, want {expected}"))?;
    ensure(soc.monitor.violations.is_empty(), || format!("{:?}", soc.monitor.violations.first()))?;
    Ok(format!("AMOADD {amo}, LR/SC lock {locked}"))
}

fn monitors() -> Result<String, String> {
    let cfg = SocConfig::quad();
    let trace = random_mix(4, MONITOR_MIX_OPS, MONITOR_LINES, line_bytes(&cfg), 7);
    let mut soc = Soc::with_trace(cfg.clone(), &trace, 7).map_err(|e| e.to_string())?;
    run_to_end(&mut soc)?;
    ensure(soc.monitor.violations.is_empty(), || format!("clean run: {:?}", soc.monitor.violations.first()))?;
    let mut detail = format!("clean mix 0 violations over {} accesses", soc.monitor.accesses);

    let faulty = random_mix(4, FAULT_MIX_OPS, MONITOR_LINES, line_bytes(&cfg), 8);
    for fault in [Fault::DuplicateM, Fault::DroppedResponse, Fault::SkipInvAck] {
        let mut cfg = cfg.clone();
        cfg.llc.fault = Some(fault);
        cfg.watchdog = 2_000;
        let mut soc = Soc::with_trace(cfg, &faulty, 8).map_err(|e| e.to_string())?;
        soc.run(RUN_LIMIT).map_err(|e| e.to_string())?;
        let n = soc.monitor.violations.len();
        ensure(n >= 1, || format!("{fault:?} went undetected"))?;
        let kinds: BTreeSet<String> = soc.monitor.violations.iter().map(|v| format!("{:?}", v.kind)).collect();
        detail += &format!(", {fault:?} -> {n} ({})", kinds.into_iter().collect::<Vec<_>>().join("/"));
    }
    Ok(detail)
}

fn accelerator_run(mode: AccelMode, job: Vec<DmaDesc>, prelude: &[TraceOp], postlude: &[TraceOp]) -> Result<Soc, String> {
    let cfg = SocConfig::quad_with_accelerator(mode, job);
    let start = MmioMap::new(cfg.mmio_base, cfg.tile_count()).register(TileId(3), MmioMap::ACC_START);
    let mut ops = prelude.to_vec();
    ops.extend([TraceOp::MmioWrite(start, 1), TraceOp::WaitIrq]);
    ops.extend_from_slice(postlude);
    let trace = Trace::new(vec![ops]);
    let mut soc = Soc::with_trace(cfg, &trace, 3).map_err(|e| e.to_string())?;
    run_to_end(&mut soc)?;
    Ok(soc)
}

fn valid_state() -> Result<String, String> {
    const BASE: u64 = 0x1000;
    const LEN: u64 = 64;
    let job = vec![DmaDesc { base: BASE, len: LEN, write: false, value: 0, compute: 10 }];
    let before = accelerator_run(AccelMode::LlcCoherent, job.clone(), &[], &[])?;
    let lb = line_bytes(before.config());
    for line in (BASE..BASE + LEN).step_by(lb as usize) {
        let state = before.dir_entry(line).state;
        ensure(state == DirState::V, || format!("line {line:#x} in {state:?} after DMA read"))?;
    }
    let after = accelerator_run(AccelMode::LlcCoherent, job, &[], &[TraceOp::Load(BASE)])?;
    let (llc0, mem0) = mem_reads(&before);
    let (llc1, mem1) = mem_reads(&after);
    ensure(llc1 == llc0 && mem1 == mem0, || format!("GetS caused {} LLC and {} memory reads", llc1 - llc0, mem1 - mem0))?;
    ensure(after.stats().memory_tiles.iter().map(|m| m.llc.hits).sum::<u64>() > 0, || "GetS did not hit".into())?;
    Ok(format!("{} lines in V, CPU GetS added 0 memory reads", LEN / lb))
}

/// Runs `head`, then optionally spins until `wait.0` holds `wait.1`, then runs `tail`.
struct Phased {
    head: std::vec::IntoIter<TraceOp>,
    wait: Option<(u64, u64)>,
    tail: std::vec::IntoIter<TraceOp>,
    spinning: bool,
}

impl Program for Phased {
    fn next_op(&mut self, last: Option<u64>) -> Option<TraceOp> {
        if let Some(op) = self.head.next() {
            return Some(op);
        }
        if let Some((addr, want)) = self.wait {
            if !self.spinning || last != Some(want) {
                self.spinning = true;
                return Some(TraceOp::Load(addr));
            }
            self.wait = None;
        }
        self.tail.next()
    }
}

fn offset(op: TraceOp, by: u64) -> TraceOp {
    match op {
        TraceOp::Load(a) => TraceOp::Load(a + by),
        TraceOp::Store(a, v) => TraceOp::Store(a + by, v),
        TraceOp::Amo(f, a, v) => TraceOp::Amo(f, a + by, v),
        TraceOp::Lr(a) => TraceOp::Lr(a + by),
        TraceOp::Sc(a, v) => TraceOp::Sc(a + by, v),
        other => other,
    }
}

/// Random traffic on both memory partitions, a flush by every core, then
/// an LLC flush on every memory tile once all cores have checked in.
fn flushed_soc(cfg: SocConfig, extra_head: &[TraceOp], tail: &[TraceOp]) -> Result<Soc, String> {
    const CHECKIN: u64 = 0x3000;
    let mmio = MmioMap::new(cfg.mmio_base, cfg.tile_count());
    let cores = cfg.processor_tiles().len();
    let mix = random_mix(cores, 2_000, 32, line_bytes(&cfg), 21);
    let mut programs: Vec<Box<dyn Program>> = Vec::new();
    for (c, ops) in mix.cores.into_iter().enumerate() {
        let by = if c % 2 == 1 { 0x80000 } else { 0 };
        let mut head: Vec<TraceOp> = ops.into_iter().map(|op| offset(op, by)).collect();
        if c == 0 {
            head.extend_from_slice(extra_head);
        }
        head.extend([TraceOp::Flush, TraceOp::Amo(espsim::types::AtomicOp::Add, CHECKIN, 1)]);
        let mut tail_ops = Vec::new();
        let wait = (c == 0).then_some((CHECKIN, cores as u64));
        if c == 0 {
            for t in cfg.memory_tiles() {
                tail_ops.push(TraceOp::MmioWrite(mmio.register(t, MmioMap::FLUSH), 1));
                tail_ops.push(TraceOp::Poll(mmio.register(t, MmioMap::STATUS), 1));
            }
            tail_ops.extend_from_slice(tail);
        }
        programs.push(Box::new(Phased { head: head.into_iter(), wait, tail: tail_ops.into_iter(), spinning: false }));
    }
    let mut soc = Soc::new(cfg, programs, 21).map_err(|e| e.to_string())?;
    run_to_end(&mut soc)?;
    Ok(soc)
}

fn flush() -> Result<String, String> {
    let soc = flushed_soc(SocConfig::quad(), &[], &[])?;
    let order = soc.monitor.count(ViolationKind::FlushOrder);
    ensure(order == 0, || format!("{order} writebacks before flush_done"))?;
    ensure(soc.monitor.violations.is_empty(), || format!("{:?}", soc.monitor.violations.first()))?;
    let cfg = soc.config();
    let mut oracle = Memory::new(cfg.mem_size, cfg.endian);
    for (&a, &v) in soc.monitor.image() {
        oracle.write_word(a, v);
    }
    let diff = soc.memory().bytes().iter().zip(oracle.bytes()).position(|(a, b)| a != b);
    ensure(diff.is_none(), || format!("backing memory differs from the oracle image at byte {:#x}", diff.unwrap()))?;
    let words = soc.monitor.image().len();

    const BASE: u64 = 0x1000;
    let job = vec![DmaDesc { base: BASE, len: 64, write: false, value: 0, compute: 10 }];
    let writes: Vec<TraceOp> = (0..8).map(|i| TraceOp::Store(BASE + 8 * i, 100 + i)).collect();
    let cfg = SocConfig::quad_with_accelerator(AccelMode::NonCoherent, job.clone());
    let invoke = MmioMap::new(cfg.mmio_base, cfg.tile_count()).register(TileId(3), MmioMap::ACC_START);
    let soc = flushed_soc(cfg, &writes, &[TraceOp::MmioWrite(invoke, 1), TraceOp::WaitIrq])?;
    let reads: BTreeMap<u64, u64> = soc.accelerator(TileId(3)).unwrap().reads.iter().copied().collect();
    for i in 0..8 {
        let got = reads.get(&(BASE + 8 * i)).copied();
        ensure(got == Some(100 + i), || format!("non-coherent DMA read {got:?} at {:#x}", BASE + 8 * i))?;
    }
    ensure(soc.monitor.count(ViolationKind::StaleDma) == 0, || format!("{:?}", soc.monitor.violations.first()))?;

    let stale = accelerator_run(AccelMode::NonCoherent, job, &writes, &[])?;
    let n = stale.monitor.count(ViolationKind::StaleDma);
    ensure(n >= 1, || "missing flush went undetected".into())?;
    Ok(format!("0 early writebacks, {words} words match byte-for-byte, DMA after flush fresh, no-flush run flagged {n} stale reads"))
}

fn exhaustive() -> Result<String, String> {
    let mut cfg = ExploreConfig::new(2, vec![0x0], OpSet::ALL);
    cfg.ops_per_core = EXPLORE_OPS_PER_CORE;
    cfg.max_states = EXPLORE_MAX_STATES;
    let start = Instant::now();
    let r = explore(&cfg).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure(r.complete, || format!("state bound hit at {} states", r.states))?;
    ensure(r.deadlocks == 0 && r.violations == 0, || format!("{} deadlocks, {} violations: {:?}", r.deadlocks, r.violations, r.examples))?;
    ensure(r.states <= EXPLORE_MAX_STATES, || format!("{} states", r.states))?;
    ensure(took < EXPLORE_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("{} states, {} transitions, {} terminal, fixpoint reached", r.states, r.transitions, r.terminal))
}

fn noc_timing() -> Result<String, String> {
    let probe = Mesh::new(NocConfig::new(4, 4));
    let n = probe.tiles();
    for src in 0..n {
        for dst in 0..n {
            let mut m = probe.clone();
            m.inject(CohMsg::new(MsgKind::GetS, 0, TileId(src), TileId(dst)), 0);
            let mut now = 0;
            let d = loop {
                now += 1;
                if let Some(d) = m.step(now).pop() {
                    break d;
                }
                ensure(now < 100, || format!("{src}->{dst} never delivered"))?;
            };
            let dist = m.coord(TileId(src)).manhattan(m.coord(TileId(dst))) as u64;
            ensure(d.latency() == dist.max(1), || format!("{src}->{dst}: latency {} vs distance {dist}", d.latency()))?;
        }
    }

    let kinds = [MsgKind::GetS, MsgKind::Inv, MsgKind::DataRsp, MsgKind::DmaReadBurst, MsgKind::DmaRsp, MsgKind::MmioWrite];
    let mut m = Mesh::new(NocConfig::new(4, 4));
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut seq: BTreeMap<(usize, usize, Plane), u64> = BTreeMap::new();
    let mut seen: BTreeMap<(usize, usize, Plane), u64> = BTreeMap::new();
    let mut injected = 0u64;
    let mut delivered = 0u64;
    let mut now = 0;
    while now < SOAK_CYCLES || !m.is_idle() {
        if now < SOAK_CYCLES {
            for src in (0..n).flat_map(|s| std::iter::repeat_n(s, SOAK_INJECT_PER_CYCLE)) {
                let dst = rng.gen_range(0..n);
                let kind = kinds[rng.gen_range(0..kinds.len())];
                let key = (src, dst, kind.plane());
                let s = seq.entry(key).or_default();
                m.inject(CohMsg::new(kind, *s, TileId(src), TileId(dst)), now);
                *s += 1;
                injected += 1;
            }
        }
        now += 1;
        for d in m.step(now) {
            let key = (d.msg.src.0, d.msg.dst.0, d.plane);
            let next = seen.entry(key).or_default();
            ensure(d.msg.addr.0 == *next, || format!("{key:?}: got #{} expected #{next}", d.msg.addr.0))?;
            *next += 1;
            delivered += 1;
        }
        ensure(now < SOAK_CYCLES * 100, || "soak did not drain".into())?;
    }
    ensure(delivered == injected, || format!("{delivered} of {injected} delivered"))?;
    let blocked: u64 = m.stats.planes.iter().map(|p| p.blocked).sum();
    ensure(blocked > 0, || "soak never saturated a queue".into())?;
    Ok(format!("{} pairs at hop latency, {delivered} soak packets in order, {blocked} blocked cycles", n * n))
}

fn scaling() -> Result<String, String> {
    let points = scale(&SocConfig::quad(), Workload::Bfs, &[1, 2, 4], 1).map_err(|e| e.to_string())?;
    let norm: Vec<f64> = points.iter().map(|p| p.normalized).collect();
    ensure(norm.windows(2).all(|w| w[1] < w[0]), || format!("not strictly decreasing: {norm:?}"))?;
    ensure(norm[2] < SCALE_FOUR_CORE_MAX, || format!("4-core normalized {:.3}", norm[2]))?;
    let reference: Vec<String> = SCALE_REFERENCE.iter().map(|(c, r)| format!("{c}c ref {r}")).collect();
    Ok(format!("BFS normalized 1c {:.3}, 2c {:.3}, 4c {:.3} (reported: {})", norm[0], norm[1], norm[2], reference.join(", ")))
}

fn determinism() -> Result<String, String> {
    let cfg = SocConfig::quad();
    let trace = random_mix(4, 10_000, 64, line_bytes(&cfg), 5);
    let json = |seed| -> Result<String, String> {
        let mut soc = Soc::with_trace(cfg.clone(), &trace, seed).map_err(|e| e.to_string())?;
        run_to_end(&mut soc)?;
        Ok(soc.stats().to_json())
    };
    let a = json(5)?;
    let b = json(5)?;
    ensure(a == b, || "same seed produced different stats".into())?;
    let c = json(6)?;
    ensure(a != c, || "a different seed produced identical stats".into())?;
    Ok(format!("{} stat bytes identical across repeated runs", a.len()))
}
