use super::*;
use crate::noc::MmioMap;
use crate::types::{DirState, TileId};
use crate::verify::ViolationKind;

fn run_trace(cfg: SocConfig, text: &str, seed: u64) -> Soc {
    let trace = Trace::parse(text, "test").unwrap();
    let mut soc = Soc::with_trace(cfg, &trace, seed).unwrap();
    let summary = soc.run(200_000).unwrap();
    assert!(summary.completed, "run did not complete: {:?}", soc.monitor.violations);
    soc
}

#[test]
fn smoke_nops_finish() {
    let soc = run_trace(SocConfig::smoke(), "core 0: NOP\ncore 0: NOP\n", 1);
    assert_eq!(soc.cores()[0].stats.retired, 2);
    assert!(soc.monitor.violations.is_empty());
}

#[test]
fn quad_has_four_cores() {
    let soc = Soc::new(SocConfig::quad(), Vec::new(), 0).unwrap();
    assert_eq!(soc.cores().len(), 4);
    assert_eq!(soc.home(0), TileId(1));
    assert_eq!(soc.home(1 << 19), TileId(7));
}

#[test]
fn no_memory_tile_rejected() {
    let mut cfg = SocConfig::quad();
    cfg.tiles[1] = TileKind::Empty;
    cfg.tiles[7] = TileKind::Empty;
    assert!(Soc::new(cfg, Vec::new(), 0).is_err());
}

#[test]
fn out_of_range_address_rejected() {
    let trace = Trace::parse("core 0: LD 0x200000\n", "t").unwrap();
    assert!(matches!(Soc::with_trace(SocConfig::quad(), &trace, 0), Err(crate::Error::AddressOutOfRange { .. })));
}

#[test]
fn store_then_load_sees_value() {
    let soc = run_trace(SocConfig::quad(), "core 0: ST 0x40 7\ncore 0: LD 0x40\n", 3);
    assert_eq!(soc.cores()[0].results, vec![7]);
    assert_eq!(soc.read_coherent(0x40), 7);
    assert!(soc.monitor.violations.is_empty());
}

#[test]
fn second_load_hits_l1_without_l2_traffic() {
    let soc = run_trace(SocConfig::quad(), "core 0: LD 0x80\ncore 0: LD 0x88\n", 5);
    let stats = soc.stats();
    assert_eq!(stats.cores[0].l1.hits, 1);
    assert_eq!(stats.cores[0].l2.hits + stats.cores[0].l2.misses, 1);
}

#[test]
fn amo_invalidates_l1_copy() {
    let soc = run_trace(SocConfig::quad(), "core 0: LD 0x100\ncore 0: AMOADD 0x100 5\ncore 0: LD 0x100\n", 2);
    assert_eq!(soc.cores()[0].results, vec![0, 0, 5]);
    assert!(soc.monitor.violations.is_empty());
}

#[test]
fn remote_store_invalidates_sharer() {
    let text = "core 0: LD 0x40\ncore 1: NOP\ncore 1: NOP\ncore 1: NOP\ncore 1: ST 0x40 9\n";
    let soc = run_trace(SocConfig::quad(), text, 11);
    assert_eq!(soc.read_coherent(0x40), 9);
    assert!(soc.monitor.violations.is_empty());
}

#[test]
fn contended_amos_are_atomic() {
    let mut text = String::new();
    for c in 0..4 {
        for _ in 0..10 {
            text.push_str(&format!("core {c}: AMOADD 0x200 1\n"));
        }
    }
    let soc = run_trace(SocConfig::quad(), &text, 9);
    assert_eq!(soc.read_coherent(0x200), 40);
    assert!(soc.monitor.violations.is_empty(), "{:?}", soc.monitor.violations);
}

#[test]
fn lr_sc_increment_loop() {
    struct Inc {
        left: u32,
        phase: u8,
        seen: u64,
    }
    impl Program for Inc {
        fn next_op(&mut self, last: Option<u64>) -> Option<TraceOp> {
            match self.phase {
                0 if self.left == 0 => None,
                0 => {
                    self.phase = 1;
                    Some(TraceOp::Lr(0x300))
                }
                1 => {
                    self.seen = last.unwrap();
                    self.phase = 2;
                    Some(TraceOp::Sc(0x300, self.seen + 1))
                }
                _ => {
                    if last == Some(0) {
                        self.left -= 1;
                    }
                    self.phase = 0;
                    self.next_op(None)
                }
            }
        }
    }
    let programs: Vec<Box<dyn Program>> = (0..4).map(|_| Box::new(Inc { left: 5, phase: 0, seen: 0 }) as Box<dyn Program>).collect();
    let mut soc = Soc::new(SocConfig::quad(), programs, 4).unwrap();
    assert!(soc.run(500_000).unwrap().completed);
    assert_eq!(soc.read_coherent(0x300), 20);
    assert!(soc.monitor.violations.is_empty(), "{:?}", soc.monitor.violations);
}

#[test]
fn flush_writes_back_and_empties_caches() {
    let soc = run_trace(SocConfig::quad(), "core 0: ST 0x40 3\ncore 0: LD 0x80\ncore 0: FLUSH\n", 6);
    let l2 = soc.l2(TileId(0)).unwrap();
    assert!(l2.lines().is_empty());
    assert_eq!(soc.cores()[0].l1.valid_lines(), 0);
    assert_eq!(soc.dir_entry(0x40).state, DirState::V);
    assert_eq!(soc.read_coherent(0x40), 3);
    assert_eq!(soc.monitor.count(ViolationKind::FlushOrder), 0);
}

#[test]
fn llc_flush_register_reaches_memory() {
    let flush = MmioMap::new(0x8000_0000, 9).register(TileId(1), MmioMap::FLUSH);
    let status = MmioMap::new(0x8000_0000, 9).register(TileId(1), MmioMap::STATUS);
    let text = format!("core 0: ST 0x40 3\ncore 0: FLUSH\ncore 0: MMIOW {flush:#x} 1\ncore 0: POLL {status:#x} 1\n");
    let soc = run_trace(SocConfig::quad(), &text, 6);
    assert_eq!(soc.memory().read_word(0x40), 3);
}

fn dma_job(write: bool) -> Vec<DmaDesc> {
    vec![DmaDesc { base: 0x1000, len: 64, write, value: 0xab, compute: 10 }]
}

fn invoke_accelerator(cfg: SocConfig, prelude: &str) -> Soc {
    let start = MmioMap::new(cfg.mmio_base, 9).register(TileId(3), MmioMap::ACC_START);
    let text = format!("{prelude}core 0: MMIOW {start:#x} 1\ncore 0: WAITIRQ\ncore 0: LD 0x1000\n");
    run_trace(cfg, &text, 8)
}

#[test]
fn coherent_dma_write_is_visible_to_core() {
    for mode in [AccelMode::LlcCoherent, AccelMode::FullyCoherent] {
        let soc = invoke_accelerator(SocConfig::quad_with_accelerator(mode, dma_job(true)), "core 0: LD 0x1000\n");
        assert_eq!(soc.cores()[0].results, vec![0, 0xab], "{mode:?}");
        assert_eq!(soc.cores()[0].stats.irqs, 1);
        assert!(soc.monitor.violations.is_empty(), "{mode:?}: {:?}", soc.monitor.violations);
    }
}

#[test]
fn coherent_dma_read_sees_dirty_data() {
    for mode in [AccelMode::LlcCoherent, AccelMode::FullyCoherent] {
        let soc = invoke_accelerator(SocConfig::quad_with_accelerator(mode, dma_job(false)), "core 0: ST 0x1008 5\n");
        let acc = soc.accelerator(TileId(3)).unwrap();
        assert!(acc.reads.contains(&(0x1008, 5)), "{mode:?}");
        assert!(soc.monitor.violations.is_empty(), "{mode:?}: {:?}", soc.monitor.violations);
    }
}

#[test]
fn non_coherent_read_without_flush_is_stale() {
    let cfg = SocConfig::quad_with_accelerator(AccelMode::NonCoherent, dma_job(false));
    let soc = invoke_accelerator(cfg, "core 0: ST 0x1008 5\n");
    assert!(soc.monitor.count(ViolationKind::StaleDma) >= 1);
}

#[test]
fn non_coherent_read_after_flush_is_fresh() {
    let cfg = SocConfig::quad_with_accelerator(AccelMode::NonCoherent, dma_job(false));
    let flush = MmioMap::new(cfg.mmio_base, 9).register(TileId(1), MmioMap::FLUSH);
    let status = MmioMap::new(cfg.mmio_base, 9).register(TileId(1), MmioMap::STATUS);
    let prelude = format!("core 0: ST 0x1008 5\ncore 0: FLUSH\ncore 0: MMIOW {flush:#x} 1\ncore 0: POLL {status:#x} 1\n");
    let soc = invoke_accelerator(cfg, &prelude);
    assert_eq!(soc.monitor.count(ViolationKind::StaleDma), 0, "{:?}", soc.monitor.violations);
    assert!(soc.accelerator(TileId(3)).unwrap().reads.contains(&(0x1008, 5)));
}

#[test]
fn same_seed_same_stats() {
    let text = "core 0: ST 0x40 1\ncore 1: LD 0x40\ncore 2: AMOADD 0x40 2\ncore 3: LD 0x80040\n";
    let a = run_trace(SocConfig::quad(), text, 42).stats().to_json();
    let b = run_trace(SocConfig::quad(), text, 42).stats().to_json();
    assert_eq!(a, b);
}

#[test]
fn watchdog_reports_lost_message() {
    let mut cfg = SocConfig::quad();
    cfg.llc.fault = Some(crate::llc::Fault::DroppedResponse);
    cfg.watchdog = 500;
    let trace = Trace::parse("core 0: LD 0x40\n", "t").unwrap();
    let mut soc = Soc::with_trace(cfg, &trace, 1).unwrap();
    let s = soc.run(100_000).unwrap();
    assert!(!s.completed);
    assert!(soc.is_stuck());
    assert_eq!(soc.monitor.count(ViolationKind::LostMessage), 1);
}
