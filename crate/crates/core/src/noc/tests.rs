use super::*;
use crate::llc::DmaBurst;
use crate::partition::AddressMap;
use crate::types::{MsgKind, MsgMeta};
use proptest::prelude::*;

fn mesh(cols: usize, rows: usize) -> Mesh {
    Mesh::new(NocConfig::new(cols, rows))
}

fn msg(kind: MsgKind, src: usize, dst: usize, tag: u64) -> CohMsg {
    CohMsg::new(kind, tag, TileId(src), TileId(dst))
}

/// Steps until `n` packets came out or `limit` cycles passed.
fn run(m: &mut Mesh, start: u64, n: usize, limit: u64) -> Vec<Delivery> {
    let mut got = Vec::new();
    let mut now = start;
    while got.len() < n && now < start + limit {
        now += 1;
        got.extend(m.step(now));
    }
    got
}

#[test]
fn route_decisions() {
    assert_eq!(route_next(Coord::new(1, 1), Coord::new(1, 1)), Port::Local);
    assert_eq!(route_next(Coord::new(0, 0), Coord::new(2, 0)), Port::East);
    assert_eq!(route_next(Coord::new(2, 0), Coord::new(0, 3)), Port::West);
    assert_eq!(route_next(Coord::new(0, 0), Coord::new(0, 3)), Port::South);
    assert_eq!(route_next(Coord::new(0, 3), Coord::new(0, 0)), Port::North);
}

#[test]
fn corner_to_corner_takes_manhattan_cycles() {
    let mut m = mesh(3, 4);
    let dst = m.tile_at(Coord::new(2, 3)).0;
    m.inject(msg(MsgKind::GetS, 0, dst, 0), 10);
    let d = run(&mut m, 10, 1, 50);
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].latency(), 5);
    assert_eq!(d[0].hops, 5);
    assert!(m.is_idle());
}

#[test]
fn same_pair_same_plane_stays_in_order() {
    let mut m = mesh(4, 4);
    for i in 0..20 {
        m.inject(msg(MsgKind::GetS, 0, 15, i), 0);
    }
    let d = run(&mut m, 0, 20, 200);
    let order: Vec<u64> = d.iter().map(|d| d.msg.addr.0).collect();
    assert_eq!(order, (0..20).collect::<Vec<_>>());
}

#[test]
fn load_on_one_plane_leaves_another_untouched() {
    let latency = |flood: bool| {
        let mut m = mesh(4, 1);
        if flood {
            for i in 0..64 {
                m.inject(msg(MsgKind::GetS, 0, 3, i), 0);
            }
        }
        m.inject(msg(MsgKind::DataRsp, 0, 3, 999), 0);
        let d = run(&mut m, 0, if flood { 65 } else { 1 }, 1000);
        d.iter().find(|d| d.msg.kind == MsgKind::DataRsp).unwrap().latency()
    };
    assert_eq!(latency(false), 3);
    assert_eq!(latency(true), 3);
}

#[test]
fn backpressure_holds_packets_without_loss() {
    let mut m = Mesh::new(NocConfig { queue_depth: 1, ..NocConfig::new(2, 2) });
    for s in 0..4 {
        for i in 0..10 {
            m.inject(msg(MsgKind::GetM, s, 3 - s, i), 0);
        }
    }
    let d = run(&mut m, 0, 40, 500);
    assert_eq!(d.len(), 40);
    assert!(m.is_idle());
}

#[test]
fn trace_lines_record_deliveries() {
    let mut m = mesh(2, 1);
    m.enable_trace();
    m.inject(msg(MsgKind::Irq, 0, 1, 0x40), 0);
    run(&mut m, 0, 1, 10);
    assert_eq!(m.take_trace(), vec!["1 5 0 1 Irq 0x40".to_string()]);
}

fn proxy() -> Proxy {
    Proxy::new(AddressMap::new(1 << 20, vec![TileId(1), TileId(7)]), MmioMap::new(0x1000_0000, 9))
}

#[test]
fn proxy_resolves_home_and_registers() {
    let p = proxy();
    let m = p.inject(BusRequest::new(MsgKind::GetS, 0x80000, TileId(0)));
    assert_eq!(m.dst, TileId(7));
    let m = p.inject(BusRequest::new(MsgKind::GetS, 0x7FFF0, TileId(0)));
    assert_eq!(m.dst, TileId(1));
    let reg = p.mmio.register(TileId(1), MmioMap::FLUSH);
    let m = p.inject(BusRequest::new(MsgKind::MmioWrite, reg, TileId(0)));
    assert_eq!((m.dst, m.kind.plane()), (TileId(1), Plane::MISC));
    assert_eq!(p.mmio.decode(reg), Some((TileId(1), 0)));
}

#[test]
fn unmapped_register_yields_error_response() {
    let p = proxy();
    let m = p.inject(BusRequest::new(MsgKind::MmioRead, 0x2000_0000, TileId(3)));
    assert_eq!((m.kind, m.dst), (MsgKind::MmioRsp, TileId(3)));
    assert!(m.meta.error);
}

#[test]
fn bursts_split_at_partition_boundary() {
    let map = AddressMap::new(1 << 20, vec![TileId(1), TileId(7)]);
    let b = DmaBurst::read(TileId(2), 0x7FFE0, 64);
    let parts = split_burst(&b, &map);
    assert_eq!(parts.len(), 2);
    assert_eq!((parts[0].base, parts[0].len), (0x7FFE0, 32));
    assert_eq!((parts[1].base, parts[1].len), (0x80000, 32));
    let w = DmaBurst::write(TileId(2), 0x7FFF0, (0u8..32).collect());
    let parts = split_burst(&w, &map);
    assert_eq!(parts[1].data.as_ref().unwrap()[0], 16);
}

fn kind_strategy() -> impl Strategy<Value = MsgKind> {
    proptest::sample::select(MsgKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]
    #[test]
    fn proxy_round_trip(kind in kind_strategy(), addr in 0u64..(1 << 20), src in 0usize..9, dst in 0usize..9, value: u64, lock: bool) {
        let p = proxy();
        let addr = if matches!(kind, MsgKind::MmioRead | MsgKind::MmioWrite) { 0x1000_0000 + addr % 0x900 } else { addr };
        let mut req = BusRequest::new(kind, addr, TileId(src));
        req.meta = MsgMeta { value, lock, ..Default::default() };
        if !routed_by_address(kind) {
            req.dst = Some(TileId(dst));
        }
        prop_assert_eq!(p.eject(p.inject(req.clone())), req);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn hops_follow_manhattan_distance(sx in 0usize..5, sy in 0usize..5, dx in 0usize..5, dy in 0usize..5) {
        let mut m = mesh(5, 5);
        let (s, d) = (Coord::new(sx, sy), Coord::new(dx, dy));
        m.inject(msg(MsgKind::GetS, m.tile_at(s).0, m.tile_at(d).0, 0), 0);
        let got = run(&mut m, 0, 1, 40);
        prop_assert_eq!(got[0].hops, s.manhattan(d));
        prop_assert_eq!(got[0].latency() as usize, s.manhattan(d).max(1));
    }
}
