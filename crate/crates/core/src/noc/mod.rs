//! Six-plane 2D mesh with one input-queued router per tile.
//!
//! Routing is dimension order (X first, then Y). A packet moves at most one
//! hop per cycle and is handed to its destination tile in the same cycle it
//! reaches that tile's router, so an uncontended packet travelling `d` hops
//! is delivered exactly `d` cycles after injection.

mod proxy;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{CohMsg, Plane, TileId};

pub use proxy::{routed_by_address, split_burst, BusRequest, MmioMap, Proxy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub x: usize,
    pub y: usize,
}

impl Coord {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: Coord) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

/// Router ports. North is towards smaller `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Port {
    North,
    South,
    East,
    West,
    Local,
}

impl Port {
    pub const ALL: [Port; 5] = [Port::North, Port::South, Port::East, Port::West, Port::Local];

    fn index(self) -> usize {
        self as usize
    }

    /// Port on the neighbouring router at which a packet sent out of `self` arrives.
    fn opposite(self) -> Port {
        match self {
            Port::North => Port::South,
            Port::South => Port::North,
            Port::East => Port::West,
            Port::West => Port::East,
            Port::Local => Port::Local,
        }
    }
}

/// Dimension-order routing decision at `cur` for a packet headed to `dst`.
pub fn route_next(cur: Coord, dst: Coord) -> Port {
    if dst.x > cur.x {
        Port::East
    } else if dst.x < cur.x {
        Port::West
    } else if dst.y > cur.y {
        Port::South
    } else if dst.y < cur.y {
        Port::North
    } else {
        Port::Local
    }
}

fn step_towards(cur: Coord, port: Port) -> Coord {
    match port {
        Port::North => Coord::new(cur.x, cur.y - 1),
        Port::South => Coord::new(cur.x, cur.y + 1),
        Port::East => Coord::new(cur.x + 1, cur.y),
        Port::West => Coord::new(cur.x - 1, cur.y),
        Port::Local => cur,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub msg: CohMsg,
    pub src: Coord,
    pub dst: Coord,
    pub plane: Plane,
    pub injected: u64,
    /// Routing decision for the router the packet sits in, computed one hop early.
    next: Port,
    hops: usize,
}

impl Packet {
    pub fn hops(&self) -> usize {
        self.hops
    }
}

/// A packet handed to its destination tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub msg: CohMsg,
    pub plane: Plane,
    pub injected: u64,
    pub delivered: u64,
    pub hops: usize,
}

impl Delivery {
    pub fn latency(&self) -> u64 {
        self.delivered - self.injected
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NocConfig {
    pub cols: usize,
    pub rows: usize,
    pub queue_depth: usize,
    pub seed: u64,
}

impl NocConfig {
    pub fn new(cols: usize, rows: usize) -> Self {
        Self { cols, rows, queue_depth: 4, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PlaneStats {
    pub packets: u64,
    pub total_latency: u64,
    pub max_latency: u64,
    pub hops: u64,
    /// Cycles in which a head packet could not advance for lack of space.
    pub blocked: u64,
}

impl PlaneStats {
    pub fn mean_latency(&self) -> f64 {
        if self.packets == 0 {
            0.0
        } else {
            self.total_latency as f64 / self.packets as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct NocStats {
    pub planes: [PlaneStats; Plane::COUNT],
}

#[derive(Debug, Clone)]
struct Router {
    /// `queues[plane][in_port]`
    queues: Vec<[VecDeque<Packet>; 5]>,
    /// Round-robin pointer per plane and output port.
    rr: Vec<[usize; 5]>,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    cfg: NocConfig,
    routers: Vec<Router>,
    /// Network-interface buffers waiting for room in the local input queue.
    pending: Vec<[VecDeque<Packet>; Plane::COUNT]>,
    in_flight: usize,
    trace: Option<Vec<String>>,
    pub stats: NocStats,
}

impl Mesh {
    pub fn new(cfg: NocConfig) -> Self {
        assert!(cfg.cols > 0 && cfg.rows > 0 && cfg.queue_depth > 0, "empty mesh");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = cfg.cols * cfg.rows;
        let routers = (0..n)
            .map(|_| Router {
                queues: (0..Plane::COUNT).map(|_| Default::default()).collect(),
                rr: (0..Plane::COUNT).map(|_| std::array::from_fn(|_| rng.gen_range(0..5))).collect(),
            })
            .collect();
        Self { cfg, routers, pending: (0..n).map(|_| Default::default()).collect(), in_flight: 0, trace: None, stats: NocStats::default() }
    }

    pub fn config(&self) -> &NocConfig {
        &self.cfg
    }

    pub fn tiles(&self) -> usize {
        self.routers.len()
    }

    pub fn coord(&self, t: TileId) -> Coord {
        Coord::new(t.0 % self.cfg.cols, t.0 / self.cfg.cols)
    }

    pub fn tile_at(&self, c: Coord) -> TileId {
        TileId(c.y * self.cfg.cols + c.x)
    }

    /// Starts recording one text line per delivered packet.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<String> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    pub fn is_idle(&self) -> bool {
        self.in_flight == 0
    }

    /// Queues `msg` at its source tile. Injection never fails; packets wait
    /// in the network interface until the router has room.
    pub fn inject(&mut self, msg: CohMsg, now: u64) {
        assert!(msg.src.0 < self.tiles() && msg.dst.0 < self.tiles(), "packet endpoint outside the mesh: {msg:?}");
        let src = self.coord(msg.src);
        let dst = self.coord(msg.dst);
        let plane = msg.kind.plane();
        let pkt = Packet { msg, src, dst, plane, injected: now, next: route_next(src, dst), hops: 0 };
        let at = self.tile_at(src).0;
        self.in_flight += 1;
        self.pending[at][plane.index()].push_back(pkt);
    }

    /// Advances every router by one cycle and returns the packets delivered.
    pub fn step(&mut self, now: u64) -> Vec<Delivery> {
        let depth = self.cfg.queue_depth;
        for (r, pend) in self.pending.iter_mut().enumerate() {
            for (p, q) in pend.iter_mut().enumerate() {
                let local = &mut self.routers[r].queues[p][Port::Local.index()];
                while local.len() < depth {
                    match q.pop_front() {
                        Some(pkt) => local.push_back(pkt),
                        None => break,
                    }
                }
            }
        }

        // Decide all moves against the start-of-cycle state, then apply them.
        let mut moves: Vec<(usize, usize, usize, Port)> = Vec::new();
        for r in 0..self.routers.len() {
            for p in 0..Plane::COUNT {
                for out in Port::ALL {
                    let router = &self.routers[r];
                    let start = router.rr[p][out.index()];
                    let winner = (0..5).map(|i| (start + i) % 5).find(|&i| router.queues[p][i].front().is_some_and(|pkt| pkt.next == out));
                    let Some(inp) = winner else { continue };
                    if out != Port::Local {
                        let here = self.coord(TileId(r));
                        let there = self.tile_at(step_towards(here, out)).0;
                        let pkt = router.queues[p][inp].front().unwrap();
                        let ejects = step_towards(here, out) == pkt.dst;
                        let room = self.routers[there].queues[p][out.opposite().index()].len() < depth;
                        if !ejects && !room {
                            self.stats.planes[p].blocked += 1;
                            continue;
                        }
                    }
                    self.routers[r].rr[p][out.index()] = (inp + 1) % 5;
                    moves.push((r, p, inp, out));
                }
            }
        }

        let mut delivered = Vec::new();
        for (r, p, inp, out) in moves {
            let mut pkt = self.routers[r].queues[p][inp].pop_front().expect("scheduled packet");
            let here = self.coord(TileId(r));
            let next_at = step_towards(here, out);
            if out != Port::Local {
                pkt.hops += 1;
            }
            if next_at == pkt.dst {
                delivered.push(self.deliver(pkt, now));
            } else {
                pkt.next = route_next(next_at, pkt.dst);
                let there = self.tile_at(next_at).0;
                self.routers[there].queues[p][out.opposite().index()].push_back(pkt);
            }
        }
        delivered
    }

    fn deliver(&mut self, pkt: Packet, now: u64) -> Delivery {
        self.in_flight -= 1;
        let d = Delivery { msg: pkt.msg, plane: pkt.plane, injected: pkt.injected, delivered: now, hops: pkt.hops };
        let s = &mut self.stats.planes[d.plane.index()];
        s.packets += 1;
        s.total_latency += d.latency();
        s.max_latency = s.max_latency.max(d.latency());
        s.hops += d.hops as u64;
        if let Some(t) = self.trace.as_mut() {
            t.push(format!("{} {} {} {} {:?} {:#x}", now, d.plane.0, d.msg.src.0, d.msg.dst.0, d.msg.kind, d.msg.addr.0));
        }
        d
    }
}

#[cfg(test)]
mod tests;
