use serde::{Deserialize, Serialize};

use crate::llc::DmaBurst;
use crate::partition::AddressMap;
use crate::types::{CohMsg, MsgKind, MsgMeta, TileId};

/// Memory-mapped register window: one 0x100-byte block per tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmioMap {
    pub base: u64,
    pub tiles: usize,
}

impl MmioMap {
    pub const STRIDE: u64 = 0x100;
    /// Write 1 to start an LLC flush (memory tiles) or an L2 flush (processor tiles).
    pub const FLUSH: u64 = 0x0;
    /// Reads 1 once the last flush has completed, 0 while it runs.
    pub const STATUS: u64 = 0x8;
    /// Write any value to start the tile's accelerator job.
    pub const ACC_START: u64 = 0x10;

    pub fn new(base: u64, tiles: usize) -> Self {
        Self { base, tiles }
    }

    pub fn register(&self, tile: TileId, offset: u64) -> u64 {
        self.base + tile.0 as u64 * Self::STRIDE + offset
    }

    /// Tile and register offset addressed by `addr`, if mapped.
    pub fn decode(&self, addr: u64) -> Option<(TileId, u64)> {
        let rel = addr.checked_sub(self.base)?;
        let tile = (rel / Self::STRIDE) as usize;
        (tile < self.tiles).then_some((TileId(tile), rel % Self::STRIDE))
    }
}

/// A transaction as seen on a tile's local bus, before the proxy picks a
/// destination. Messages whose target follows from the address carry no
/// explicit destination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusRequest {
    pub kind: MsgKind,
    pub addr: u64,
    pub src: TileId,
    pub dst: Option<TileId>,
    pub payload: Option<Vec<u8>>,
    pub meta: MsgMeta,
}

impl BusRequest {
    pub fn new(kind: MsgKind, addr: u64, src: TileId) -> Self {
        Self { kind, addr, src, dst: None, payload: None, meta: MsgMeta::default() }
    }
}

/// Converts bus transactions to NoC messages and back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proxy {
    pub map: AddressMap,
    pub mmio: MmioMap,
}

/// Kinds whose destination the proxy derives from the address.
pub fn routed_by_address(kind: MsgKind) -> bool {
    use MsgKind::*;
    matches!(kind, GetS | GetM | PutS | PutM | DmaReadBurst | DmaWriteBurst | MmioRead | MmioWrite)
}

impl Proxy {
    pub fn new(map: AddressMap, mmio: MmioMap) -> Self {
        Self { map, mmio }
    }

    /// Resolves the destination of `req`. An unmapped MMIO access turns into
    /// an error response addressed back to the requester.
    pub fn inject(&self, req: BusRequest) -> CohMsg {
        let dst = match req.kind {
            MsgKind::MmioRead | MsgKind::MmioWrite => match self.mmio.decode(req.addr) {
                Some((t, _)) => t,
                None => {
                    let meta = MsgMeta { error: true, ..Default::default() };
                    return CohMsg::new(MsgKind::MmioRsp, req.addr, req.src, req.src).with_meta(meta);
                }
            },
            k if routed_by_address(k) => self.map.home(req.addr),
            _ => req.dst.expect("explicitly addressed message needs a destination"),
        };
        let mut msg = CohMsg::new(req.kind, req.addr, req.src, dst).with_meta(req.meta);
        msg.payload = req.payload;
        msg
    }

    pub fn eject(&self, msg: CohMsg) -> BusRequest {
        let dst = (!routed_by_address(msg.kind)).then_some(msg.dst);
        BusRequest { kind: msg.kind, addr: msg.addr.0, src: msg.src, dst, payload: msg.payload, meta: msg.meta }
    }
}

/// Splits a burst so that no piece crosses a memory partition boundary.
pub fn split_burst(burst: &DmaBurst, map: &AddressMap) -> Vec<DmaBurst> {
    let mut pieces = Vec::new();
    let mut at = burst.base;
    while at < burst.end() {
        let stop = map.partition_end(at).min(burst.end());
        let piece = if burst.write {
            let data = burst.data.as_ref().expect("write burst data");
            DmaBurst::write(burst.src, at, data[(at - burst.base) as usize..(stop - burst.base) as usize].to_vec())
        } else {
            DmaBurst::read(burst.src, at, stop - at)
        };
        pieces.push(piece);
        at = stop;
    }
    pieces
}
