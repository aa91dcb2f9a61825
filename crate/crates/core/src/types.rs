//! Addresses, cache geometry, coherence states and the message vocabulary
//! shared by every controller.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of a data word as seen by cores, atomics and the trace format.
pub const WORD_BYTES: u64 = 8;

/// Physical byte address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Addr(pub u64);

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// Raster index of a tile in the grid (`y * cols + x`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct TileId(pub usize);

impl fmt::Display for TileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Byte order used to pack words into cache lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endianness {
    #[default]
    Little,
    Big,
}

impl Endianness {
    pub fn read_word(self, bytes: &[u8]) -> u64 {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&bytes[..8]);
        match self {
            Endianness::Little => u64::from_le_bytes(buf),
            Endianness::Big => u64::from_be_bytes(buf),
        }
    }

    pub fn write_word(self, bytes: &mut [u8], value: u64) {
        let buf = match self {
            Endianness::Little => value.to_le_bytes(),
            Endianness::Big => value.to_be_bytes(),
        };
        bytes[..8].copy_from_slice(&buf);
    }
}

/// Set-associative cache shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheGeometry {
    pub line_bytes: u32,
    pub sets: u32,
    pub ways: u32,
}

/// Result of splitting an address against a [`CacheGeometry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineSplit {
    pub tag: u64,
    pub set: u32,
    pub offset: u32,
}

impl CacheGeometry {
    pub fn new(line_bytes: u32, sets: u32, ways: u32) -> Result<Self> {
        if !line_bytes.is_power_of_two() || u64::from(line_bytes) < WORD_BYTES {
            return Err(Error::config(format!("line size {line_bytes} must be a power of two and at least {WORD_BYTES} bytes")));
        }
        if !sets.is_power_of_two() {
            return Err(Error::config(format!("set count {sets} must be a power of two")));
        }
        if ways == 0 {
            return Err(Error::config("way count must be positive"));
        }
        Ok(Self { line_bytes, sets, ways })
    }

    /// Builds a geometry from a total capacity, line size and associativity.
    pub fn with_capacity(capacity: u64, line_bytes: u32, ways: u32) -> Result<Self> {
        let per_set = u64::from(line_bytes) * u64::from(ways.max(1));
        if per_set == 0 || !capacity.is_multiple_of(per_set) {
            return Err(Error::config(format!("capacity {capacity} is not a multiple of {ways} ways x {line_bytes}-byte lines")));
        }
        let sets = u32::try_from(capacity / per_set).map_err(|_| Error::config("cache capacity too large"))?;
        Self::new(line_bytes, sets, ways)
    }

    pub fn capacity(&self) -> u64 {
        u64::from(self.line_bytes) * u64::from(self.sets) * u64::from(self.ways)
    }

    pub fn line_of(&self, addr: u64) -> u64 {
        addr & !(u64::from(self.line_bytes) - 1)
    }

    pub fn set_of(&self, addr: u64) -> usize {
        ((addr >> self.line_bytes.trailing_zeros()) & u64::from(self.sets - 1)) as usize
    }

    pub fn offset_of(&self, addr: u64) -> usize {
        (addr & (u64::from(self.line_bytes) - 1)) as usize
    }

    pub fn split(&self, addr: u64) -> LineSplit {
        let off_bits = self.line_bytes.trailing_zeros();
        let set_bits = self.sets.trailing_zeros();
        LineSplit { tag: addr >> (off_bits + set_bits), set: self.set_of(addr) as u32, offset: self.offset_of(addr) as u32 }
    }

    pub fn compose(&self, split: LineSplit) -> u64 {
        let off_bits = self.line_bytes.trailing_zeros();
        let set_bits = self.sets.trailing_zeros();
        (split.tag << (off_bits + set_bits)) | (u64::from(split.set) << off_bits) | u64::from(split.offset)
    }
}

/// Splits `addr` into (tag, set, offset), rejecting addresses beyond `mem_size`.
pub fn line_split(addr: Addr, geom: &CacheGeometry, mem_size: u64) -> Result<LineSplit> {
    if addr.0 >= mem_size {
        return Err(Error::AddressOutOfRange { addr: addr.0, mem_size });
    }
    Ok(geom.split(addr.0))
}

/// State of a line in a private L2.
///
/// The LLC-only Valid state has no L2 counterpart. `MiA` covers every
/// outstanding writeback (PutS or PutM) while the data waits in the MSHR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LineState {
    I,
    S,
    E,
    M,
    IsA,
    ImA,
    SmA,
    MiA,
    /// Atomic read performed, closing write pending.
    Xmw,
}

impl LineState {
    pub fn is_stable(self) -> bool {
        matches!(self, LineState::I | LineState::S | LineState::E | LineState::M)
    }

    /// Whether the holder may write without asking the directory.
    pub fn is_writable(self) -> bool {
        matches!(self, LineState::E | LineState::M | LineState::Xmw)
    }

    pub fn is_readable(self) -> bool {
        matches!(self, LineState::S | LineState::E | LineState::M | LineState::Xmw)
    }
}

/// Directory state of an LLC line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DirState {
    I,
    V,
    S,
    E,
    M,
    BusyRecall,
    BusyMem,
}

/// Set of tile ids, up to 64 tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Sharers(u64);

impl Sharers {
    pub fn insert(&mut self, t: TileId) {
        self.0 |= 1 << t.0;
    }
    pub fn remove(&mut self, t: TileId) {
        self.0 &= !(1 << t.0);
    }
    pub fn contains(&self, t: TileId) -> bool {
        self.0 & (1 << t.0) != 0
    }
    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }
    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }
    pub fn clear(&mut self) {
        self.0 = 0;
    }
    pub fn iter(&self) -> impl Iterator<Item = TileId> + '_ {
        (0..64).filter(|b| self.0 & (1 << b) != 0).map(TileId)
    }
}

/// Directory metadata kept alongside each LLC line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DirEntry {
    pub state: DirState,
    pub owner: Option<TileId>,
    pub sharers: Sharers,
    pub dirty: bool,
}

impl DirEntry {
    pub fn valid() -> Self {
        Self { state: DirState::V, owner: None, sharers: Sharers::default(), dirty: false }
    }

    /// Structural invariants of stable directory states. Busy states carry
    /// in-flight bookkeeping and are not checked.
    pub fn check(&self) -> std::result::Result<(), String> {
        match self.state {
            DirState::M | DirState::E => {
                if self.owner.is_none() || !self.sharers.is_empty() {
                    return Err(format!("{:?} needs exactly one owner and no sharers: {self:?}", self.state));
                }
            }
            DirState::S => {
                if self.sharers.is_empty() || self.owner.is_some() {
                    return Err(format!("S needs sharers and no owner: {self:?}"));
                }
            }
            DirState::V | DirState::I => {
                if self.owner.is_some() || !self.sharers.is_empty() {
                    return Err(format!("{:?} must have neither owner nor sharers: {self:?}", self.state));
                }
            }
            DirState::BusyRecall | DirState::BusyMem => {}
        }
        Ok(())
    }
}

/// Permission bits recorded per L2 line and sent with L1 invalidations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Perm(pub u8);

impl Perm {
    pub const NONE: Perm = Perm(0);
    pub const INSTRUCTION: Perm = Perm(0b01);
    pub const DATA: Perm = Perm(0b10);

    pub fn contains(self, other: Perm) -> bool {
        other.0 != 0 && self.0 & other.0 == other.0
    }
    pub fn union(self, other: Perm) -> Perm {
        Perm(self.0 | other.0)
    }
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

/// RISC-V AMO flavours, encoded with AXI5 `atop` codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AtomicOp {
    Add,
    Swap,
    And,
    Or,
    Xor,
    Min,
    Max,
    MinU,
    MaxU,
}

impl AtomicOp {
    pub const ALL: [AtomicOp; 9] = [
        AtomicOp::Add,
        AtomicOp::Swap,
        AtomicOp::And,
        AtomicOp::Or,
        AtomicOp::Xor,
        AtomicOp::Min,
        AtomicOp::Max,
        AtomicOp::MinU,
        AtomicOp::MaxU,
    ];

    /// Non-zero `atop` code; zero is reserved for LR/SC.
    pub fn atop(self) -> u8 {
        match self {
            AtomicOp::Add => 0x20,
            AtomicOp::And => 0x21,
            AtomicOp::Xor => 0x22,
            AtomicOp::Or => 0x23,
            AtomicOp::Max => 0x24,
            AtomicOp::Min => 0x25,
            AtomicOp::MaxU => 0x26,
            AtomicOp::MinU => 0x27,
            AtomicOp::Swap => 0x30,
        }
    }

    pub fn from_atop(code: u8) -> Result<Self> {
        Self::ALL.into_iter().find(|op| op.atop() == code).ok_or(Error::UnsupportedAtop(code))
    }

    /// ALU of the AMO adapter: new memory value from the old one.
    pub fn apply(self, old: u64, operand: u64) -> u64 {
        match self {
            AtomicOp::Add => old.wrapping_add(operand),
            AtomicOp::Swap => operand,
            AtomicOp::And => old & operand,
            AtomicOp::Or => old | operand,
            AtomicOp::Xor => old ^ operand,
            AtomicOp::Min => (old as i64).min(operand as i64) as u64,
            AtomicOp::Max => (old as i64).max(operand as i64) as u64,
            AtomicOp::MinU => old.min(operand),
            AtomicOp::MaxU => old.max(operand),
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            AtomicOp::Add => "AMOADD",
            AtomicOp::Swap => "AMOSWAP",
            AtomicOp::And => "AMOAND",
            AtomicOp::Or => "AMOOR",
            AtomicOp::Xor => "AMOXOR",
            AtomicOp::Min => "AMOMIN",
            AtomicOp::Max => "AMOMAX",
            AtomicOp::MinU => "AMOMINU",
            AtomicOp::MaxU => "AMOMAXU",
        }
    }
}

/// Message kinds carried on the NoC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MsgKind {
    GetS,
    GetM,
    PutS,
    PutM,
    FwdGetS,
    FwdGetM,
    Inv,
    InvAck,
    DataRsp,
    WbAck,
    DmaReadBurst,
    DmaWriteBurst,
    DmaRsp,
    MmioRead,
    MmioWrite,
    MmioRsp,
    Irq,
}

impl MsgKind {
    pub const ALL: [MsgKind; 17] = [
        MsgKind::GetS,
        MsgKind::GetM,
        MsgKind::PutS,
        MsgKind::PutM,
        MsgKind::FwdGetS,
        MsgKind::FwdGetM,
        MsgKind::Inv,
        MsgKind::InvAck,
        MsgKind::DataRsp,
        MsgKind::WbAck,
        MsgKind::DmaReadBurst,
        MsgKind::DmaWriteBurst,
        MsgKind::DmaRsp,
        MsgKind::MmioRead,
        MsgKind::MmioWrite,
        MsgKind::MmioRsp,
        MsgKind::Irq,
    ];

    pub fn plane(self) -> Plane {
        use MsgKind::*;
        match self {
            GetS | GetM | PutS | PutM => Plane::REQUEST,
            FwdGetS | FwdGetM | Inv => Plane::FORWARD,
            InvAck | DataRsp | WbAck => Plane::RESPONSE,
            DmaReadBurst | DmaWriteBurst => Plane::DMA_REQUEST,
            DmaRsp => Plane::DMA_RESPONSE,
            MmioRead | MmioWrite | MmioRsp | Irq => Plane::MISC,
        }
    }
}

/// One of the six physical NoC planes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Plane(pub u8);

impl Plane {
    pub const COUNT: usize = 6;
    pub const REQUEST: Plane = Plane(0);
    pub const FORWARD: Plane = Plane(1);
    pub const RESPONSE: Plane = Plane(2);
    pub const DMA_REQUEST: Plane = Plane(3);
    pub const DMA_RESPONSE: Plane = Plane(4);
    pub const MISC: Plane = Plane(5);

    pub fn index(self) -> usize {
        usize::from(self.0)
    }
}

/// Exclusivity granted by a data response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Grant {
    #[default]
    Shared,
    Exclusive,
    Modified,
}

/// Side-band fields carried with a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MsgMeta {
    pub lock: bool,
    /// AMO code, zero for LR/SC and plain accesses.
    pub atop: u8,
    /// Reservation tag.
    pub user: u32,
    pub perm: Perm,
    /// Original requester of a forwarded request.
    pub requester: Option<TileId>,
    pub grant: Grant,
    pub dirty: bool,
    /// Ack from a cache that held no data for a forwarded request.
    pub no_data: bool,
    /// DMA burst that bypasses the LLC.
    pub non_coherent: bool,
    /// Burst length in bytes, MMIO data, or error flag for MMIO responses.
    pub value: u64,
    pub error: bool,
}

/// A coherence, DMA, MMIO or interrupt message.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CohMsg {
    pub kind: MsgKind,
    pub addr: Addr,
    pub src: TileId,
    pub dst: TileId,
    pub payload: Option<Vec<u8>>,
    pub meta: MsgMeta,
}

impl CohMsg {
    pub fn new(kind: MsgKind, addr: u64, src: TileId, dst: TileId) -> Self {
        Self { kind, addr: Addr(addr), src, dst, payload: None, meta: MsgMeta::default() }
    }

    pub fn with_payload(mut self, data: Vec<u8>) -> Self {
        self.payload = Some(data);
        self
    }

    pub fn with_meta(mut self, meta: MsgMeta) -> Self {
        self.meta = meta;
        self
    }
}

/// Fixed mapping of message kinds to NoC planes.
pub fn plane_of(msg: &CohMsg) -> Plane {
    msg.kind.plane()
}

/// Pseudo-LRU state for one set: one MRU bit per way.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Plru(u64);

impl Plru {
    pub fn touch(&mut self, way: usize, ways: usize) {
        self.0 |= 1 << way;
        let full = if ways >= 64 { u64::MAX } else { (1u64 << ways) - 1 };
        if self.0 & full == full {
            self.0 = 1 << way;
        }
    }

    /// First candidate way whose MRU bit is clear, else the first candidate.
    pub fn victim(&self, candidates: impl IntoIterator<Item = usize>) -> Option<usize> {
        let mut first = None;
        for w in candidates {
            if self.0 & (1 << w) == 0 {
                return Some(w);
            }
            first.get_or_insert(w);
        }
        first
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_zero_and_stride() {
        let g = CacheGeometry::new(16, 4, 2).unwrap();
        assert_eq!(g.split(0), LineSplit { tag: 0, set: 0, offset: 0 });
        assert_eq!(g.split(16), LineSplit { tag: 0, set: 1, offset: 0 });
        let s = g.split(0x12345);
        assert_eq!(g.compose(s), 0x12345);
    }

    #[test]
    fn split_rejects_out_of_range() {
        let g = CacheGeometry::new(16, 4, 2).unwrap();
        assert!(matches!(line_split(Addr(1 << 20), &g, 1 << 20), Err(Error::AddressOutOfRange { .. })));
        assert!(line_split(Addr((1 << 20) - 1), &g, 1 << 20).is_ok());
    }

    #[test]
    fn geometry_validation() {
        assert!(CacheGeometry::new(4, 4, 1).is_err());
        assert!(CacheGeometry::new(24, 4, 1).is_err());
        assert!(CacheGeometry::new(16, 3, 1).is_err());
        assert!(CacheGeometry::new(16, 4, 0).is_err());
        let g = CacheGeometry::with_capacity(64 * 1024, 16, 4).unwrap();
        assert_eq!(g.sets, 1024);
        assert_eq!(g.capacity(), 64 * 1024);
    }

    #[test]
    fn plane_mapping_is_fixed() {
        let m = |k| plane_of(&CohMsg::new(k, 0, TileId(0), TileId(1))).0;
        assert_eq!(m(MsgKind::GetS), 0);
        assert_eq!(m(MsgKind::FwdGetM), 1);
        assert_eq!(m(MsgKind::DataRsp), 2);
        assert_eq!(m(MsgKind::DmaReadBurst), 3);
        assert_eq!(m(MsgKind::DmaRsp), 4);
        assert_eq!(m(MsgKind::MmioWrite), 5);
    }

    #[test]
    fn requests_and_responses_never_share_a_plane() {
        use MsgKind::*;
        let pairs = [
            (GetS, DataRsp),
            (GetM, DataRsp),
            (PutS, WbAck),
            (PutM, WbAck),
            (FwdGetS, DataRsp),
            (FwdGetM, DataRsp),
            (Inv, InvAck),
            (DmaReadBurst, DmaRsp),
            (DmaWriteBurst, DmaRsp),
        ];
        for (req, rsp) in pairs {
            assert_ne!(req.plane(), rsp.plane(), "{req:?} / {rsp:?}");
        }
        assert!(MsgKind::ALL.iter().all(|k| k.plane().index() < Plane::COUNT));
    }

    #[test]
    fn atop_codes_round_trip_and_lrsc_is_zero() {
        for op in AtomicOp::ALL {
            assert_ne!(op.atop(), 0);
            assert_eq!(AtomicOp::from_atop(op.atop()).unwrap(), op);
        }
        assert!(matches!(AtomicOp::from_atop(0x99), Err(Error::UnsupportedAtop(0x99))));
    }

    #[test]
    fn alu_examples() {
        assert_eq!(AtomicOp::Add.apply(5, 3), 8);
        assert_eq!(AtomicOp::Swap.apply(7, 9), 9);
        assert_eq!(AtomicOp::Max.apply(3, (-1i64) as u64), 3);
        assert_eq!(AtomicOp::MinU.apply(3, 0xFFFF_FFFF), 3);
        assert_eq!(AtomicOp::Min.apply(3, (-1i64) as u64), (-1i64) as u64);
        assert_eq!(AtomicOp::MaxU.apply(3, (-1i64) as u64), u64::MAX);
    }

    #[test]
    fn dir_entry_invariants() {
        let mut d = DirEntry::valid();
        assert!(d.check().is_ok());
        d.sharers.insert(TileId(2));
        assert!(d.check().is_err());
        d.state = DirState::S;
        assert!(d.check().is_ok());
        d.state = DirState::M;
        assert!(d.check().is_err());
        d.sharers.clear();
        d.owner = Some(TileId(1));
        assert!(d.check().is_ok());
    }

    #[test]
    fn plru_prefers_cold_ways() {
        let mut p = Plru::default();
        p.touch(0, 4);
        p.touch(1, 4);
        assert_eq!(p.victim(0..4), Some(2));
        p.touch(2, 4);
        p.touch(3, 4);
        // all bits were set, so only way 3 remains marked
        assert_eq!(p.victim(0..4), Some(0));
        assert_eq!(p.victim([3]), Some(3));
    }

    proptest! {
        #[test]
        fn split_compose_bijection(addr in 0u64..(1 << 40), line_pow in 3u32..8, set_pow in 0u32..12) {
            let g = CacheGeometry::new(1 << line_pow, 1 << set_pow, 2).unwrap();
            let s = g.split(addr);
            prop_assert!(s.set < g.sets);
            prop_assert_eq!(g.compose(s), addr);
        }

        #[test]
        fn word_round_trip(v in any::<u64>(), big in any::<bool>()) {
            let e = if big { Endianness::Big } else { Endianness::Little };
            let mut line = [0u8; 16];
            e.write_word(&mut line[8..], v);
            prop_assert_eq!(e.read_word(&line[8..]), v);
        }
    }
}
