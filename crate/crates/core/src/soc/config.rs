//! SoC description: the tile grid, cache geometries and timing.
//!
//! Configurations are written in TOML. See `SocConfig::from_toml_str` for the
//! accepted keys; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l2::L2Config;
use crate::llc::LlcConfig;
use crate::types::{CacheGeometry, Endianness, TileId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TileKind {
    #[serde(rename = "cpu")]
    Processor,
    #[serde(rename = "mem")]
    Memory,
    #[serde(rename = "acc")]
    Accelerator,
    #[serde(rename = "aux")]
    Auxiliary,
    #[serde(rename = "empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccelMode {
    /// Loads and stores through a private L2.
    FullyCoherent,
    /// DMA bursts served by the LLC slices.
    LlcCoherent,
    /// DMA bursts served straight from backing memory.
    NonCoherent,
}

/// One step of an accelerator job: a DMA transfer followed by computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmaDesc {
    pub base: u64,
    pub len: u64,
    #[serde(default, rename = "dir", with = "direction")]
    pub write: bool,
    /// Word written at every position of a write transfer.
    #[serde(default)]
    pub value: u64,
    /// Cycles spent computing after the transfer.
    #[serde(default)]
    pub compute: u64,
}

mod direction {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(write: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(if *write { "write" } else { "read" })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match String::deserialize(d)?.as_str() {
            "read" => Ok(false),
            "write" => Ok(true),
            other => Err(serde::de::Error::custom(format!("direction must be `read` or `write`, not `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccelConfig {
    pub tile: TileId,
    pub mode: AccelMode,
    pub job: Vec<DmaDesc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SocConfig {
    pub cols: usize,
    pub rows: usize,
    /// Tile kinds in raster order (row by row).
    pub tiles: Vec<TileKind>,
    pub mem_size: u64,
    pub endian: Endianness,
    pub l1: CacheGeometry,
    pub l2: L2Config,
    pub llc: LlcConfig,
    pub mem_latency: u64,
    pub queue_depth: usize,
    pub mmio_base: u64,
    pub accelerators: Vec<AccelConfig>,
    /// Cycles without retirement, with work pending, before a run is declared stuck.
    pub watchdog: u64,
    /// Cores start after a random delay in `[0, start_skew)` cycles.
    pub start_skew: u64,
    /// Extra random delay in `[0, issue_jitter)` cycles before each operation.
    pub issue_jitter: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default = "defaults::mem_size")]
    mem_size: u64,
    #[serde(default)]
    endian: Option<Endianness>,
    grid: RawGrid,
    #[serde(default)]
    l1: RawCache,
    #[serde(default)]
    l2: RawCache,
    #[serde(default)]
    llc: RawCache,
    #[serde(default)]
    latency: RawLatency,
    #[serde(default)]
    noc: RawNoc,
    #[serde(default)]
    mmio: RawMmio,
    #[serde(default)]
    accelerator: Vec<RawAccel>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    cols: usize,
    rows: usize,
    tiles: Vec<TileKind>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCache {
    line_bytes: Option<u32>,
    sets: Option<u32>,
    ways: Option<u32>,
    mshrs: Option<usize>,
    lr_hold_cycles: Option<u64>,
    grant_exclusive: Option<bool>,
    flush_invalidates: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLatency {
    memory: Option<u64>,
    watchdog: Option<u64>,
    start_skew: Option<u64>,
    issue_jitter: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoc {
    queue_depth: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMmio {
    base: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAccel {
    tile: usize,
    mode: AccelMode,
    #[serde(default)]
    job: Vec<DmaDesc>,
}

mod defaults {
    pub const LINE: u32 = 16;

    pub fn mem_size() -> u64 {
        1 << 20
    }
}

/// 1-based line of byte offset `pos` in `text`.
fn line_at(text: &str, pos: usize) -> usize {
    text[..pos.min(text.len())].matches('\n').count() + 1
}

/// Line where `key` is first assigned, for semantic errors.
fn line_of_key(text: &str, key: &str) -> usize {
    text.lines()
        .position(|l| {
            let t = l.trim_start();
            t.starts_with(key) && t[key.len()..].trim_start().starts_with('=')
        })
        .map_or(1, |i| i + 1)
}

impl SocConfig {
    /// A grid with default caches and timing.
    pub fn grid(cols: usize, rows: usize, tiles: Vec<TileKind>) -> Self {
        let line = defaults::LINE;
        Self {
            cols,
            rows,
            tiles,
            mem_size: defaults::mem_size(),
            endian: Endianness::Little,
            l1: CacheGeometry::new(line, 16, 2).expect("default L1 geometry"),
            l2: L2Config::new(CacheGeometry::new(line, 64, 4).expect("default L2 geometry")),
            llc: LlcConfig::new(CacheGeometry::new(line, 256, 8).expect("default LLC geometry")),
            mem_latency: 30,
            queue_depth: 4,
            mmio_base: 0x8000_0000,
            accelerators: Vec::new(),
            watchdog: 10_000,
            start_skew: 16,
            issue_jitter: 0,
        }
    }

    /// 3x3 instance with 4 processors, 2 memory tiles and the auxiliary tile.
    pub fn quad() -> Self {
        use TileKind::*;
        Self::grid(3, 3, vec![Processor, Memory, Processor, Empty, Auxiliary, Empty, Processor, Memory, Processor])
    }

    /// The quad layout with one empty slot holding an accelerator.
    pub fn quad_with_accelerator(mode: AccelMode, job: Vec<DmaDesc>) -> Self {
        let mut cfg = Self::quad();
        cfg.tiles[3] = TileKind::Accelerator;
        cfg.accelerators.push(AccelConfig { tile: TileId(3), mode, job });
        cfg
    }

    /// 2x2 grid with one processor, memory, accelerator and auxiliary tile.
    pub fn smoke() -> Self {
        use TileKind::*;
        let mut cfg = Self::grid(2, 2, vec![Processor, Memory, Accelerator, Auxiliary]);
        cfg.accelerators.push(AccelConfig { tile: TileId(2), mode: AccelMode::LlcCoherent, job: Vec::new() });
        cfg
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// Parses and validates a TOML description. `file` only labels errors.
    pub fn from_toml_str(text: &str, file: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| line_at(text, s.start));
            Error::parse(file, line, e.message().to_string())
        })?;
        let at = |key: &str, msg: String| Error::parse(file, line_of_key(text, key), msg);
        let mut cfg = Self::grid(raw.grid.cols, raw.grid.rows, raw.grid.tiles);
        cfg.mem_size = raw.mem_size;
        if let Some(e) = raw.endian {
            cfg.endian = e;
        }
        let line = raw.l2.line_bytes.or(raw.llc.line_bytes).or(raw.l1.line_bytes).unwrap_or(defaults::LINE);
        for (key, c) in [("l1", &raw.l1), ("l2", &raw.l2), ("llc", &raw.llc)] {
            if c.line_bytes.is_some_and(|l| l != line) {
                return Err(at("line_bytes", format!("[{key}] line_bytes must match the other caches ({line})")));
            }
        }
        let geom = |c: &RawCache, d: CacheGeometry, key: &str| {
            CacheGeometry::new(line, c.sets.unwrap_or(d.sets), c.ways.unwrap_or(d.ways)).map_err(|e| at("sets", format!("[{key}] {e}")))
        };
        cfg.l1 = geom(&raw.l1, cfg.l1, "l1")?;
        cfg.l2.geom = geom(&raw.l2, cfg.l2.geom, "l2")?;
        cfg.l2.mshrs = raw.l2.mshrs.unwrap_or(cfg.l2.mshrs);
        cfg.l2.lr_hold_cycles = raw.l2.lr_hold_cycles.unwrap_or(cfg.l2.lr_hold_cycles);
        cfg.llc.geom = geom(&raw.llc, cfg.llc.geom, "llc")?;
        cfg.llc.grant_exclusive = raw.llc.grant_exclusive.unwrap_or(false);
        cfg.llc.flush_invalidates = raw.llc.flush_invalidates.unwrap_or(false);
        cfg.mem_latency = raw.latency.memory.unwrap_or(cfg.mem_latency);
        cfg.watchdog = raw.latency.watchdog.unwrap_or(cfg.watchdog);
        cfg.start_skew = raw.latency.start_skew.unwrap_or(cfg.start_skew);
        cfg.issue_jitter = raw.latency.issue_jitter.unwrap_or(cfg.issue_jitter);
        cfg.queue_depth = raw.noc.queue_depth.unwrap_or(cfg.queue_depth);
        cfg.mmio_base = raw.mmio.base.unwrap_or(cfg.mmio_base);
        cfg.accelerators = raw.accelerator.into_iter().map(|a| AccelConfig { tile: TileId(a.tile), mode: a.mode, job: a.job }).collect();
        cfg.validate().map_err(|e| match e {
            Error::Config(msg) => {
                let key =
                    ["tiles", "mem_size", "mshrs", "queue_depth", "base", "tile"].into_iter().find(|k| msg.contains(k)).unwrap_or("tiles");
                at(key, msg)
            }
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        let mut s = format!(
            "mem_size = {:#x}\nendian = \"{}\"\n\n[grid]\ncols = {}\nrows = {}\ntiles = [{}]\n",
            self.mem_size,
            if self.endian == Endianness::Big { "big" } else { "little" },
            self.cols,
            self.rows,
            self.tiles.iter().map(|t| format!("\"{}\"", tile_name(*t))).collect::<Vec<_>>().join(", ")
        );
        s += &format!("\n[l1]\nline_bytes = {}\nsets = {}\nways = {}\n", self.l1.line_bytes, self.l1.sets, self.l1.ways);
        s += &format!(
            "\n[l2]\nsets = {}\nways = {}\nmshrs = {}\nlr_hold_cycles = {}\n",
            self.l2.geom.sets, self.l2.geom.ways, self.l2.mshrs, self.l2.lr_hold_cycles
        );
        s += &format!(
            "\n[llc]\nsets = {}\nways = {}\ngrant_exclusive = {}\nflush_invalidates = {}\n",
            self.llc.geom.sets, self.llc.geom.ways, self.llc.grant_exclusive, self.llc.flush_invalidates
        );
        s += &format!(
            "\n[latency]\nmemory = {}\nwatchdog = {}\nstart_skew = {}\nissue_jitter = {}\n",
            self.mem_latency, self.watchdog, self.start_skew, self.issue_jitter
        );
        s += &format!("\n[noc]\nqueue_depth = {}\n\n[mmio]\nbase = {:#x}\n", self.queue_depth, self.mmio_base);
        for a in &self.accelerators {
            let mode = match a.mode {
                AccelMode::FullyCoherent => "fully-coherent",
                AccelMode::LlcCoherent => "llc-coherent",
                AccelMode::NonCoherent => "non-coherent",
            };
            s += &format!("\n[[accelerator]]\ntile = {}\nmode = \"{mode}\"\n", a.tile.0);
            for d in &a.job {
                s += &format!(
                    "[[accelerator.job]]\nbase = {:#x}\nlen = {}\ndir = \"{}\"\nvalue = {}\ncompute = {}\n",
                    d.base,
                    d.len,
                    if d.write { "write" } else { "read" },
                    d.value,
                    d.compute
                );
            }
        }
        s
    }

    pub fn tile_count(&self) -> usize {
        self.cols * self.rows
    }

    pub fn tiles_of(&self, kind: TileKind) -> Vec<TileId> {
        self.tiles.iter().enumerate().filter(|(_, k)| **k == kind).map(|(i, _)| TileId(i)).collect()
    }

    /// Processor tiles in raster order; core `i` runs on the `i`-th.
    pub fn processor_tiles(&self) -> Vec<TileId> {
        self.tiles_of(TileKind::Processor)
    }

    pub fn memory_tiles(&self) -> Vec<TileId> {
        self.tiles_of(TileKind::Memory)
    }

    pub fn aux_tile(&self) -> TileId {
        self.tiles_of(TileKind::Auxiliary)[0]
    }

    pub fn accelerator(&self, tile: TileId) -> Option<&AccelConfig> {
        self.accelerators.iter().find(|a| a.tile == tile)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.cols == 0 || self.rows == 0 {
            return bad("grid needs at least one row and one column".into());
        }
        if self.tiles.len() != self.tile_count() {
            return bad(format!("tiles lists {} entries for a {}x{} grid", self.tiles.len(), self.cols, self.rows));
        }
        if self.tile_count() > 64 {
            return bad("tiles: at most 64 tiles are supported".into());
        }
        let mems = self.memory_tiles().len();
        if mems == 0 {
            return bad("tiles must include at least one memory tile".into());
        }
        if !mems.is_power_of_two() {
            return bad(format!("tiles: memory tile count {mems} is not a power of two"));
        }
        let aux = self.tiles_of(TileKind::Auxiliary).len();
        if aux != 1 {
            return bad(format!("tiles must include exactly one auxiliary tile, found {aux}"));
        }
        let line = u64::from(self.l2.geom.line_bytes);
        if self.l1.line_bytes != self.l2.geom.line_bytes || self.llc.geom.line_bytes != self.l2.geom.line_bytes {
            return bad("all caches must use the same line size".into());
        }
        if self.mem_size == 0 || !self.mem_size.is_multiple_of(mems as u64 * line) {
            return bad(format!("mem_size {:#x} must split into {mems} whole-line partitions", self.mem_size));
        }
        if self.mmio_base < self.mem_size {
            return bad(format!("mmio base {:#x} overlaps memory", self.mmio_base));
        }
        if self.l2.mshrs < 2 {
            return bad("l2 mshrs must be at least 2".into());
        }
        if self.queue_depth == 0 {
            return bad("queue_depth must be positive".into());
        }
        for a in &self.accelerators {
            if self.tiles.get(a.tile.0) != Some(&TileKind::Accelerator) {
                return bad(format!("accelerator tile {} is not an accelerator tile", a.tile.0));
            }
            for d in &a.job {
                if d.base % 8 != 0 || d.len % 8 != 0 || d.len == 0 || d.base + d.len > self.mem_size {
                    return bad(format!("accelerator tile {}: bad transfer {:#x}+{}", a.tile.0, d.base, d.len));
                }
            }
        }
        Ok(())
    }
}

fn tile_name(t: TileKind) -> &'static str {
    match t {
        TileKind::Processor => "cpu",
        TileKind::Memory => "mem",
        TileKind::Accelerator => "acc",
        TileKind::Auxiliary => "aux",
        TileKind::Empty => "empty",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUAD: &str = r#"
mem_size = 0x100000

[grid]
cols = 3
rows = 3
tiles = ["cpu", "mem", "cpu", "empty", "aux", "empty", "cpu", "mem", "cpu"]
"#;

    #[test]
    fn parses_quad_layout() {
        let cfg = SocConfig::from_toml_str(QUAD, "quad.toml").unwrap();
        assert_eq!(cfg, SocConfig::quad());
        assert_eq!(cfg.processor_tiles().len(), 4);
        assert_eq!(cfg.memory_tiles(), vec![TileId(1), TileId(7)]);
    }

    #[test]
    fn round_trips_through_text() {
        let cfg = SocConfig::quad_with_accelerator(
            AccelMode::NonCoherent,
            vec![DmaDesc { base: 0x100, len: 32, write: true, value: 7, compute: 3 }],
        );
        let back = SocConfig::from_toml_str(&cfg.to_toml_string(), "x").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_missing_memory_with_line() {
        let text = QUAD.replace("\"mem\"", "\"cpu\"");
        match SocConfig::from_toml_str(&text, "c.toml") {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 7);
                assert!(msg.contains("memory tile"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let text = "mem_size = 0x1000\n[grid]\ncols = \"three\"\n";
        match SocConfig::from_toml_str(text, "c.toml") {
            Err(Error::Parse { file, line, .. }) => assert_eq!((file.as_str(), line), ("c.toml", 3)),
            other => panic!("{other:?}"),
        }
        let text = format!("{QUAD}\n[l2]\ncolour = 1\n");
        assert!(matches!(SocConfig::from_toml_str(&text, "c"), Err(Error::Parse { line: 10, .. })));
    }

    #[test]
    fn structural_checks() {
        let mut cfg = SocConfig::quad();
        cfg.tiles.pop();
        assert!(cfg.validate().is_err());
        let mut cfg = SocConfig::quad();
        cfg.tiles[4] = TileKind::Empty;
        assert!(cfg.validate().is_err());
        let mut cfg = SocConfig::quad();
        cfg.tiles[0] = TileKind::Memory;
        assert!(cfg.validate().unwrap_err().to_string().contains("power of two"));
        assert!(SocConfig::smoke().validate().is_ok());
    }
}
