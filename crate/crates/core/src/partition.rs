//! Mapping of physical addresses onto memory tiles.

use crate::types::{Addr, TileId};

/// Contiguous, equal-size address partitions, one per memory tile, in
/// address order. Software never sees tile ids; only controllers consult this.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AddressMap {
    mem_size: u64,
    mem_tiles: Vec<TileId>,
}

impl AddressMap {
    /// `mem_tiles` must be non-empty; its length should divide `mem_size`.
    pub fn new(mem_size: u64, mem_tiles: Vec<TileId>) -> Self {
        assert!(!mem_tiles.is_empty(), "address map needs at least one memory tile");
        Self { mem_size, mem_tiles }
    }

    pub fn mem_size(&self) -> u64 {
        self.mem_size
    }

    pub fn mem_tiles(&self) -> &[TileId] {
        &self.mem_tiles
    }

    pub fn partition_bytes(&self) -> u64 {
        self.mem_size / self.mem_tiles.len() as u64
    }

    /// Index of the partition holding `addr`.
    pub fn partition_index(&self, addr: u64) -> usize {
        ((addr / self.partition_bytes()) as usize).min(self.mem_tiles.len() - 1)
    }

    pub fn home(&self, addr: u64) -> TileId {
        self.mem_tiles[self.partition_index(addr)]
    }

    /// End (exclusive) of the partition that contains `addr`.
    pub fn partition_end(&self, addr: u64) -> u64 {
        let idx = self.partition_index(addr) as u64;
        if idx as usize == self.mem_tiles.len() - 1 {
            self.mem_size
        } else {
            (idx + 1) * self.partition_bytes()
        }
    }
}

/// Memory tile serving `addr` among `mem_tiles`, in address order.
pub fn partition_target(addr: Addr, mem_size: u64, mem_tiles: &[TileId]) -> TileId {
    AddressMap::new(mem_size, mem_tiles.to_vec()).home(addr.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tile_takes_everything() {
        let m = AddressMap::new(1 << 20, vec![TileId(3)]);
        assert_eq!(m.home(0), TileId(3));
        assert_eq!(m.home((1 << 20) - 8), TileId(3));
    }

    #[test]
    fn halfway_split() {
        let tiles = [TileId(2), TileId(7)];
        assert_eq!(partition_target(Addr(0x7FFFF), 1 << 20, &tiles), TileId(2));
        assert_eq!(partition_target(Addr(0x80000), 1 << 20, &tiles), TileId(7));
        let m = AddressMap::new(1 << 20, tiles.to_vec());
        assert_eq!(m.partition_end(0x10), 0x80000);
        assert_eq!(m.partition_end(0x80000), 1 << 20);
    }
}
