use crate::types::Endianness;

/// Flat backing memory shared by all memory tiles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Memory {
    bytes: Vec<u8>,
    endian: Endianness,
}

impl Memory {
    pub fn new(size: u64, endian: Endianness) -> Self {
        Self { bytes: vec![0; size as usize], endian }
    }

    pub fn size(&self) -> u64 {
        self.bytes.len() as u64
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn read(&self, addr: u64, len: usize) -> Vec<u8> {
        self.bytes[addr as usize..addr as usize + len].to_vec()
    }

    pub fn write(&mut self, addr: u64, data: &[u8]) {
        self.bytes[addr as usize..addr as usize + data.len()].copy_from_slice(data);
    }

    pub fn read_word(&self, addr: u64) -> u64 {
        self.endian.read_word(&self.bytes[addr as usize..])
    }

    pub fn write_word(&mut self, addr: u64, value: u64) {
        self.endian.write_word(&mut self.bytes[addr as usize..], value);
    }
}
