use crate::error::{Error, Result};
use crate::l2::Access;
use crate::types::{CohMsg, DirState, MsgKind, MsgMeta, TileId, WORD_BYTES};

use super::{LlcEffect, LlcSlice, RecallFor, Waiter};

/// One DMA burst accepted by a slice and served a line at a time.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DmaBurst {
    pub write: bool,
    pub base: u64,
    pub len: u64,
    pub src: TileId,
    pub data: Option<Vec<u8>>,
    cursor: u64,
}

impl DmaBurst {
    pub fn read(src: TileId, base: u64, len: u64) -> Self {
        Self { write: false, base, len, src, data: None, cursor: base }
    }

    pub fn write(src: TileId, base: u64, data: Vec<u8>) -> Self {
        Self { write: true, base, len: data.len() as u64, src, data: Some(data), cursor: base }
    }

    /// Decodes a burst request. Reads carry their length in `meta.value`;
    /// writes carry the bytes as payload.
    pub fn from_msg(msg: &CohMsg) -> Result<Self> {
        let base = msg.addr.0;
        let burst = match msg.kind {
            MsgKind::DmaReadBurst => Self::read(msg.src, base, msg.meta.value),
            MsgKind::DmaWriteBurst => {
                let data = msg.payload.clone().ok_or_else(|| Error::Protocol("DMA write burst without payload".into()))?;
                Self::write(msg.src, base, data)
            }
            k => return Err(Error::Protocol(format!("{k:?} is not a DMA burst"))),
        };
        if !base.is_multiple_of(WORD_BYTES) || burst.len % WORD_BYTES != 0 || burst.len == 0 {
            return Err(Error::Protocol(format!("DMA burst {base:#x}+{} is not word aligned", burst.len)));
        }
        Ok(burst)
    }

    /// Encodes the burst as a NoC message from `src` to `dst`.
    pub fn to_msg(&self, dst: TileId) -> CohMsg {
        if self.write {
            CohMsg::new(MsgKind::DmaWriteBurst, self.base, self.src, dst).with_payload(self.data.clone().unwrap_or_default())
        } else {
            let meta = MsgMeta { value: self.len, ..Default::default() };
            CohMsg::new(MsgKind::DmaReadBurst, self.base, self.src, dst).with_meta(meta)
        }
    }

    pub fn end(&self) -> u64 {
        self.base + self.len
    }
}

impl LlcSlice {
    pub(super) fn dma_progress(&mut self, out: &mut Vec<LlcEffect>) {
        while let Some(job) = self.dma.front() {
            if job.cursor >= job.end() {
                self.dma.pop_front();
                continue;
            }
            let line = self.line_of(job.cursor);
            let lb = self.cfg.geom.line_bytes as u64;
            let full_line = job.write && job.cursor == line && job.end() >= line + lb;
            match self.find(line) {
                Some(at) if self.get(at).busy.is_some() => return,
                Some(at) if self.get(at).has_holders() => {
                    self.start_recall(at, Waiter::Recall(RecallFor::Dma), out);
                    return;
                }
                Some(at) => {
                    if self.get(at).dir.state == DirState::V {
                        self.stats.v_hits += 1;
                    }
                    self.serve_dma_line(at, out);
                }
                None => match self.allocate(line, out) {
                    Some(at) if full_line => {
                        self.sets[at.0][at.1] =
                            Some(super::LlcLine { line, dir: crate::types::DirEntry::valid(), data: vec![0; lb as usize], busy: None });
                        self.serve_dma_line(at, out);
                    }
                    Some(at) => {
                        self.start_fill(at, line, None, out);
                        return;
                    }
                    None => return,
                },
            }
        }
    }

    fn serve_dma_line(&mut self, at: (usize, usize), out: &mut Vec<LlcEffect>) {
        self.touch(at);
        self.stats.dma_lines += 1;
        let endian = self.cfg.endian;
        let lb = self.cfg.geom.line_bytes as u64;
        let job = self.dma.front_mut().expect("active DMA burst");
        let l = self.sets[at.0][at.1].as_mut().expect("line present");
        let start = job.cursor;
        let stop = job.end().min(l.line + lb);
        let mut chunk = Vec::with_capacity((stop - start) as usize);
        let mut a = start;
        while a < stop {
            let off = (a - l.line) as usize;
            let value = if job.write {
                let src_off = (a - job.base) as usize;
                let data = job.data.as_ref().expect("write burst data");
                let v = endian.read_word(&data[src_off..]);
                endian.write_word(&mut l.data[off..], v);
                v
            } else {
                let v = endian.read_word(&l.data[off..]);
                chunk.extend_from_slice(&l.data[off..off + WORD_BYTES as usize]);
                v
            };
            out.push(LlcEffect::Perform(Access { tile: job.src, addr: a, value, write: job.write }));
            a += WORD_BYTES;
        }
        l.dir.state = DirState::V;
        l.dir.dirty |= job.write;
        job.cursor = stop;
        let meta = MsgMeta { value: stop - start, ..Default::default() };
        let mut rsp = CohMsg::new(MsgKind::DmaRsp, start, self.tile, job.src).with_meta(meta);
        if !job.write {
            rsp.payload = Some(chunk);
        }
        out.push(LlcEffect::Send(rsp));
    }

    /// Queues a burst directly, bypassing message decoding.
    pub fn push_dma(&mut self, burst: DmaBurst, out: &mut Vec<LlcEffect>) {
        self.dma.push_back(burst);
        self.progress(out);
    }
}
