//! Per-core operation traces.
//!
//! One operation per line: `core <id>: <OP> [hex-addr] [value]`. Blank lines
//! and text after `#` are ignored. Values are decimal, `0x` hex, or negative
//! decimal (two's complement).

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::AtomicOp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceOp {
    Load(u64),
    Store(u64, u64),
    Amo(AtomicOp, u64, u64),
    Lr(u64),
    Sc(u64, u64),
    Ifetch(u64),
    Fence,
    Nop,
    /// Flush the core's L1 and L2.
    Flush,
    MmioWrite(u64, u64),
    MmioRead(u64),
    /// Read a register until it holds the value.
    Poll(u64, u64),
    /// Block until an interrupt resumes this core.
    WaitIrq,
}

impl TraceOp {
    /// Data address the operation touches in memory, if any.
    pub fn mem_addr(&self) -> Option<u64> {
        match *self {
            TraceOp::Load(a) | TraceOp::Store(a, _) | TraceOp::Amo(_, a, _) | TraceOp::Lr(a) | TraceOp::Sc(a, _) | TraceOp::Ifetch(a) => {
                Some(a)
            }
            _ => None,
        }
    }

    /// Whether the operation leaves a value in the core's result list.
    pub fn produces_value(&self) -> bool {
        matches!(self, TraceOp::Load(_) | TraceOp::Amo(..) | TraceOp::Lr(_) | TraceOp::Sc(..) | TraceOp::MmioRead(_))
    }

    pub fn is_write(&self) -> bool {
        matches!(self, TraceOp::Store(..) | TraceOp::Amo(..) | TraceOp::Sc(..))
    }
}

impl fmt::Display for TraceOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TraceOp::Load(a) => write!(f, "LD {a:#x}"),
            TraceOp::Store(a, v) => write!(f, "ST {a:#x} {v}"),
            TraceOp::Amo(op, a, v) => write!(f, "{} {a:#x} {v}", op.mnemonic()),
            TraceOp::Lr(a) => write!(f, "LR {a:#x}"),
            TraceOp::Sc(a, v) => write!(f, "SC {a:#x} {v}"),
            TraceOp::Ifetch(a) => write!(f, "IF {a:#x}"),
            TraceOp::Fence => write!(f, "FENCE"),
            TraceOp::Nop => write!(f, "NOP"),
            TraceOp::Flush => write!(f, "FLUSH"),
            TraceOp::MmioWrite(a, v) => write!(f, "MMIOW {a:#x} {v}"),
            TraceOp::MmioRead(a) => write!(f, "MMIOR {a:#x}"),
            TraceOp::Poll(a, v) => write!(f, "POLL {a:#x} {v}"),
            TraceOp::WaitIrq => write!(f, "WAITIRQ"),
        }
    }
}

fn parse_addr(s: &str) -> std::result::Result<u64, String> {
    let hex = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
    u64::from_str_radix(hex, 16).map_err(|_| format!("bad address `{s}`"))
}

pub fn parse_value(s: &str) -> std::result::Result<u64, String> {
    let r = if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(h, 16).ok()
    } else if let Some(n) = s.strip_prefix('-') {
        n.parse::<u64>().ok().map(|v| v.wrapping_neg())
    } else {
        s.parse::<u64>().ok()
    };
    r.ok_or_else(|| format!("bad value `{s}`"))
}

/// Parses one operation such as `AMOADD 0x40 1`.
pub fn parse_op(text: &str) -> std::result::Result<TraceOp, String> {
    let mut parts = text.split_whitespace();
    let mnemonic = parts.next().ok_or("missing operation")?.to_ascii_uppercase();
    let args: Vec<&str> = parts.collect();
    let want = |n: usize| {
        if args.len() == n {
            Ok(())
        } else {
            Err(format!("{mnemonic} takes {n} operand(s), got {}", args.len()))
        }
    };
    let addr = |i: usize| parse_addr(args[i]);
    let val = |i: usize| parse_value(args[i]);
    let op = match mnemonic.as_str() {
        "LD" => {
            want(1)?;
            TraceOp::Load(addr(0)?)
        }
        "ST" => {
            want(2)?;
            TraceOp::Store(addr(0)?, val(1)?)
        }
        "LR" => {
            want(1)?;
            TraceOp::Lr(addr(0)?)
        }
        "SC" => {
            want(2)?;
            TraceOp::Sc(addr(0)?, val(1)?)
        }
        "IF" => {
            want(1)?;
            TraceOp::Ifetch(addr(0)?)
        }
        "FENCE" => {
            want(0)?;
            TraceOp::Fence
        }
        "NOP" => {
            want(0)?;
            TraceOp::Nop
        }
        "FLUSH" => {
            want(0)?;
            TraceOp::Flush
        }
        "MMIOW" => {
            want(2)?;
            TraceOp::MmioWrite(addr(0)?, val(1)?)
        }
        "MMIOR" => {
            want(1)?;
            TraceOp::MmioRead(addr(0)?)
        }
        "POLL" => {
            want(2)?;
            TraceOp::Poll(addr(0)?, val(1)?)
        }
        "WAITIRQ" => {
            want(0)?;
            TraceOp::WaitIrq
        }
        m => {
            let op = AtomicOp::ALL.into_iter().find(|op| op.mnemonic() == m).ok_or_else(|| format!("unknown operation `{m}`"))?;
            want(2)?;
            TraceOp::Amo(op, addr(0)?, val(1)?)
        }
    };
    if let Some(a) = op.mem_addr() {
        if a % 8 != 0 {
            return Err(format!("address {a:#x} is not 8-byte aligned"));
        }
    }
    Ok(op)
}

/// Parses a `core <id>: <op>` line. Returns `None` for blank or comment lines.
pub fn parse_line(line: &str) -> std::result::Result<Option<(usize, TraceOp)>, String> {
    let line = line.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return Ok(None);
    }
    let rest = line.strip_prefix("core").ok_or("expected `core <id>: <op>`")?;
    let (id, op) = rest.split_once(':').ok_or("expected `:` after the core id")?;
    let id = id.trim().parse::<usize>().map_err(|_| format!("bad core id `{}`", id.trim()))?;
    Ok(Some((id, parse_op(op)?)))
}

/// Per-core operation lists.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub cores: Vec<Vec<TraceOp>>,
}

impl Trace {
    pub fn new(cores: Vec<Vec<TraceOp>>) -> Self {
        Self { cores }
    }

    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut t = Trace::default();
        for (i, line) in text.lines().enumerate() {
            if let Some((id, op)) = parse_line(line).map_err(|m| Error::parse(file, i + 1, m))? {
                t.push(id, op);
            }
        }
        Ok(t)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn push(&mut self, core: usize, op: TraceOp) {
        if self.cores.len() <= core {
            self.cores.resize(core + 1, Vec::new());
        }
        self.cores[core].push(op);
    }

    pub fn total_ops(&self) -> usize {
        self.cores.iter().map(Vec::len).sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (c, ops) in self.cores.iter().enumerate() {
            for op in ops {
                s += &format!("core {c}: {op}\n");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_mnemonic() {
        let text = "\
core 0: LD 0x40
core 0: ST 40 7   # hex address without prefix
core 1: AMOMAX 0x10 -1
core 1: AMOMINU 0x10 0xFFFFFFFF
core 1: LR 0x10
core 1: SC 0x10 1
core 0: IF 0x100
core 0: FENCE

core 2: MMIOW 0x80000100 1
core 2: POLL 0x80000108 1
core 2: WAITIRQ
core 2: FLUSH
";
        let t = Trace::parse(text, "t").unwrap();
        assert_eq!(t.cores.len(), 3);
        assert_eq!(t.cores[0][1], TraceOp::Store(0x40, 7));
        assert_eq!(t.cores[1][0], TraceOp::Amo(AtomicOp::Max, 0x10, u64::MAX));
        assert_eq!(t.cores[1][1], TraceOp::Amo(AtomicOp::MinU, 0x10, 0xFFFF_FFFF));
        assert_eq!(t.total_ops(), 12);
        assert_eq!(Trace::parse(&t.to_text(), "t").unwrap(), t);
    }

    #[test]
    fn errors_name_the_line() {
        let err = Trace::parse("core 0: LD 0x40\ncore 0: JMP 0x0\n", "prog.trace").unwrap_err();
        assert_eq!(err.to_string(), "prog.trace:2: unknown operation `JMP`");
        assert!(Trace::parse("core 0: LD 0x41", "t").is_err());
        assert!(Trace::parse("core x: LD 0x40", "t").is_err());
        assert!(Trace::parse("core 0: ST 0x40", "t").is_err());
    }
}
