use super::trace::TraceOp;

/// Source of a core's operations. Programs see the result of the previous
/// operation, which lets spin loops and data-dependent workloads be written
/// without a full instruction set.
pub trait Program: Send {
    /// `last` is the register result of the previous operation, if it had one.
    fn next_op(&mut self, last: Option<u64>) -> Option<TraceOp>;
}

/// A fixed list of operations.
#[derive(Debug, Clone, Default)]
pub struct TraceProgram {
    ops: Vec<TraceOp>,
    pc: usize,
}

impl TraceProgram {
    pub fn new(ops: Vec<TraceOp>) -> Self {
        Self { ops, pc: 0 }
    }
}

impl Program for TraceProgram {
    fn next_op(&mut self, _last: Option<u64>) -> Option<TraceOp> {
        let op = self.ops.get(self.pc).copied();
        self.pc += 1;
        op
    }
}
