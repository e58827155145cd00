//! Block-structured multithreaded IR.
//!
//! A [`Program`] is a set of shared declarations (scalars, arrays, mutexes)
//! plus one [`ThreadDef`] per thread. Threads are lists of labeled
//! [`BasicBlock`]s; registers `r0..r31` are private to each thread. An
//! instrumented program additionally carries a `handler` region that holds the
//! recovery code shared by all threads.

mod parse;
mod print;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use parse::{parse_program, ParseError};
pub use print::serialize;
pub use validate::{validate_basic_block_form, validate_user_program, Diagnostic};

/// Number of thread-local registers.
pub const NUM_REGS: usize = 32;

/// Registers reserved for instrumentation code. User programs may not touch them.
pub const SCRATCH_REGS: [Reg; 2] = [Reg(30), Reg(31)];

/// Prefix of every name the instrumenter introduces.
pub const RESERVED_PREFIX: &str = "__";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Reg(pub u8);

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Xor,
    CmpLt,
    CmpEq,
}

impl BinOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
            BinOp::Xor => "xor",
            BinOp::CmpLt => "cmp_lt",
            BinOp::CmpEq => "cmp_eq",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cond {
    Eqz,
    Nez,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Terminator {
    Jmp(String),
    Br {
        cond: Cond,
        reg: Reg,
        on_true: String,
        on_false: String,
    },
    /// Indirect jump to the block whose global id is held in the register.
    /// Only the recovery handler emits this.
    Ijmp(Reg),
    Halt,
    /// Abort the run. Emitted by the handler when the run-time signature does
    /// not name any block.
    Trap,
}

impl Terminator {
    /// Labels this terminator can transfer to.
    pub fn targets(&self) -> Vec<&str> {
        match self {
            Terminator::Jmp(l) => vec![l.as_str()],
            Terminator::Br {
                on_true, on_false, ..
            } => vec![on_true.as_str(), on_false.as_str()],
            Terminator::Ijmp(_) | Terminator::Halt | Terminator::Trap => Vec::new(),
        }
    }

    /// True for terminators that transfer control somewhere (as opposed to
    /// stopping the thread).
    pub fn is_branch(&self) -> bool {
        matches!(
            self,
            Terminator::Jmp(_) | Terminator::Br { .. } | Terminator::Ijmp(_)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instr {
    Set { dst: Reg, imm: i64 },
    Mov { dst: Reg, src: Reg },
    Bin { op: BinOp, dst: Reg, a: Reg, b: Reg },
    Ld { dst: Reg, var: String },
    St { var: String, src: Reg },
    Lda { dst: Reg, arr: String, idx: Reg },
    Sta { arr: String, idx: Reg, src: Reg },
    Spawn(usize),
    Join(usize),
    Lock(String),
    Unlock(String),
    Out(Reg),

    // Instrumentation-only opcodes. They operate on shared memory directly so
    // the inserted code never disturbs user registers.
    /// `var <- var XOR imm`
    SigXor { var: String, imm: i64 },
    /// `var <- imm`
    SigSet { var: String, imm: i64 },
    /// Scalar global-to-global copy.
    GCopy { dst: String, src: String },
    /// Whole-array copy.
    ACopy { dst: String, src: String },
    /// `dst <- dst XOR src` over scalars.
    GXor { dst: String, src: String },
    /// If `var != imm`, divert to the `fail` block of the handler region.
    Chk { var: String, imm: i64, fail: String },
    /// Unlock `m` if the running thread holds it; otherwise no effect.
    Release(String),
    /// Snapshot the register file into the bank of the given thread.
    RegSnap(usize),
    /// Restore the register file from the bank of the given thread.
    RegRestore(usize),

    /// A control transfer found inside a block body. Never valid; it exists so
    /// that [`validate_basic_block_form`] can report it instead of the parser
    /// rejecting the whole file.
    Control(Terminator),
}

impl Instr {
    /// True for instructions whose effect becomes visible outside the running
    /// thread at the moment they execute.
    pub fn is_release(&self) -> bool {
        matches!(self, Instr::Unlock(_) | Instr::Out(_) | Instr::Spawn(_))
    }

    pub fn is_instrumentation(&self) -> bool {
        matches!(
            self,
            Instr::SigXor { .. }
                | Instr::SigSet { .. }
                | Instr::GCopy { .. }
                | Instr::ACopy { .. }
                | Instr::GXor { .. }
                | Instr::Chk { .. }
                | Instr::Release(_)
                | Instr::RegSnap(_)
                | Instr::RegRestore(_)
        )
    }

    /// Shared scalar or array written by this instruction, if any.
    pub fn written_global(&self) -> Option<&str> {
        match self {
            Instr::St { var, .. } => Some(var),
            Instr::Sta { arr, .. } => Some(arr),
            Instr::SigXor { var, .. } | Instr::SigSet { var, .. } => Some(var),
            Instr::GCopy { dst, .. } | Instr::ACopy { dst, .. } | Instr::GXor { dst, .. } => Some(dst),
            _ => None,
        }
    }

    /// Shared scalar or array read by this instruction, if any.
    pub fn read_global(&self) -> Option<&str> {
        match self {
            Instr::Ld { var, .. } => Some(var),
            Instr::Lda { arr, .. } => Some(arr),
            Instr::SigXor { var, .. } | Instr::Chk { var, .. } => Some(var),
            Instr::GCopy { src, .. } | Instr::ACopy { src, .. } | Instr::GXor { src, .. } => Some(src),
            _ => None,
        }
    }

    /// Every register the instruction names.
    pub fn registers(&self) -> Vec<Reg> {
        match self {
            Instr::Set { dst, .. } => vec![*dst],
            Instr::Mov { dst, src } => vec![*dst, *src],
            Instr::Bin { dst, a, b, .. } => vec![*dst, *a, *b],
            Instr::Ld { dst, .. } => vec![*dst],
            Instr::St { src, .. } => vec![*src],
            Instr::Lda { dst, idx, .. } => vec![*dst, *idx],
            Instr::Sta { idx, src, .. } => vec![*idx, *src],
            Instr::Out(r) => vec![*r],
            Instr::Control(Terminator::Br { reg, .. }) | Instr::Control(Terminator::Ijmp(reg)) => {
                vec![*reg]
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasicBlock {
    pub label: String,
    pub body: Vec<Instr>,
    pub terminator: Terminator,
    pub is_critical_section: bool,
}

impl BasicBlock {
    pub fn new(label: impl Into<String>, body: Vec<Instr>, terminator: Terminator) -> Self {
        Self {
            label: label.into(),
            body,
            terminator,
            is_critical_section: false,
        }
    }

    /// Body instructions plus the terminator.
    pub fn len(&self) -> usize {
        self.body.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThreadDef {
    pub tid: usize,
    pub blocks: Vec<BasicBlock>,
    pub entry: String,
}

impl ThreadDef {
    pub fn block(&self, label: &str) -> Option<&BasicBlock> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArrayDecl {
    pub name: String,
    pub len: usize,
    pub init: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Program {
    pub name: String,
    pub shared_vars: Vec<(String, i64)>,
    pub shared_arrays: Vec<ArrayDecl>,
    pub mutexes: Vec<String>,
    pub threads: Vec<ThreadDef>,
    /// Recovery handler region. Empty for uninstrumented programs.
    pub handler: Vec<BasicBlock>,
}

/// Where a block lives: in a thread or in the shared handler region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Owner {
    Thread(usize),
    Handler,
}

impl fmt::Display for Owner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Owner::Thread(t) => write!(f, "t{t}"),
            Owner::Handler => f.write_str("h"),
        }
    }
}

impl Program {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            shared_vars: Vec::new(),
            shared_arrays: Vec::new(),
            mutexes: Vec::new(),
            threads: Vec::new(),
            handler: Vec::new(),
        }
    }

    pub fn thread(&self, tid: usize) -> Option<&ThreadDef> {
        self.threads.get(tid)
    }

    pub fn is_scalar(&self, name: &str) -> bool {
        self.shared_vars.iter().any(|(n, _)| n == name)
    }

    pub fn array(&self, name: &str) -> Option<&ArrayDecl> {
        self.shared_arrays.iter().find(|a| a.name == name)
    }

    pub fn is_global(&self, name: &str) -> bool {
        self.is_scalar(name) || self.array(name).is_some()
    }

    pub fn scalar_init(&self, name: &str) -> Option<i64> {
        self.shared_vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    /// Blocks of a region in declaration order.
    pub fn blocks_of(&self, owner: Owner) -> &[BasicBlock] {
        match owner {
            Owner::Thread(t) => &self.threads[t].blocks,
            Owner::Handler => &self.handler,
        }
    }

    pub fn find_block(&self, owner: Owner, label: &str) -> Option<&BasicBlock> {
        self.blocks_of(owner).iter().find(|b| b.label == label)
    }

    /// All blocks with their owner, threads first (by tid), then the handler
    /// region. The position in this sequence is the block's global id.
    pub fn all_blocks(&self) -> impl Iterator<Item = (Owner, &BasicBlock)> {
        self.threads
            .iter()
            .flat_map(|t| t.blocks.iter().map(move |b| (Owner::Thread(t.tid), b)))
            .chain(self.handler.iter().map(|b| (Owner::Handler, b)))
    }

    /// Global id of a block (see [`Program::all_blocks`]).
    pub fn block_id(&self, owner: Owner, label: &str) -> Option<usize> {
        self.all_blocks()
            .position(|(o, b)| o == owner && b.label == label)
    }
}

/// Static program size: total instructions (terminators included) and data
/// slots (shared scalars, array elements, mutexes).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticSize {
    pub instruction_count: usize,
    pub data_slot_count: usize,
}

impl StaticSize {
    pub fn total(&self) -> usize {
        self.instruction_count + self.data_slot_count
    }
}

pub fn static_size(p: &Program) -> StaticSize {
    let instruction_count = p.all_blocks().map(|(_, b)| b.len()).sum();
    let data_slot_count = p.shared_vars.len()
        + p.shared_arrays.iter().map(|a| a.len).sum::<usize>()
        + p.mutexes.len();
    StaticSize {
        instruction_count,
        data_slot_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_size_counts_terminators() {
        let p = parse_program("program p\nthread 0 {\n block B0 {\n  out r0\n  halt\n }\n}\n").unwrap();
        let s = static_size(&p);
        assert_eq!((s.instruction_count, s.data_slot_count), (2, 0));
    }

    #[test]
    fn static_size_counts_array_elements() {
        let src = "program p\nshared g = 1\narray a[10]\nthread 0 {\n block B0 {\n  halt\n }\n}\n";
        let p = parse_program(src).unwrap();
        assert_eq!(static_size(&p).data_slot_count, 11);
    }

    #[test]
    fn static_size_is_additive_over_threads() {
        let one = "program p\nthread 0 {\n block A {\n  set r1, 1\n  halt\n }\n}\n";
        let two = "program p\nthread 0 {\n block A {\n  set r1, 1\n  halt\n }\n}\nthread 1 {\n block B {\n  set r1, 1\n  set r2, 2\n  halt\n }\n}\n";
        let a = static_size(&parse_program(one).unwrap());
        let b = static_size(&parse_program(two).unwrap());
        assert_eq!(b.instruction_count, a.instruction_count + 3);
    }

    #[test]
    fn block_ids_are_dense_and_ordered() {
        let src = "program p\nthread 0 {\n block A {\n  jmp B\n }\n block B {\n  halt\n }\n}\nthread 1 {\n block C {\n  halt\n }\n}\n";
        let p = parse_program(src).unwrap();
        assert_eq!(p.block_id(Owner::Thread(0), "B"), Some(1));
        assert_eq!(p.block_id(Owner::Thread(1), "C"), Some(2));
        assert_eq!(p.block_id(Owner::Thread(1), "A"), None);
    }
}
