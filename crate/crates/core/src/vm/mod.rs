//! Deterministic single-core interpreter.
//!
//! Threads share one simulated core and are scheduled round-robin with a
//! fixed quantum. The cyclic thread order is a seeded permutation of the
//! thread ids (seed 0 keeps the natural order). Control never leaves a
//! context while it runs handler-region code. Every executed instruction
//! advances a global dynamic instruction index; blocked `lock`/`join`
//! attempts do not count.

mod exec;
mod fault;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::ir::{BinOp, Cond, Instr, Owner, Program, Terminator, NUM_REGS, RESERVED_PREFIX};

pub use fault::{FaultModel, FaultSpec, Location};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VmError {
    #[error("undefined {kind} `{name}`")]
    Undefined { kind: &'static str, name: String },
    #[error("location {0} does not exist")]
    BadLocation(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SchedConfig {
    /// Instructions per scheduling slice.
    pub quantum: u64,
    pub seed: u64,
    /// Step budget; reaching it ends the run with a timeout.
    pub max_steps: u64,
    pub trace: bool,
    /// Check shadow consistency at every passing check.
    pub audit: bool,
    /// Record the position of every executed instruction.
    pub record_steps: bool,
}

impl Default for SchedConfig {
    fn default() -> Self {
        Self {
            quantum: 50,
            seed: 0,
            max_steps: 50_000_000,
            trace: false,
            audit: false,
            record_steps: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrapReason {
    DivisionByZero,
    BadIjmp,
    OutOfBounds,
    UnlockUnheld,
    HandlerSignatureMiss,
    Deadlock,
    DoubleSpawn,
    PcOutOfCode,
    AuditViolation(String),
}

impl fmt::Display for TrapReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrapReason::DivisionByZero => f.write_str("division-by-zero"),
            TrapReason::BadIjmp => f.write_str("ijmp-to-invalid-block-id"),
            TrapReason::OutOfBounds => f.write_str("out-of-bounds"),
            TrapReason::UnlockUnheld => f.write_str("unlock-of-unheld-mutex"),
            TrapReason::HandlerSignatureMiss => f.write_str("handler-signature-miss"),
            TrapReason::Deadlock => f.write_str("deadlock"),
            TrapReason::DoubleSpawn => f.write_str("double-spawn"),
            TrapReason::PcOutOfCode => f.write_str("pc-out-of-code"),
            TrapReason::AuditViolation(v) => write!(f, "audit-violation({v})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Trap(TrapReason),
    Timeout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    BlockEnter,
    CheckPass,
    CheckFail,
    HandlerEnter,
    HandlerExit,
    FaultActivated,
    ContextSwitch,
    LockAcquire,
    LockRelease,
    SharedRead,
    SharedWrite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Payload {
    None,
    /// Run-time signature seen by a check.
    Sig(i64),
    /// Global id, element index (0 for scalars), value.
    Var { var: u32, elem: u32, value: i64 },
    Mutex(u32),
    Model(FaultModel),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub kind: EventKind,
    /// Executing context.
    pub tid: usize,
    /// Global block id of the current position.
    pub block: u32,
    pub dyn_instr_index: u64,
    pub payload: Payload,
}

/// Position of one executed instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Step {
    pub block: u32,
    pub offset: u32,
    pub ctx: u16,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunResult {
    pub outcome: Outcome,
    pub output: Vec<i64>,
    pub dyn_instr_total: u64,
    pub per_thread: Vec<u64>,
    pub trace: Vec<TraceEvent>,
    pub steps: Vec<Step>,
    /// Final values of the non-reserved globals, in declaration order.
    pub memory: Vec<(String, Vec<i64>)>,
    /// Whether the fault, if any, fired.
    pub fault_activated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Op {
    Set(usize, i64),
    Mov(usize, usize),
    Bin(BinOp, usize, usize, usize),
    Ld(usize, u32),
    St(u32, usize),
    Lda(usize, u32, usize),
    Sta(u32, usize, usize),
    Spawn(usize),
    Join(usize),
    Lock(u32),
    Unlock(u32),
    Out(usize),
    SigXor(u32, i64),
    SigSet(u32, i64),
    GCopy(u32, u32),
    ACopy(u32, u32),
    GXor(u32, u32),
    Chk(u32, i64, u32),
    Release(u32),
    RegSnap(usize),
    RegRestore(usize),
    Jmp(u32),
    Br(Cond, usize, u32, u32),
    Ijmp(usize),
    Halt,
    Trap,
    /// Unreachable in valid programs; traps if executed.
    Invalid,
}

impl Op {
    pub(crate) fn is_terminator(&self) -> bool {
        matches!(
            self,
            Op::Jmp(_) | Op::Br(..) | Op::Ijmp(_) | Op::Halt | Op::Trap | Op::Invalid
        )
    }
}

#[derive(Clone, Debug)]
pub(crate) struct CBlock {
    pub owner: Owner,
    pub label: String,
    pub ops: Vec<Op>,
    /// Next block of the same region in program order.
    pub next: Option<u32>,
    /// `(shadow, original)` pairs committed after this block's check.
    pub commits: Vec<(u32, u32)>,
}

#[derive(Clone, Debug)]
pub(crate) struct Global {
    pub name: String,
    pub base: usize,
    pub len: usize,
    pub array: bool,
    pub reserved: bool,
}

/// A program resolved to numeric slots, ready to run many times.
#[derive(Clone, Debug)]
pub struct Image {
    pub(crate) blocks: Vec<CBlock>,
    pub(crate) globals: Vec<Global>,
    pub(crate) mem_init: Vec<i64>,
    pub(crate) mutexes: Vec<String>,
    pub(crate) entries: Vec<u32>,
    pub(crate) t_slot: Option<usize>,
    index: BTreeMap<(Owner, String), u32>,
}

fn lookup(map: &BTreeMap<&str, u32>, kind: &'static str, name: &str) -> Result<u32, VmError> {
    map.get(name).copied().ok_or_else(|| VmError::Undefined {
        kind,
        name: name.to_string(),
    })
}

impl Image {
    pub fn compile(p: &Program) -> Result<Self, VmError> {
        let mut globals = Vec::new();
        let mut mem_init = Vec::new();
        for (n, v) in &p.shared_vars {
            globals.push(Global {
                name: n.clone(),
                base: mem_init.len(),
                len: 1,
                array: false,
                reserved: n.starts_with(RESERVED_PREFIX),
            });
            mem_init.push(*v);
        }
        for a in &p.shared_arrays {
            globals.push(Global {
                name: a.name.clone(),
                base: mem_init.len(),
                len: a.len,
                array: true,
                reserved: a.name.starts_with(RESERVED_PREFIX),
            });
            let mut vals = a.init.clone();
            vals.resize(a.len, 0);
            mem_init.extend(vals);
        }
        let gmap: BTreeMap<&str, u32> = globals.iter().enumerate().map(|(i, g)| (g.name.as_str(), i as u32)).collect();
        let mmap: BTreeMap<&str, u32> = p.mutexes.iter().enumerate().map(|(i, m)| (m.as_str(), i as u32)).collect();
        let index: BTreeMap<(Owner, String), u32> = p
            .all_blocks()
            .enumerate()
            .map(|(i, (o, b))| ((o, b.label.clone()), i as u32))
            .collect();
        let nthreads = p.threads.len();

        let mut blocks = Vec::new();
        for (owner, b) in p.all_blocks() {
            let target = |l: &str| -> Result<u32, VmError> {
                index
                    .get(&(owner, l.to_string()))
                    .or_else(|| index.get(&(Owner::Handler, l.to_string())))
                    .copied()
                    .ok_or_else(|| VmError::Undefined {
                        kind: "label",
                        name: l.to_string(),
                    })
            };
            let g = |n: &str| lookup(&gmap, "global", n);
            let m = |n: &str| lookup(&mmap, "mutex", n);
            let tid = |t: usize| {
                if t < nthreads {
                    Ok(t)
                } else {
                    Err(VmError::Undefined {
                        kind: "thread",
                        name: t.to_string(),
                    })
                }
            };
            let r = |x: crate::ir::Reg| x.0 as usize % NUM_REGS;
            let mut ops = Vec::with_capacity(b.len());
            let mut commits = Vec::new();
            let mut after_check = false;
            for i in &b.body {
                ops.push(match i {
                    Instr::Set { dst, imm } => Op::Set(r(*dst), *imm),
                    Instr::Mov { dst, src } => Op::Mov(r(*dst), r(*src)),
                    Instr::Bin { op, dst, a, b } => Op::Bin(*op, r(*dst), r(*a), r(*b)),
                    Instr::Ld { dst, var } => Op::Ld(r(*dst), g(var)?),
                    Instr::St { var, src } => Op::St(g(var)?, r(*src)),
                    Instr::Lda { dst, arr, idx } => Op::Lda(r(*dst), g(arr)?, r(*idx)),
                    Instr::Sta { arr, idx, src } => Op::Sta(g(arr)?, r(*idx), r(*src)),
                    Instr::Spawn(t) => Op::Spawn(tid(*t)?),
                    Instr::Join(t) => Op::Join(tid(*t)?),
                    Instr::Lock(x) => Op::Lock(m(x)?),
                    Instr::Unlock(x) => Op::Unlock(m(x)?),
                    Instr::Out(x) => Op::Out(r(*x)),
                    Instr::SigXor { var, imm } => Op::SigXor(g(var)?, *imm),
                    Instr::SigSet { var, imm } => Op::SigSet(g(var)?, *imm),
                    Instr::GCopy { dst, src } | Instr::ACopy { dst, src } => {
                        let (d, s) = (g(dst)?, g(src)?);
                        if after_check && owner != Owner::Handler {
                            commits.push((d, s));
                        }
                        if matches!(i, Instr::GCopy { .. }) {
                            Op::GCopy(d, s)
                        } else {
                            Op::ACopy(d, s)
                        }
                    }
                    Instr::GXor { dst, src } => Op::GXor(g(dst)?, g(src)?),
                    Instr::Chk { var, imm, fail } => {
                        after_check = true;
                        Op::Chk(g(var)?, *imm, target(fail)?)
                    }
                    Instr::Release(x) => Op::Release(m(x)?),
                    Instr::RegSnap(t) => Op::RegSnap(tid(*t)?),
                    Instr::RegRestore(t) => Op::RegRestore(tid(*t)?),
                    Instr::Control(_) => Op::Invalid,
                });
            }
            ops.push(match &b.terminator {
                Terminator::Jmp(l) => Op::Jmp(target(l)?),
                Terminator::Br {
                    cond,
                    reg,
                    on_true,
                    on_false,
                } => Op::Br(*cond, r(*reg), target(on_true)?, target(on_false)?),
                Terminator::Ijmp(x) => Op::Ijmp(r(*x)),
                Terminator::Halt => Op::Halt,
                Terminator::Trap => Op::Trap,
            });
            blocks.push(CBlock {
                owner,
                label: b.label.clone(),
                ops,
                next: None,
                commits,
            });
        }
        for i in 0..blocks.len() {
            if i + 1 < blocks.len() && blocks[i + 1].owner == blocks[i].owner {
                blocks[i].next = Some(i as u32 + 1);
            }
        }
        let entries = p
            .threads
            .iter()
            .map(|t| index[&(Owner::Thread(t.tid), t.entry.clone())])
            .collect();
        let t_slot = gmap.get(crate::instrument::names::T).map(|&g| globals[g as usize].base);
        Ok(Self {
            blocks,
            globals,
            mem_init,
            mutexes: p.mutexes.clone(),
            entries,
            t_slot,
            index,
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_threads(&self) -> usize {
        self.entries.len()
    }

    pub fn block_id(&self, owner: Owner, label: &str) -> Option<u32> {
        self.index.get(&(owner, label.to_string())).copied()
    }

    pub fn block_owner(&self, id: u32) -> Owner {
        self.blocks[id as usize].owner
    }

    pub fn block_label(&self, id: u32) -> &str {
        &self.blocks[id as usize].label
    }

    pub fn block_len(&self, id: u32) -> usize {
        self.blocks[id as usize].ops.len()
    }

    pub fn is_handler(&self, id: u32) -> bool {
        self.blocks[id as usize].owner == Owner::Handler
    }

    /// Whether the instruction at the position is a terminator.
    pub fn is_terminator(&self, id: u32, offset: usize) -> bool {
        self.blocks[id as usize].ops[offset].is_terminator()
    }

    pub fn global_name(&self, id: u32) -> &str {
        &self.globals[id as usize].name
    }

    pub fn global_id(&self, name: &str) -> Option<u32> {
        self.globals.iter().position(|g| g.name == name).map(|i| i as u32)
    }

    pub fn mutex_name(&self, id: u32) -> &str {
        &self.mutexes[id as usize]
    }

    pub fn resolve(&self, loc: &Location) -> Result<(u32, usize), VmError> {
        let id = self
            .block_id(loc.owner, &loc.block)
            .ok_or_else(|| VmError::BadLocation(loc.to_string()))?;
        if loc.offset >= self.block_len(id) {
            return Err(VmError::BadLocation(loc.to_string()));
        }
        Ok((id, loc.offset))
    }

    pub fn location(&self, id: u32, offset: usize) -> Location {
        let b = &self.blocks[id as usize];
        Location::new(b.owner, b.label.clone(), offset)
    }

    pub fn block_name(&self, id: u32) -> String {
        let b = &self.blocks[id as usize];
        format!("{}/{}", b.owner, b.label)
    }

    pub fn run(&self, cfg: &SchedConfig) -> RunResult {
        exec::Machine::new(self, cfg, None).run()
    }

    pub fn run_with_fault(&self, cfg: &SchedConfig, f: &FaultSpec) -> Result<RunResult, VmError> {
        let target = match &f.target {
            Some(l) => Some(self.resolve(l)?),
            None => None,
        };
        Ok(exec::Machine::new(self, cfg, Some((f, target))).run())
    }

    /// Newline-delimited JSON, one event per line.
    pub fn trace_ndjson(&self, trace: &[TraceEvent]) -> String {
        let mut out = String::new();
        for e in trace {
            let line = EventLine {
                kind: e.kind,
                tid: e.tid,
                block: self.block_name(e.block),
                dyn_instr_index: e.dyn_instr_index,
                payload: PayloadText(self, e.payload),
            };
            out.push_str(&serde_json::to_string(&line).expect("event serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize)]
struct EventLine<'a> {
    kind: EventKind,
    tid: usize,
    block: String,
    dyn_instr_index: u64,
    payload: PayloadText<'a>,
}

struct PayloadText<'a>(&'a Image, Payload);

impl Serialize for PayloadText<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let img = self.0;
        match self.1 {
            Payload::None => s.serialize_none(),
            Payload::Sig(v) => s.serialize_i64(v),
            Payload::Var { var, elem, value } => {
                let g = &img.globals[var as usize];
                if !g.array {
                    s.serialize_str(&format!("{}={value}", g.name))
                } else {
                    s.serialize_str(&format!("{}[{elem}]={value}", g.name))
                }
            }
            Payload::Mutex(m) => s.serialize_str(img.mutex_name(m)),
            Payload::Model(m) => s.serialize_str(m.name()),
        }
    }
}

/// Compile and run.
pub fn run(p: &Program, cfg: &SchedConfig) -> Result<RunResult, VmError> {
    Ok(Image::compile(p)?.run(cfg))
}

/// Compile and run with one fault.
pub fn run_with_fault(p: &Program, cfg: &SchedConfig, f: &FaultSpec) -> Result<RunResult, VmError> {
    Image::compile(p)?.run_with_fault(cfg, f)
}
