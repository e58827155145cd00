use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ir::{BinOp, Cond, Owner, NUM_REGS};

use super::{
    EventKind, FaultModel, FaultSpec, Image, Op, Outcome, Payload, RunResult, SchedConfig, Step, TraceEvent, TrapReason,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum State {
    Idle,
    Ready,
    WaitLock(u32),
    WaitJoin(usize),
    Halted,
}

#[derive(Clone, Debug)]
struct Ctx {
    regs: [i64; NUM_REGS],
    block: u32,
    off: usize,
    state: State,
    count: u64,
}

pub(super) struct Machine<'a> {
    img: &'a Image,
    cfg: &'a SchedConfig,
    mem: Vec<i64>,
    ctx: Vec<Ctx>,
    owner: Vec<Option<usize>>,
    banks: Vec<[i64; NUM_REGS]>,
    order: Vec<usize>,
    pos: Vec<usize>,
    now: u64,
    cur: usize,
    slice: u64,
    trace: Vec<TraceEvent>,
    steps: Vec<Step>,
    output: Vec<i64>,
    fault: Option<(&'a FaultSpec, Option<(u32, usize)>)>,
    activated: bool,
    // Audit state: last checked value of each committed original, and
    // shadows whose commit is still outstanding.
    commit_pairs: Vec<(u32, u32)>,
    audit_last: Vec<Vec<i64>>,
    pending: Vec<bool>,
}

type Flow = Result<(), TrapReason>;

impl<'a> Machine<'a> {
    pub(super) fn new(img: &'a Image, cfg: &'a SchedConfig, fault: Option<(&'a FaultSpec, Option<(u32, usize)>)>) -> Self {
        let n = img.num_threads();
        let mut order: Vec<usize> = (0..n).collect();
        if cfg.seed != 0 {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
        }
        let mut pos = vec![0; n];
        for (i, t) in order.iter().enumerate() {
            pos[*t] = i;
        }
        let mut commit_pairs: Vec<(u32, u32)> = Vec::new();
        if cfg.audit {
            for b in &img.blocks {
                for p in &b.commits {
                    if !commit_pairs.contains(p) {
                        commit_pairs.push(*p);
                    }
                }
            }
        }
        let mem = img.mem_init.clone();
        let audit_last = img
            .globals
            .iter()
            .map(|g| if cfg.audit { mem[g.base..g.base + g.len].to_vec() } else { Vec::new() })
            .collect();
        Self {
            img,
            cfg,
            ctx: (0..n)
                .map(|t| Ctx {
                    regs: [0; NUM_REGS],
                    block: img.entries[t],
                    off: 0,
                    state: State::Idle,
                    count: 0,
                })
                .collect(),
            mem,
            owner: vec![None; img.mutexes.len()],
            banks: vec![[0; NUM_REGS]; n],
            order,
            pos,
            now: 0,
            cur: 0,
            slice: 0,
            trace: Vec::new(),
            steps: Vec::new(),
            output: Vec::new(),
            fault,
            activated: false,
            commit_pairs,
            audit_last,
            pending: vec![false; img.globals.len()],
        }
    }

    fn ev(&mut self, kind: EventKind, tid: usize, block: u32, idx: u64, payload: Payload) {
        if self.cfg.trace {
            self.trace.push(TraceEvent {
                kind,
                tid,
                block,
                dyn_instr_index: idx,
                payload,
            });
        }
    }

    fn set_thread_id(&mut self) {
        if let Some(s) = self.img.t_slot {
            self.mem[s] = self.cur as i64;
        }
    }

    fn next_ready(&self) -> Option<usize> {
        let n = self.order.len();
        let start = self.pos[self.cur];
        (1..=n)
            .map(|k| self.order[(start + k) % n])
            .find(|&t| self.ctx[t].state == State::Ready)
    }

    pub(super) fn run(mut self) -> RunResult {
        let mut outcome = Outcome::Completed;
        if !self.ctx.is_empty() {
            self.ctx[0].state = State::Ready;
            self.set_thread_id();
            let b = self.ctx[0].block;
            self.ev(EventKind::BlockEnter, 0, b, 0, Payload::None);
            outcome = loop {
                if self.now >= self.cfg.max_steps {
                    break Outcome::Timeout;
                }
                let c = self.cur;
                let expired = self.slice >= self.cfg.quantum && !self.img.is_handler(self.ctx[c].block);
                if self.ctx[c].state != State::Ready || expired {
                    match self.next_ready() {
                        None => {
                            let stuck = self
                                .ctx
                                .iter()
                                .any(|x| matches!(x.state, State::WaitLock(_) | State::WaitJoin(_)));
                            break if stuck {
                                Outcome::Trap(TrapReason::Deadlock)
                            } else {
                                Outcome::Completed
                            };
                        }
                        Some(n) => {
                            if n != c {
                                self.cur = n;
                                self.set_thread_id();
                                let b = self.ctx[n].block;
                                self.ev(EventKind::ContextSwitch, n, b, self.now, Payload::None);
                            }
                            self.slice = 0;
                        }
                    }
                }
                if let Err(r) = self.step() {
                    break Outcome::Trap(r);
                }
            };
        }
        let img = self.img;
        let memory = img
            .globals
            .iter()
            .filter(|g| !g.reserved)
            .map(|g| (g.name.clone(), self.mem[g.base..g.base + g.len].to_vec()))
            .collect();
        RunResult {
            outcome,
            output: self.output,
            dyn_instr_total: self.now,
            per_thread: self.ctx.iter().map(|c| c.count).collect(),
            trace: self.trace,
            steps: self.steps,
            memory,
            fault_activated: self.activated,
        }
    }

    fn goto(&mut self, c: usize, from: u32, to: u32, off: usize, idx: u64) {
        self.ctx[c].block = to;
        self.ctx[c].off = off;
        if self.cfg.trace {
            let (fh, th) = (self.img.is_handler(from), self.img.is_handler(to));
            if fh && !th {
                self.ev(EventKind::HandlerExit, c, from, idx, Payload::None);
            }
            if !fh && th {
                self.ev(EventKind::HandlerEnter, c, to, idx + 1, Payload::None);
            }
            self.ev(EventKind::BlockEnter, c, to, idx + 1, Payload::None);
        }
    }

    /// Destination of the pending fault if it fires on `op`, or `None` when
    /// the model does not apply to this instruction.
    fn fault_dest(&self, op: &Op, c: usize, block: u32) -> Option<Result<(u32, usize), TrapReason>> {
        let (f, target) = self.fault?;
        let term = op.is_terminator();
        match f.model {
            FaultModel::BranchInsertion if !term => target.map(Ok),
            FaultModel::BranchTargetMod if term => target.map(Ok),
            FaultModel::BranchDeletion if term => Some(
                self.img.blocks[block as usize]
                    .next
                    .map(|n| (n, 0))
                    .ok_or(TrapReason::PcOutOfCode),
            ),
            FaultModel::InterThreadSwitch => {
                let (b, off) = target?;
                match self.img.block_owner(b) {
                    Owner::Thread(t) if t != c => Some(Ok((b, off))),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    fn wake_lock(&mut self, m: u32) {
        if let Some(w) = self.ctx.iter().position(|x| x.state == State::WaitLock(m)) {
            self.ctx[w].state = State::Ready;
        }
    }

    fn unlock(&mut self, c: usize, m: u32, block: u32, idx: u64) {
        self.owner[m as usize] = None;
        self.ev(EventKind::LockRelease, c, block, idx, Payload::Mutex(m));
        self.wake_lock(m);
    }

    fn element(&self, g: u32, idx: i64) -> Result<usize, TrapReason> {
        let gl = &self.img.globals[g as usize];
        if idx < 0 || idx as usize >= gl.len {
            return Err(TrapReason::OutOfBounds);
        }
        Ok(gl.base + idx as usize)
    }

    fn audit_check(&mut self, block: u32) -> Flow {
        for &(sh, v) in &self.commit_pairs {
            if self.pending[sh as usize] {
                continue;
            }
            let g = &self.img.globals[sh as usize];
            if self.mem[g.base..g.base + g.len] != self.audit_last[v as usize][..] {
                return Err(TrapReason::AuditViolation(self.img.globals[v as usize].name.clone()));
            }
        }
        for &(sh, v) in &self.img.blocks[block as usize].commits {
            let g = &self.img.globals[v as usize];
            self.audit_last[v as usize] = self.mem[g.base..g.base + g.len].to_vec();
            self.pending[sh as usize] = true;
        }
        Ok(())
    }

    fn step(&mut self) -> Flow {
        let img = self.img;
        let c = self.cur;
        let (b, off) = (self.ctx[c].block, self.ctx[c].off);
        let op = &img.blocks[b as usize].ops[off];

        match *op {
            Op::Lock(m) if self.owner[m as usize].is_some_and(|o| o != c) => {
                self.ctx[c].state = State::WaitLock(m);
                return Ok(());
            }
            Op::Join(t) if self.ctx[t].state != State::Halted => {
                self.ctx[c].state = State::WaitJoin(t);
                return Ok(());
            }
            _ => {}
        }

        let idx = self.now;
        if self.cfg.record_steps {
            self.steps.push(Step {
                block: b,
                offset: off as u32,
                ctx: c as u16,
            });
        }
        self.now += 1;
        self.slice += 1;
        self.ctx[c].count += 1;

        if let Some((f, _)) = self.fault {
            if f.trigger == idx {
                let dest = self.fault_dest(op, c, b);
                self.fault = None;
                if let Some(dest) = dest {
                    self.activated = true;
                    self.ev(EventKind::FaultActivated, c, b, idx, Payload::Model(f.model));
                    let (nb, noff) = dest?;
                    self.goto(c, b, nb, noff, idx);
                    return Ok(());
                }
            }
        }

        let mut next = off + 1;
        match *op {
            Op::Set(d, imm) => self.ctx[c].regs[d] = imm,
            Op::Mov(d, s) => self.ctx[c].regs[d] = self.ctx[c].regs[s],
            Op::Bin(o, d, x, y) => {
                let r = &mut self.ctx[c].regs;
                let (x, y) = (r[x], r[y]);
                r[d] = match o {
                    BinOp::Add => x.wrapping_add(y),
                    BinOp::Sub => x.wrapping_sub(y),
                    BinOp::Mul => x.wrapping_mul(y),
                    BinOp::Div => {
                        if y == 0 {
                            return Err(TrapReason::DivisionByZero);
                        }
                        x.wrapping_div(y)
                    }
                    BinOp::Xor => x ^ y,
                    BinOp::CmpLt => i64::from(x < y),
                    BinOp::CmpEq => i64::from(x == y),
                };
            }
            Op::Ld(d, g) => {
                let gl = &img.globals[g as usize];
                let v = self.mem[gl.base];
                self.ctx[c].regs[d] = v;
                if !gl.reserved {
                    self.ev(EventKind::SharedRead, c, b, idx, Payload::Var { var: g, elem: 0, value: v });
                }
            }
            Op::St(g, s) => {
                let gl = &img.globals[g as usize];
                let v = self.ctx[c].regs[s];
                self.mem[gl.base] = v;
                if !gl.reserved {
                    self.ev(EventKind::SharedWrite, c, b, idx, Payload::Var { var: g, elem: 0, value: v });
                }
            }
            Op::Lda(d, g, i) => {
                let e = self.ctx[c].regs[i];
                let a = self.element(g, e)?;
                let v = self.mem[a];
                self.ctx[c].regs[d] = v;
                if !img.globals[g as usize].reserved {
                    self.ev(EventKind::SharedRead, c, b, idx, Payload::Var { var: g, elem: e as u32, value: v });
                }
            }
            Op::Sta(g, i, s) => {
                let e = self.ctx[c].regs[i];
                let a = self.element(g, e)?;
                let v = self.ctx[c].regs[s];
                self.mem[a] = v;
                if !img.globals[g as usize].reserved {
                    self.ev(EventKind::SharedWrite, c, b, idx, Payload::Var { var: g, elem: e as u32, value: v });
                }
            }
            Op::Spawn(t) => {
                if self.ctx[t].state != State::Idle {
                    return Err(TrapReason::DoubleSpawn);
                }
                self.ctx[t].state = State::Ready;
                let e = img.entries[t];
                self.ev(EventKind::BlockEnter, t, e, idx + 1, Payload::None);
            }
            Op::Join(_) => {}
            Op::Lock(m) => {
                if self.owner[m as usize].is_none() {
                    self.owner[m as usize] = Some(c);
                    self.ev(EventKind::LockAcquire, c, b, idx, Payload::Mutex(m));
                }
            }
            Op::Unlock(m) => {
                if self.owner[m as usize] != Some(c) {
                    return Err(TrapReason::UnlockUnheld);
                }
                self.unlock(c, m, b, idx);
            }
            Op::Release(m) => {
                if self.owner[m as usize] == Some(c) {
                    self.unlock(c, m, b, idx);
                }
            }
            Op::Out(r) => self.output.push(self.ctx[c].regs[r]),
            Op::SigXor(g, imm) => self.mem[img.globals[g as usize].base] ^= imm,
            Op::SigSet(g, imm) => self.mem[img.globals[g as usize].base] = imm,
            Op::GXor(d, s) => {
                let v = self.mem[img.globals[s as usize].base];
                self.mem[img.globals[d as usize].base] ^= v;
            }
            Op::GCopy(d, s) | Op::ACopy(d, s) => {
                let (gd, gs) = (&img.globals[d as usize], &img.globals[s as usize]);
                let n = gd.len.min(gs.len);
                self.mem.copy_within(gs.base..gs.base + n, gd.base);
                if self.cfg.audit && !img.is_handler(b) {
                    self.pending[d as usize] = false;
                }
            }
            Op::Chk(g, imm, fail) => {
                let v = self.mem[img.globals[g as usize].base];
                if v == imm {
                    self.ev(EventKind::CheckPass, c, b, idx, Payload::Sig(v));
                    if self.cfg.audit && !img.is_handler(b) {
                        self.audit_check(b)?;
                    }
                } else {
                    self.ev(EventKind::CheckFail, c, b, idx, Payload::Sig(v));
                    self.goto(c, b, fail, 0, idx);
                    return Ok(());
                }
            }
            Op::RegSnap(t) => self.banks[t] = self.ctx[c].regs,
            Op::RegRestore(t) => self.ctx[c].regs = self.banks[t],
            Op::Jmp(t) => {
                self.goto(c, b, t, 0, idx);
                return Ok(());
            }
            Op::Br(cond, r, t, f) => {
                let v = self.ctx[c].regs[r];
                let taken = match cond {
                    Cond::Eqz => v == 0,
                    Cond::Nez => v != 0,
                };
                self.goto(c, b, if taken { t } else { f }, 0, idx);
                return Ok(());
            }
            Op::Ijmp(r) => {
                let v = self.ctx[c].regs[r];
                if v < 0 || v as usize >= img.num_blocks() {
                    return Err(TrapReason::BadIjmp);
                }
                self.goto(c, b, v as u32, 0, idx);
                return Ok(());
            }
            Op::Halt => {
                if self.cfg.trace && img.is_handler(b) {
                    self.ev(EventKind::HandlerExit, c, b, idx, Payload::None);
                }
                self.ctx[c].state = State::Halted;
                for x in &mut self.ctx {
                    if x.state == State::WaitJoin(c) {
                        x.state = State::Ready;
                    }
                }
                next = off;
            }
            Op::Trap => return Err(TrapReason::HandlerSignatureMiss),
            Op::Invalid => return Err(TrapReason::PcOutOfCode),
        }
        self.ctx[c].off = next;
        Ok(())
    }
}
