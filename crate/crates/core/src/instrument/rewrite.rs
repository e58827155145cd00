use std::collections::{BTreeMap, BTreeSet};

use crate::depgraph::{build_dgmp, BlockRef, Dgmp};
use crate::ir::{BasicBlock, BinOp, Cond, Instr, Owner, Program, Reg, Terminator};

use super::names::{self, adj, branch_save, dst, fail, restore_source, resume, shadow, sst};
use super::{InstrumentedProgram, Mode, ShadowPolicy, SignatureMap, Tag, EXIT_MARK};

const R30: Reg = Reg(30);
const R31: Reg = Reg(31);

struct Builder {
    label: String,
    body: Vec<Instr>,
    tags: Vec<Tag>,
}

impl Builder {
    fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            body: Vec::new(),
            tags: Vec::new(),
        }
    }

    fn push(&mut self, i: Instr, t: Tag) {
        self.body.push(i);
        self.tags.push(t);
    }

    fn finish(mut self, term: Terminator, t: Tag) -> (BasicBlock, Vec<Tag>) {
        self.tags.push(t);
        (BasicBlock::new(self.label, self.body, term), self.tags)
    }
}

/// Which globals each block commits after its check, which the fail site of
/// each block restores, and which the handler restores before resuming a
/// source block.
struct Plan<'a> {
    p: &'a Program,
    sm: &'a SignatureMap,
    policy: ShadowPolicy,
    commit: BTreeMap<BlockRef, Vec<String>>,
    fail_restore: BTreeMap<BlockRef, Vec<String>>,
    source_restore: BTreeMap<BlockRef, Vec<String>>,
}

fn copy(p: &Program, to: String, from: String, base: &str) -> Instr {
    if p.array(base).is_some() {
        Instr::ACopy { dst: to, src: from }
    } else {
        Instr::GCopy { dst: to, src: from }
    }
}

/// Globals in declaration order, filtered by `keep`.
fn ordered(p: &Program, keep: &BTreeSet<String>) -> Vec<String> {
    p.shared_vars
        .iter()
        .map(|(n, _)| n)
        .chain(p.shared_arrays.iter().map(|a| &a.name))
        .filter(|n| keep.contains(*n))
        .cloned()
        .collect()
}

fn branch_reg(t: &Terminator) -> Option<Reg> {
    match t {
        Terminator::Br { reg, .. } | Terminator::Ijmp(reg) => Some(*reg),
        _ => None,
    }
}

fn locked_mutexes(b: &BasicBlock) -> Vec<String> {
    let mut ms: Vec<String> = Vec::new();
    for i in &b.body {
        if let Instr::Lock(m) = i {
            if !ms.contains(m) {
                ms.push(m.clone());
            }
        }
    }
    ms
}

fn crmp_plan<'a>(p: &'a Program, sm: &'a SignatureMap, dgmp: &Dgmp, policy: ShadowPolicy) -> Plan<'a> {
    let mut commit = BTreeMap::new();
    for d in &dgmp.dgsts {
        for (label, acc) in &d.dfg.blocks {
            commit.insert(BlockRef::new(d.tid, label), ordered(p, &acc.def_globals));
        }
    }
    Plan {
        p,
        sm,
        policy,
        fail_restore: commit.clone(),
        source_restore: commit.clone(),
        commit,
    }
}

fn bcp_plan<'a>(p: &'a Program, sm: &'a SignatureMap) -> Plan<'a> {
    let all: BTreeSet<String> = p
        .shared_vars
        .iter()
        .map(|(n, _)| n.clone())
        .chain(p.shared_arrays.iter().map(|a| a.name.clone()))
        .collect();
    let all = ordered(p, &all);
    let mut commit = BTreeMap::new();
    let mut none = BTreeMap::new();
    for t in &p.threads {
        for b in &t.blocks {
            commit.insert(BlockRef::new(t.tid, &b.label), all.clone());
            none.insert(BlockRef::new(t.tid, &b.label), Vec::new());
        }
    }
    Plan {
        p,
        sm,
        policy: ShadowPolicy::Globals,
        fail_restore: commit.clone(),
        source_restore: none,
        commit,
    }
}

impl Plan<'_> {
    fn rewrite_block(&self, tid: usize, b: &BasicBlock) -> (BasicBlock, Vec<Tag>) {
        let key = BlockRef::new(tid, &b.label);
        let sm = self.sm;
        let mut out = Builder::new(&b.label);
        out.push(
            Instr::SigSet {
                var: dst(tid),
                imm: i64::from(sm.sigs[&key]),
            },
            Tag::SigUpdate,
        );
        out.push(
            Instr::SigXor {
                var: sst(tid),
                imm: sm.entry_xor[&key] as i64,
            },
            Tag::SigUpdate,
        );
        if sm.fan_in.contains_key(&key) {
            out.push(
                Instr::GXor {
                    dst: sst(tid),
                    src: adj(tid),
                },
                Tag::SigUpdate,
            );
        }
        out.push(
            Instr::SigSet {
                var: names::T.into(),
                imm: tid as i64,
            },
            Tag::ThreadId,
        );
        let trailing = b.body.last().filter(|i| i.is_release()).cloned();
        let main = &b.body[..b.body.len() - usize::from(trailing.is_some())];
        for i in main {
            out.push(i.clone(), Tag::Original);
        }
        out.push(
            Instr::Chk {
                var: sst(tid),
                imm: sm.sigs[&key] as i64,
                fail: fail(tid, &b.label),
            },
            Tag::Check,
        );
        for v in &self.commit[&key] {
            out.push(copy(self.p, shadow(v), v.clone(), v), Tag::Commit);
        }
        if let Some(a) = sm.adjust.get(&key) {
            out.push(
                Instr::SigSet {
                    var: adj(tid),
                    imm: *a as i64,
                },
                Tag::AdjSet,
            );
        }
        if self.policy == ShadowPolicy::All {
            out.push(Instr::RegSnap(tid), Tag::RegSnap);
        }
        if let Some(r) = branch_reg(&b.terminator) {
            out.push(Instr::St { var: branch_save(tid), src: r }, Tag::Commit);
        }
        out.push(
            Instr::SigXor {
                var: sst(tid),
                imm: EXIT_MARK as i64,
            },
            Tag::SigUpdate,
        );
        if let Some(r) = trailing {
            out.push(r, Tag::Original);
        }
        let (mut bb, tags) = out.finish(b.terminator.clone(), Tag::Original);
        bb.is_critical_section = b.is_critical_section;
        (bb, tags)
    }

    fn fail_site(&self, tid: usize, b: &BasicBlock) -> Vec<(BasicBlock, Vec<Tag>)> {
        let key = BlockRef::new(tid, &b.label);
        let label = fail(tid, &b.label);
        let mut out = Builder::new(&label);
        for v in &self.fail_restore[&key] {
            out.push(copy(self.p, v.clone(), shadow(v), v), Tag::Restore);
        }
        for m in locked_mutexes(b) {
            out.push(Instr::Release(m), Tag::Restore);
        }
        let set = |var: &str, imm: i64| Instr::SigSet { var: var.into(), imm };
        out.push(set(names::EXP, tid as i64), Tag::Dispatch);
        // `__dst<j>` names this block only if its entry code ran; then the key
        // undoes the entry update.
        out.push(Instr::Ld { dst: R31, var: dst(tid) }, Tag::Dispatch);
        out.push(Instr::Set { dst: R30, imm: i64::from(self.sm.sigs[&key]) }, Tag::Dispatch);
        out.push(
            Instr::Bin {
                op: BinOp::CmpEq,
                dst: R30,
                a: R31,
                b: R30,
            },
            Tag::Dispatch,
        );
        let (lk, ln) = (format!("{label}.k"), format!("{label}.n"));
        let head = out.finish(
            Terminator::Br {
                cond: Cond::Nez,
                reg: R30,
                on_true: lk.clone(),
                on_false: ln.clone(),
            },
            Tag::Dispatch,
        );
        let mut entered = Builder::new(lk);
        entered.push(set(names::KEY, self.sm.entry_xor[&key] as i64), Tag::Dispatch);
        if self.sm.fan_in.contains_key(&key) {
            entered.push(
                Instr::GXor {
                    dst: names::KEY.into(),
                    src: adj(tid),
                },
                Tag::Dispatch,
            );
        }
        let mut skipped = Builder::new(ln);
        skipped.push(set(names::KEY, 0), Tag::Dispatch);
        vec![
            head,
            entered.finish(Terminator::Jmp(names::HANDLER.into()), Tag::Dispatch),
            skipped.finish(Terminator::Jmp(names::HANDLER.into()), Tag::Dispatch),
        ]
    }

    fn restore_source(&self, tid: usize, b: &BasicBlock) -> (BasicBlock, Vec<Tag>) {
        let key = BlockRef::new(tid, &b.label);
        let mut out = Builder::new(restore_source(tid, &b.label));
        for v in &self.source_restore[&key] {
            out.push(copy(self.p, v.clone(), shadow(v), v), Tag::Restore);
        }
        if self.policy == ShadowPolicy::All {
            out.push(Instr::RegRestore(tid), Tag::Restore);
        }
        out.push(
            Instr::SigSet {
                var: sst(tid),
                imm: (u32::from(self.sm.sigs[&key]) ^ self.sm.entry_xor[&key]) as i64,
            },
            Tag::Transfer,
        );
        if self.sm.fan_in.contains_key(&key) {
            out.push(Instr::SigSet { var: adj(tid), imm: 0 }, Tag::Transfer);
        }
        let id = self.p.block_id(Owner::Thread(tid), &b.label).expect("block id");
        out.push(Instr::Set { dst: R31, imm: id as i64 }, Tag::Transfer);
        out.finish(Terminator::Ijmp(R31), Tag::Transfer)
    }

    /// Resume after a block whose check and commits completed: repeat its
    /// trailing unlock and take its branch again from the saved operand.
    fn resume(&self, tid: usize, b: &BasicBlock) -> Vec<(BasicBlock, Vec<Tag>)> {
        let label = resume(tid, &b.label);
        let mut out = Builder::new(&label);
        if self.policy == ShadowPolicy::All {
            out.push(Instr::RegRestore(tid), Tag::Restore);
        }
        if let Some(Instr::Unlock(m)) = b.body.last() {
            out.push(Instr::Release(m.clone()), Tag::Restore);
        }
        out.push(
            Instr::SigSet {
                var: sst(tid),
                imm: self.sm.exit(tid, &b.label) as i64,
            },
            Tag::Transfer,
        );
        let id = |l: &str| self.p.block_id(Owner::Thread(tid), l).expect("block id") as i64;
        let jump = |mut bl: Builder, target: &str| {
            bl.push(Instr::Set { dst: R31, imm: id(target) }, Tag::Transfer);
            bl.finish(Terminator::Ijmp(R31), Tag::Transfer)
        };
        let load = Instr::Ld {
            dst: R31,
            var: branch_save(tid),
        };
        match &b.terminator {
            Terminator::Jmp(c) => vec![jump(out, c)],
            Terminator::Br {
                cond,
                on_true,
                on_false,
                ..
            } => {
                out.push(load, Tag::Transfer);
                let (lt, lf) = (format!("{label}.t"), format!("{label}.f"));
                let head = out.finish(
                    Terminator::Br {
                        cond: *cond,
                        reg: R31,
                        on_true: lt.clone(),
                        on_false: lf.clone(),
                    },
                    Tag::Transfer,
                );
                vec![head, jump(Builder::new(lt), on_true), jump(Builder::new(lf), on_false)]
            }
            Terminator::Ijmp(_) => {
                out.push(load, Tag::Transfer);
                vec![out.finish(Terminator::Ijmp(R31), Tag::Transfer)]
            }
            Terminator::Halt => vec![out.finish(Terminator::Halt, Tag::Transfer)],
            Terminator::Trap => vec![out.finish(Terminator::Trap, Tag::Transfer)],
        }
    }

    /// Compare r31 against the signature and the exit value of each block of
    /// thread `tid`. A signature hit restarts the block, an exit hit resumes
    /// after it, a miss falls to `miss`.
    fn lookup_chain(&self, tid: usize, prefix: &str, head: Vec<Instr>, miss: &str) -> Vec<(BasicBlock, Vec<Tag>)> {
        let mut entries = Vec::new();
        for b in &self.p.threads[tid].blocks {
            entries.push((i64::from(self.sm.sig(tid, &b.label)), restore_source(tid, &b.label)));
            entries.push((self.sm.exit(tid, &b.label) as i64, resume(tid, &b.label)));
        }
        let label = |k: usize| format!("{prefix}{tid}_{k}");
        let mut out = Vec::new();
        for (k, (value, target)) in entries.iter().enumerate() {
            let mut bl = Builder::new(label(k));
            if k == 0 {
                for i in &head {
                    bl.push(i.clone(), Tag::Dispatch);
                }
            }
            bl.push(Instr::Set { dst: R30, imm: *value }, Tag::Dispatch);
            bl.push(
                Instr::Bin {
                    op: BinOp::CmpEq,
                    dst: R30,
                    a: R31,
                    b: R30,
                },
                Tag::Dispatch,
            );
            let next = if k + 1 < entries.len() { label(k + 1) } else { miss.to_string() };
            out.push(bl.finish(
                Terminator::Br {
                    cond: Cond::Nez,
                    reg: R30,
                    on_true: target.clone(),
                    on_false: next,
                },
                Tag::Dispatch,
            ));
        }
        out
    }

    fn handler(&self) -> Vec<(BasicBlock, Vec<Tag>)> {
        let p = self.p;
        let n = p.threads.len();
        let mut out = Vec::new();
        for t in &p.threads {
            for b in &t.blocks {
                out.extend(self.fail_site(t.tid, b));
            }
        }

        // Intra- or inter-thread: compare the running thread with the owner
        // of the failing check.
        let mut h = Builder::new(names::HANDLER);
        h.push(Instr::Ld { dst: R31, var: names::T.into() }, Tag::Dispatch);
        h.push(Instr::Ld { dst: R30, var: names::EXP.into() }, Tag::Dispatch);
        h.push(
            Instr::Bin {
                op: BinOp::CmpEq,
                dst: R31,
                a: R31,
                b: R30,
            },
            Tag::Dispatch,
        );
        out.push(h.finish(
            Terminator::Br {
                cond: Cond::Nez,
                reg: R31,
                on_true: "__h_intra".into(),
                on_false: "__h_inter".into(),
            },
            Tag::Dispatch,
        ));
        out.push(Builder::new("__h_intra").finish(Terminator::Jmp("__h_src0".into()), Tag::Dispatch));
        let mut inter = Builder::new("__h_inter");
        inter.push(Instr::SigSet { var: names::KEY.into(), imm: 0 }, Tag::Dispatch);
        out.push(inter.finish(Terminator::Jmp("__h_src0".into()), Tag::Dispatch));

        // Source thread = __T.
        for k in 0..n {
            let mut b = Builder::new(format!("__h_src{k}"));
            if k == 0 {
                b.push(Instr::Ld { dst: R31, var: names::T.into() }, Tag::Dispatch);
            }
            b.push(Instr::Set { dst: R30, imm: k as i64 }, Tag::Dispatch);
            b.push(
                Instr::Bin {
                    op: BinOp::CmpEq,
                    dst: R30,
                    a: R31,
                    b: R30,
                },
                Tag::Dispatch,
            );
            let next = if k + 1 < n { format!("__h_src{}", k + 1) } else { names::MISS.into() };
            out.push(b.finish(
                Terminator::Br {
                    cond: Cond::Nez,
                    reg: R30,
                    on_true: format!("__h_lk{k}_0"),
                    on_false: next,
                },
                Tag::Dispatch,
            ));
        }

        // Source block of the failing thread, from its run-time signature
        // with the failing block's entry update undone.
        for t in &p.threads {
            let j = t.tid;
            out.extend(self.lookup_chain(
                j,
                "__h_lk",
                vec![
                    Instr::Ld { dst: R31, var: sst(j) },
                    Instr::Ld {
                        dst: R30,
                        var: names::KEY.into(),
                    },
                    Instr::Bin {
                        op: BinOp::Xor,
                        dst: R31,
                        a: R31,
                        b: R30,
                    },
                ],
                names::MISS,
            ));
            for b in &t.blocks {
                out.push(self.restore_source(j, b));
                out.extend(self.resume(j, b));
            }
        }
        out.push(Builder::new(names::MISS).finish(Terminator::Trap, Tag::Dispatch));
        out
    }

    fn build(&self, mode: Mode) -> InstrumentedProgram {
        let p = self.p;
        let sm = self.sm;
        let mut out = p.clone();
        let mut tags = Vec::new();
        for t in &mut out.threads {
            for b in &mut t.blocks {
                let (nb, bt) = self.rewrite_block(t.tid, b);
                *b = nb;
                tags.push(bt);
            }
        }
        for (b, bt) in self.handler() {
            out.handler.push(b);
            tags.push(bt);
        }

        for t in &p.threads {
            let j = t.tid;
            out.shared_vars.push((sst(j), sm.initial_sst[j] as i64));
            out.shared_vars.push((dst(j), 0));
            if sm.fan_in.keys().any(|k| k.tid == j) {
                out.shared_vars.push((adj(j), sm.initial_adj[j] as i64));
            }
            if t.blocks.iter().any(|b| branch_reg(&b.terminator).is_some()) {
                out.shared_vars.push((branch_save(j), 0));
            }
        }
        for n in [names::T, names::EXP, names::KEY] {
            out.shared_vars.push((n.into(), 0));
        }
        let shadowed: BTreeSet<String> = self.commit.values().flatten().cloned().collect();
        for (n, v) in &p.shared_vars {
            if shadowed.contains(n) {
                out.shared_vars.push((shadow(n), *v));
            }
        }
        for a in &p.shared_arrays {
            if shadowed.contains(&a.name) {
                let mut s = a.clone();
                s.name = shadow(&a.name);
                out.shared_arrays.push(s);
            }
        }

        InstrumentedProgram {
            program: out,
            baseline: p.clone(),
            sigmap: sm.clone(),
            mode,
            shadow_policy: self.policy,
            tags,
        }
    }
}

/// CRMP rewrite: entry signature update, original body, check, commits of
/// the block's modified globals, then the deferred release instruction and
/// the terminator. `p` must already be normalized.
pub fn instrument_crmp(p: &Program, sm: &SignatureMap, policy: ShadowPolicy) -> InstrumentedProgram {
    let dgmp = build_dgmp(p);
    crmp_plan(p, sm, &dgmp, policy).build(Mode::Crmp)
}

/// Same detection scheme as CRMP, but every block commits every global and
/// every fail site restores every global.
pub fn instrument_bcp(p: &Program, sm: &SignatureMap) -> InstrumentedProgram {
    bcp_plan(p, sm).build(Mode::Bcp)
}

/// The CRMP handler region on its own.
pub fn emit_handler(p: &Program, sm: &SignatureMap, dgmp: &Dgmp, policy: ShadowPolicy) -> Vec<BasicBlock> {
    crmp_plan(p, sm, dgmp, policy)
        .handler()
        .into_iter()
        .map(|(b, _)| b)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::{instrument, prepare};
    use crate::ir::{parse_program, serialize, static_size, validate_basic_block_form};

    const FIG5: &str = "program fig5
shared X = 0
shared Y = 0
shared Z = 0
thread 0 {
  block N1 {
    set r1, 3
    st Y, r1
    set r2, 4
    st Z, r2
    jmp N2
  }
  block N2 {
    ld r1, Y
    ld r2, Z
    add r3, r1, r2
    st X, r3
    jmp N3
  }
  block N3 {
    ld r1, X
    out r1
    halt
  }
}
";

    const LOCKED: &str = "program l
shared g0 = 0
mutex m
thread 0 {
  block A {
    spawn 1
    jmp B
  }
  block B {
    lock m
    ld r1, g0
    set r2, 1
    add r1, r1, r2
    st g0, r1
    unlock m
    jmp C
  }
  block C {
    join 1
    ld r1, g0
    out r1
    halt
  }
}
thread 1 {
  block D {
    lock m
    ld r1, g0
    set r2, 2
    add r1, r1, r2
    st g0, r1
    unlock m
    halt
  }
}
";

    #[test]
    fn instrumented_program_is_well_formed_and_parses_back() {
        for src in [FIG5, LOCKED] {
            for mode in [Mode::Crmp, Mode::Bcp] {
                let ip = instrument(&parse_program(src).unwrap(), mode, ShadowPolicy::Globals).unwrap();
                assert!(validate_basic_block_form(&ip.program).is_empty());
                let text = serialize(&ip.program);
                assert_eq!(parse_program(&text).unwrap(), ip.program);
            }
        }
    }

    #[test]
    fn strip_recovers_input() {
        for src in [FIG5, LOCKED] {
            let p = parse_program(src).unwrap();
            for mode in [Mode::Crmp, Mode::Bcp, Mode::None] {
                for policy in [ShadowPolicy::Globals, ShadowPolicy::All] {
                    let ip = instrument(&p, mode, policy).unwrap();
                    assert_eq!(ip.strip(), prepare(&p).unwrap());
                    assert_eq!(ip.strip(), ip.baseline);
                }
            }
        }
    }

    #[test]
    fn one_commit_for_single_global_writer() {
        let ip = instrument(&parse_program(LOCKED).unwrap(), Mode::Crmp, ShadowPolicy::Globals).unwrap();
        let b = &ip.program.threads[1].blocks[0];
        let commits: Vec<_> = b.body.iter().filter(|i| matches!(i, Instr::GCopy { .. })).collect();
        assert_eq!(commits.len(), 1);
        let bcp = instrument(&parse_program(LOCKED).unwrap(), Mode::Bcp, ShadowPolicy::Globals).unwrap();
        assert_eq!(bcp.program.threads[1].blocks[0].body, b.body);
    }

    #[test]
    fn check_precedes_unlock_in_critical_block() {
        let ip = instrument(&parse_program(LOCKED).unwrap(), Mode::Crmp, ShadowPolicy::Globals).unwrap();
        let b = &ip.program.threads[1].blocks[0];
        assert!(b.is_critical_section);
        let chk = b.body.iter().position(|i| matches!(i, Instr::Chk { .. })).unwrap();
        let unlock = b.body.iter().position(|i| matches!(i, Instr::Unlock(_))).unwrap();
        let commit = b.body.iter().position(|i| matches!(i, Instr::GCopy { .. })).unwrap();
        assert!(chk < commit && commit < unlock);
        assert_eq!(unlock, b.body.len() - 1);
    }

    #[test]
    fn fig5_handler_restores_modified_sets() {
        let ip = instrument(&parse_program(FIG5).unwrap(), Mode::Crmp, ShadowPolicy::Globals).unwrap();
        let rs = ip.program.find_block(Owner::Handler, "__h_rs_0_N2").unwrap();
        assert_eq!(
            rs.body[0],
            Instr::GCopy {
                dst: "X".into(),
                src: "__sh_X".into()
            }
        );
        let fs = ip.program.find_block(Owner::Handler, "__fail_0_N3").unwrap();
        assert!(!fs.body.iter().any(|i| matches!(i, Instr::GCopy { .. })));
        assert_eq!(rs.terminator, Terminator::Ijmp(R31));
    }

    #[test]
    fn bcp_is_larger() {
        for src in [FIG5, LOCKED] {
            let p = parse_program(src).unwrap();
            let c = instrument(&p, Mode::Crmp, ShadowPolicy::Globals).unwrap();
            let b = instrument(&p, Mode::Bcp, ShadowPolicy::Globals).unwrap();
            assert!(static_size(&b.program).total() >= static_size(&c.program).total());
        }
    }

    #[test]
    fn critical_ranges_cover_instrumentation() {
        let ip = instrument(&parse_program(FIG5).unwrap(), Mode::Crmp, ShadowPolicy::Globals).unwrap();
        let r = ip.critical_instr_ranges();
        // N2: [sigset dst, sigxor, sigset T], body of 4, [chk, commit, sigxor], jmp.
        assert_eq!(r[&(0, "N2".to_string())], vec![(0, 3), (7, 10)]);
    }

    #[test]
    fn sidecar_is_deterministic() {
        let p = parse_program(LOCKED).unwrap();
        let a = instrument(&p, Mode::Crmp, ShadowPolicy::Globals).unwrap().sidecar_json();
        let b = instrument(&p, Mode::Crmp, ShadowPolicy::Globals).unwrap().sidecar_json();
        assert_eq!(a, b);
        assert!(a.contains("\"t1/D\""));
    }

    #[test]
    fn emit_handler_matches_rewrite() {
        let p = prepare(&parse_program(FIG5).unwrap()).unwrap();
        let sm = crate::instrument::assign_signatures(&p).unwrap();
        let h = emit_handler(&p, &sm, &build_dgmp(&p), ShadowPolicy::Globals);
        assert_eq!(h, instrument_crmp(&p, &sm, ShadowPolicy::Globals).program.handler);
    }
}
