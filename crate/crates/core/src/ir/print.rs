use std::fmt::Write;

use super::{BasicBlock, Cond, Instr, Program, Terminator};

fn write_terminator(out: &mut String, t: &Terminator) {
    match t {
        Terminator::Jmp(l) => write!(out, "jmp {l}"),
        Terminator::Br {
            cond,
            reg,
            on_true,
            on_false,
        } => {
            let c = match cond {
                Cond::Eqz => "eqz",
                Cond::Nez => "nez",
            };
            write!(out, "br {c} {reg}, {on_true}, {on_false}")
        }
        Terminator::Ijmp(r) => write!(out, "ijmp {r}"),
        Terminator::Halt => write!(out, "halt"),
        Terminator::Trap => write!(out, "trap"),
    }
    .unwrap();
}

pub(crate) fn write_instr(out: &mut String, i: &Instr) {
    match i {
        Instr::Set { dst, imm } => write!(out, "set {dst}, {imm}"),
        Instr::Mov { dst, src } => write!(out, "mov {dst}, {src}"),
        Instr::Bin { op, dst, a, b } => write!(out, "{} {dst}, {a}, {b}", op.mnemonic()),
        Instr::Ld { dst, var } => write!(out, "ld {dst}, {var}"),
        Instr::St { var, src } => write!(out, "st {var}, {src}"),
        Instr::Lda { dst, arr, idx } => write!(out, "lda {dst}, {arr}, {idx}"),
        Instr::Sta { arr, idx, src } => write!(out, "sta {arr}, {idx}, {src}"),
        Instr::Spawn(t) => write!(out, "spawn {t}"),
        Instr::Join(t) => write!(out, "join {t}"),
        Instr::Lock(m) => write!(out, "lock {m}"),
        Instr::Unlock(m) => write!(out, "unlock {m}"),
        Instr::Out(r) => write!(out, "out {r}"),
        Instr::SigXor { var, imm } => write!(out, "sigxor {var}, {imm}"),
        Instr::SigSet { var, imm } => write!(out, "sigset {var}, {imm}"),
        Instr::GCopy { dst, src } => write!(out, "gcopy {dst}, {src}"),
        Instr::ACopy { dst, src } => write!(out, "acopy {dst}, {src}"),
        Instr::GXor { dst, src } => write!(out, "gxor {dst}, {src}"),
        Instr::Chk { var, imm, fail } => write!(out, "chk {var}, {imm}, {fail}"),
        Instr::Release(m) => write!(out, "release {m}"),
        Instr::RegSnap(t) => write!(out, "regsnap {t}"),
        Instr::RegRestore(t) => write!(out, "regrestore {t}"),
        Instr::Control(t) => {
            write_terminator(out, t);
            Ok(())
        }
    }
    .unwrap();
}

fn write_block(out: &mut String, b: &BasicBlock) {
    let crit = if b.is_critical_section { " critical" } else { "" };
    writeln!(out, "  block {}{crit} {{", b.label).unwrap();
    for i in &b.body {
        out.push_str("    ");
        write_instr(out, i);
        out.push('\n');
    }
    out.push_str("    ");
    write_terminator(out, &b.terminator);
    out.push_str("\n  }\n");
}

/// Render a program in the line-oriented text grammar accepted by
/// [`super::parse_program`]. Output depends only on the program value.
pub fn serialize(p: &Program) -> String {
    let mut out = String::new();
    writeln!(out, "program {}", p.name).unwrap();
    for (name, v) in &p.shared_vars {
        writeln!(out, "shared {name} = {v}").unwrap();
    }
    for a in &p.shared_arrays {
        write!(out, "array {}[{}]", a.name, a.len).unwrap();
        if a.init.iter().any(|v| *v != 0) {
            out.push_str(" = [");
            for (i, v) in a.init.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write!(out, "{v}").unwrap();
            }
            out.push(']');
        }
        out.push('\n');
    }
    for m in &p.mutexes {
        writeln!(out, "mutex {m}").unwrap();
    }
    for t in &p.threads {
        writeln!(out, "thread {} {{", t.tid).unwrap();
        for b in &t.blocks {
            write_block(&mut out, b);
        }
        out.push_str("}\n");
    }
    if !p.handler.is_empty() {
        out.push_str("handler {\n");
        for b in &p.handler {
            write_block(&mut out, b);
        }
        out.push_str("}\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse_program;
    use super::*;

    const SRC: &str = "program p
shared g = 4
array a[3] = [1, 2, 3]
array z[2]
mutex m
thread 0 {
  block B0 {
    spawn 1
    jmp B1
  }
  block B1 {
    join 1
    ld r1, g
    out r1
    halt
  }
}
thread 1 {
  block C0 critical {
    lock m
    set r2, 0
    lda r3, a, r2
    sta z, r2, r3
    st g, r3
    unlock m
    halt
  }
}
";

    #[test]
    fn round_trip_minimal() {
        let p = parse_program("program p\nthread 0 {\n block B0 {\n  out r0\n  halt\n }\n}\n").unwrap();
        assert_eq!(parse_program(&serialize(&p)).unwrap(), p);
    }

    #[test]
    fn canonical_text_is_a_fixed_point() {
        let p = parse_program(SRC).unwrap();
        assert_eq!(serialize(&p), SRC);
        assert_eq!(serialize(&p), serialize(&p));
    }
}
