use std::fmt;

use serde::Serialize;

use super::{Instr, Program, Terminator, RESERVED_PREFIX, SCRATCH_REGS};

/// A validation finding tied to a block.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Diagnostic {
    /// `t<tid>` or `h` for the handler region.
    pub region: String,
    pub block: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}: {}", self.region, self.block, self.message)
    }
}

fn regions(p: &Program) -> impl Iterator<Item = (String, &[super::BasicBlock])> {
    p.threads
        .iter()
        .map(|t| (format!("t{}", t.tid), t.blocks.as_slice()))
        .chain(std::iter::once(("h".to_string(), p.handler.as_slice())))
}

/// Check the basic-block property: control leaves a block only through its
/// terminator, and every branch names the first instruction of a block.
///
/// Diagnostics come back sorted, so the result does not depend on block order.
pub fn validate_basic_block_form(p: &Program) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for (region, blocks) in regions(p) {
        let is_handler = region == "h";
        for b in blocks {
            let mut push = |message: String| {
                diags.push(Diagnostic {
                    region: region.clone(),
                    block: b.label.clone(),
                    message,
                })
            };
            for (i, instr) in b.body.iter().enumerate() {
                if let Instr::Control(_) = instr {
                    push(format!("control transfer inside body at instruction {i}"));
                }
            }
            for target in b.terminator.targets() {
                let local = blocks.iter().any(|x| x.label == target);
                let in_handler = p.handler.iter().any(|x| x.label == target);
                if !(local || (!is_handler && in_handler)) {
                    push(format!("branch target `{target}` is not a block start"));
                }
            }
            for instr in &b.body {
                if let Instr::Chk { fail, .. } = instr {
                    if !p.handler.iter().any(|x| x.label == *fail) {
                        push(format!("check diverts to `{fail}` outside the handler region"));
                    }
                }
            }
        }
    }
    diags.sort();
    diags
}

/// Rules that apply to programs written by users (before instrumentation):
/// no indirect jumps, traps, instrumentation opcodes, reserved names or
/// scratch registers.
pub fn validate_user_program(p: &Program) -> Vec<Diagnostic> {
    let mut diags = validate_basic_block_form(p);
    let mut push = |region: &str, block: &str, message: String| {
        diags.push(Diagnostic {
            region: region.to_string(),
            block: block.to_string(),
            message,
        })
    };
    let reserved = |n: &str| n.starts_with(RESERVED_PREFIX);
    for (n, _) in &p.shared_vars {
        if reserved(n) {
            push("-", "-", format!("variable `{n}` uses the reserved prefix"));
        }
    }
    for a in &p.shared_arrays {
        if reserved(&a.name) {
            push("-", "-", format!("array `{}` uses the reserved prefix", a.name));
        }
    }
    for m in &p.mutexes {
        if reserved(m) {
            push("-", "-", format!("mutex `{m}` uses the reserved prefix"));
        }
    }
    if !p.handler.is_empty() {
        push("h", "-", "user programs may not declare a handler region".into());
    }
    for t in &p.threads {
        let region = format!("t{}", t.tid);
        for b in &t.blocks {
            if reserved(&b.label) {
                push(&region, &b.label, "block label uses the reserved prefix".into());
            }
            if b.is_critical_section {
                push(&region, &b.label, "`critical` is set by the instrumenter only".into());
            }
            match b.terminator {
                Terminator::Ijmp(_) => push(&region, &b.label, "`ijmp` is reserved for the recovery handler".into()),
                Terminator::Trap => push(&region, &b.label, "`trap` is reserved for the recovery handler".into()),
                _ => {}
            }
            for i in &b.body {
                if i.is_instrumentation() {
                    let mut s = String::new();
                    super::print::write_instr(&mut s, i);
                    push(&region, &b.label, format!("instrumentation opcode `{s}` in user code"));
                }
                if i.registers().iter().any(|r| SCRATCH_REGS.contains(r)) {
                    push(&region, &b.label, "registers r30 and r31 are reserved".into());
                }
            }
            if let Terminator::Br { reg, .. } = &b.terminator {
                if SCRATCH_REGS.contains(reg) {
                    push(&region, &b.label, "registers r30 and r31 are reserved".into());
                }
            }
        }
    }
    diags.sort();
    diags.dedup();
    diags
}

#[cfg(test)]
mod tests {
    use super::super::parse_program;
    use super::*;

    const DIAMOND: &str = "program d
shared g = 0
thread 0 {
  block B0 {
    ld r1, g
    br nez r1, B1, B2
  }
  block B1 {
    set r2, 1
    jmp B3
  }
  block B2 {
    set r2, 2
    jmp B3
  }
  block B3 {
    out r2
    halt
  }
}
";

    #[test]
    fn diamond_is_well_formed() {
        let p = parse_program(DIAMOND).unwrap();
        assert!(validate_basic_block_form(&p).is_empty());
        assert!(validate_user_program(&p).is_empty());
    }

    #[test]
    fn jump_in_body_is_reported() {
        let src = "program p\nthread 0 {\n block A {\n  jmp B\n  halt\n }\n block B {\n  halt\n }\n}\n";
        let d = validate_basic_block_form(&parse_program(src).unwrap());
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("control transfer inside body"));
    }

    #[test]
    fn validation_is_order_independent_and_idempotent() {
        let src = "program p\nthread 0 {\n block A {\n  jmp B\n  halt\n }\n block B {\n  jmp A\n  jmp A\n }\n}\n";
        let p = parse_program(src).unwrap();
        let mut q = p.clone();
        q.threads[0].blocks.reverse();
        assert_eq!(validate_basic_block_form(&p), validate_basic_block_form(&q));
        assert_eq!(validate_basic_block_form(&p), validate_basic_block_form(&p));
    }

    #[test]
    fn user_rules() {
        let src = "program p\nshared __x = 0\nthread 0 {\n block A {\n  set r31, 1\n  set r1, 2\n  ijmp r1\n }\n}\n";
        let d = validate_user_program(&parse_program(src).unwrap());
        let msgs: Vec<_> = d.iter().map(|d| d.message.as_str()).collect();
        assert!(msgs.iter().any(|m| m.contains("reserved prefix")));
        assert!(msgs.iter().any(|m| m.contains("ijmp")));
        assert!(msgs.iter().any(|m| m.contains("r30 and r31")));
    }
}
