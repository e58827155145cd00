use std::collections::BTreeSet;

use crate::ir::{BasicBlock, Diagnostic, Instr, Program, Terminator, ThreadDef};

fn diag(tid: usize, block: &str, message: String) -> Diagnostic {
    Diagnostic {
        region: format!("t{tid}"),
        block: block.to_string(),
        message,
    }
}

/// Mutexes still held at the end of the block. Unlocks of mutexes not locked
/// in the block are ignored here.
fn open_locks(b: &BasicBlock) -> Vec<&str> {
    let mut held: Vec<&str> = Vec::new();
    for i in &b.body {
        match i {
            Instr::Lock(m) => held.push(m),
            Instr::Unlock(m) => {
                if let Some(k) = held.iter().position(|h| h == m) {
                    held.remove(k);
                }
            }
            _ => {}
        }
    }
    held
}

fn predecessor_count(t: &ThreadDef, label: &str) -> usize {
    t.blocks
        .iter()
        .filter(|b| b.terminator.targets().contains(&label))
        .count()
}

fn merge_regions(t: &mut ThreadDef) {
    loop {
        let candidate = t.blocks.iter().enumerate().find_map(|(i, b)| {
            if open_locks(b).is_empty() {
                return None;
            }
            match &b.terminator {
                Terminator::Jmp(c) if *c != b.label && *c != t.entry && predecessor_count(t, c) == 1 => {
                    Some((i, t.block_index(c)?))
                }
                _ => None,
            }
        });
        let Some((i, c)) = candidate else { return };
        let next = t.blocks.remove(c);
        let i = if c < i { i - 1 } else { i };
        let b = &mut t.blocks[i];
        b.body.extend(next.body);
        b.terminator = next.terminator;
    }
}

fn check_regions(t: &ThreadDef, diags: &mut Vec<Diagnostic>) {
    for b in &t.blocks {
        let mut held: Vec<&str> = Vec::new();
        for i in &b.body {
            match i {
                Instr::Lock(m) => {
                    if held.contains(&m.as_str()) {
                        diags.push(diag(t.tid, &b.label, format!("nested lock of `{m}`")));
                    }
                    held.push(m);
                }
                Instr::Unlock(m) => match held.iter().position(|h| h == m) {
                    Some(k) => {
                        held.remove(k);
                    }
                    None => diags.push(diag(t.tid, &b.label, format!("unlock of `{m}` without a matching lock"))),
                },
                Instr::Out(_) | Instr::Spawn(_) if !held.is_empty() => {
                    diags.push(diag(t.tid, &b.label, "output or spawn inside a critical region".into()));
                }
                _ => {}
            }
        }
        for m in held {
            diags.push(diag(
                t.tid,
                &b.label,
                format!("lock of `{m}` is not released before control leaves the region"),
            ));
        }
    }
}

/// Turn every `lock m .. unlock m` region into a single block flagged as a
/// critical section. A region that continues through `jmp C` is merged with C
/// when the jump is C's only way in.
pub fn normalize_critical_sections(p: &Program) -> Result<Program, Vec<Diagnostic>> {
    let mut out = p.clone();
    let mut diags = Vec::new();
    for t in &mut out.threads {
        merge_regions(t);
        check_regions(t, &mut diags);
        for b in &mut t.blocks {
            b.is_critical_section = b.body.iter().any(|i| matches!(i, Instr::Lock(_)));
        }
    }
    if diags.is_empty() {
        Ok(out)
    } else {
        diags.sort();
        Err(diags)
    }
}

/// Split blocks so that every `out`, `spawn` or outermost `unlock` is the last
/// body instruction of its block. New blocks are labelled `<label>.<n>` and
/// placed right after the block they came from.
pub fn split_release_points(p: &Program) -> Program {
    let mut out = p.clone();
    for t in &mut out.threads {
        let mut taken: BTreeSet<String> = t.blocks.iter().map(|b| b.label.clone()).collect();
        let mut blocks = Vec::with_capacity(t.blocks.len());
        for b in std::mem::take(&mut t.blocks) {
            let mut cur = BasicBlock::new(b.label.clone(), Vec::new(), Terminator::Halt);
            let mut depth = 0usize;
            let mut n = 0;
            let last = b.body.len().saturating_sub(1);
            for (k, i) in b.body.into_iter().enumerate() {
                match i {
                    Instr::Lock(_) => depth += 1,
                    Instr::Unlock(_) => depth = depth.saturating_sub(1),
                    _ => {}
                }
                let split = i.is_release() && depth == 0 && k < last;
                cur.body.push(i);
                if split {
                    let label = loop {
                        n += 1;
                        let l = format!("{}.{n}", b.label);
                        if !taken.contains(&l) {
                            break l;
                        }
                    };
                    taken.insert(label.clone());
                    cur.terminator = Terminator::Jmp(label.clone());
                    let done = std::mem::replace(&mut cur, BasicBlock::new(label, Vec::new(), Terminator::Halt));
                    blocks.push(done);
                }
            }
            cur.terminator = b.terminator;
            blocks.push(cur);
        }
        for b in &mut blocks {
            b.is_critical_section = b.body.iter().any(|i| matches!(i, Instr::Lock(_)));
        }
        t.blocks = blocks;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_program, serialize, validate_basic_block_form};

    #[test]
    fn split_region_is_merged() {
        let src = "program p
shared g = 0
mutex m
thread 0 {
  block B0 {
    lock m
    set r1, 1
    jmp B1
  }
  block B1 {
    st g, r1
    unlock m
    halt
  }
}
";
        let q = normalize_critical_sections(&parse_program(src).unwrap()).unwrap();
        assert_eq!(q.threads[0].blocks.len(), 1);
        let b = &q.threads[0].blocks[0];
        assert!(b.is_critical_section);
        assert_eq!(b.body.len(), 4);
        assert_eq!(b.terminator, Terminator::Halt);
        assert!(validate_basic_block_form(&q).is_empty());
    }

    #[test]
    fn lock_free_program_unchanged() {
        let src = "program p\nthread 0 {\n block A {\n  out r1\n  out r2\n  jmp B\n }\n block B {\n  halt\n }\n}\n";
        let p = parse_program(src).unwrap();
        assert_eq!(normalize_critical_sections(&p).unwrap(), p);
    }

    #[test]
    fn unmatched_lock_rejected() {
        let src = "program p\nmutex m\nthread 0 {\n block A {\n  lock m\n  halt\n }\n}\n";
        let err = normalize_critical_sections(&parse_program(src).unwrap()).unwrap_err();
        assert!(err[0].message.contains("not released"));
    }

    #[test]
    fn branch_out_of_region_rejected() {
        let src = "program p\nmutex m\nthread 0 {\n block A {\n  lock m\n  br nez r1, B, C\n }\n block B {\n  unlock m\n  halt\n }\n block C {\n  unlock m\n  halt\n }\n}\n";
        let err = normalize_critical_sections(&parse_program(src).unwrap()).unwrap_err();
        assert!(err.iter().any(|d| d.block == "A"));
        assert!(err.iter().any(|d| d.message.contains("without a matching lock")));
    }

    #[test]
    fn shared_successor_is_not_merged() {
        let src = "program p\nmutex m\nthread 0 {\n block A {\n  lock m\n  jmp C\n }\n block B {\n  jmp C\n }\n block C {\n  unlock m\n  halt\n }\n}\n";
        assert!(normalize_critical_sections(&parse_program(src).unwrap()).is_err());
    }

    #[test]
    fn releases_end_blocks() {
        let src = "program p
shared g = 0
mutex m
thread 0 {
  block A {
    out r1
    lock m
    st g, r1
    unlock m
    set r2, 1
    out r2
  }
}
";
        let src = src.replace("    out r2\n  }", "    out r2\n    halt\n  }");
        let p = normalize_critical_sections(&parse_program(&src).unwrap()).unwrap();
        let q = split_release_points(&p);
        let labels: Vec<_> = q.threads[0].blocks.iter().map(|b| b.label.as_str()).collect();
        assert_eq!(labels, vec!["A", "A.1", "A.2"]);
        assert!(q.threads[0].blocks[1].is_critical_section);
        assert!(!q.threads[0].blocks[0].is_critical_section);
        for b in &q.threads[0].blocks {
            let releases: Vec<_> = b.body.iter().enumerate().filter(|(_, i)| i.is_release()).map(|(k, _)| k).collect();
            assert!(releases.iter().all(|k| *k == b.body.len() - 1), "{}", serialize(&q));
        }
        assert_eq!(split_release_points(&q), q);
    }
}
