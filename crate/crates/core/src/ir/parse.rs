use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::{ArrayDecl, BasicBlock, BinOp, Cond, Instr, Program, Reg, Terminator, ThreadDef, NUM_REGS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}: duplicate {kind} `{name}`")]
    Duplicate {
        line: usize,
        kind: &'static str,
        name: String,
    },
    #[error("{line}: undefined {kind} `{name}`")]
    Undefined {
        line: usize,
        kind: &'static str,
        name: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Punct(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    col: usize,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn tokenize(line: &str, lineno: usize) -> Result<Vec<Token>, ParseError> {
    let line = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    };
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if is_ident_start(c) {
            let start = i;
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                col,
            });
        } else if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            i += 1;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            let v = text.parse::<i64>().map_err(|_| ParseError::Syntax {
                line: lineno,
                col,
                msg: format!("integer out of range `{text}`"),
            })?;
            out.push(Token { tok: Tok::Int(v), col });
        } else if "{}[]=,".contains(c) {
            out.push(Token {
                tok: Tok::Punct(c),
                col,
            });
            i += 1;
        } else {
            return Err(ParseError::Syntax {
                line: lineno,
                col,
                msg: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

/// Cursor over the tokens of one line.
struct Line<'a> {
    toks: &'a [Token],
    pos: usize,
    lineno: usize,
    end_col: usize,
}

impl<'a> Line<'a> {
    fn err(&self, msg: impl Into<String>) -> ParseError {
        let col = self
            .toks
            .get(self.pos)
            .map(|t| t.col)
            .unwrap_or(self.end_col);
        ParseError::Syntax {
            line: self.lineno,
            col,
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn int(&mut self, what: &str) -> Result<i64, ParseError> {
        match self.peek() {
            Some(Tok::Int(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn usize(&mut self, what: &str) -> Result<usize, ParseError> {
        let v = self.int(what)?;
        usize::try_from(v).map_err(|_| {
            self.pos -= 1;
            self.err(format!("{what} must be non-negative"))
        })
    }

    fn punct(&mut self, c: char) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Punct(p)) if *p == c => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected `{c}`"))),
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if matches!(self.peek(), Some(Tok::Punct(p)) if *p == c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn reg(&mut self) -> Result<Reg, ParseError> {
        let save = self.pos;
        let name = self.ident("register")?;
        let idx = name
            .strip_prefix('r')
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|n| *n < NUM_REGS);
        match idx {
            Some(n) => Ok(Reg(n as u8)),
            None => {
                self.pos = save;
                Err(self.err(format!("expected register r0..r{}", NUM_REGS - 1)))
            }
        }
    }

    fn comma(&mut self) -> Result<(), ParseError> {
        self.punct(',')
    }

    fn done(&self) -> Result<(), ParseError> {
        if self.pos < self.toks.len() {
            Err(self.err("trailing tokens"))
        } else {
            Ok(())
        }
    }
}

enum Parsed {
    Instr(Instr),
    Term(Terminator),
}

fn parse_instr(l: &mut Line<'_>) -> Result<Parsed, ParseError> {
    let op = l.ident("mnemonic")?;
    let parsed = match op.as_str() {
        "set" => {
            let dst = l.reg()?;
            l.comma()?;
            let imm = l.int("immediate")?;
            Parsed::Instr(Instr::Set { dst, imm })
        }
        "mov" => {
            let dst = l.reg()?;
            l.comma()?;
            let src = l.reg()?;
            Parsed::Instr(Instr::Mov { dst, src })
        }
        "add" | "sub" | "mul" | "div" | "xor" | "cmp_lt" | "cmp_eq" => {
            let binop = match op.as_str() {
                "add" => BinOp::Add,
                "sub" => BinOp::Sub,
                "mul" => BinOp::Mul,
                "div" => BinOp::Div,
                "xor" => BinOp::Xor,
                "cmp_lt" => BinOp::CmpLt,
                _ => BinOp::CmpEq,
            };
            let dst = l.reg()?;
            l.comma()?;
            let a = l.reg()?;
            l.comma()?;
            let b = l.reg()?;
            Parsed::Instr(Instr::Bin { op: binop, dst, a, b })
        }
        "ld" => {
            let dst = l.reg()?;
            l.comma()?;
            let var = l.ident("variable")?;
            Parsed::Instr(Instr::Ld { dst, var })
        }
        "st" => {
            let var = l.ident("variable")?;
            l.comma()?;
            let src = l.reg()?;
            Parsed::Instr(Instr::St { var, src })
        }
        "lda" => {
            let dst = l.reg()?;
            l.comma()?;
            let arr = l.ident("array")?;
            l.comma()?;
            let idx = l.reg()?;
            Parsed::Instr(Instr::Lda { dst, arr, idx })
        }
        "sta" => {
            let arr = l.ident("array")?;
            l.comma()?;
            let idx = l.reg()?;
            l.comma()?;
            let src = l.reg()?;
            Parsed::Instr(Instr::Sta { arr, idx, src })
        }
        "spawn" => Parsed::Instr(Instr::Spawn(l.usize("thread id")?)),
        "join" => Parsed::Instr(Instr::Join(l.usize("thread id")?)),
        "lock" => Parsed::Instr(Instr::Lock(l.ident("mutex")?)),
        "unlock" => Parsed::Instr(Instr::Unlock(l.ident("mutex")?)),
        "out" => Parsed::Instr(Instr::Out(l.reg()?)),
        "sigxor" | "sigset" => {
            let var = l.ident("variable")?;
            l.comma()?;
            let imm = l.int("immediate")?;
            if op == "sigxor" {
                Parsed::Instr(Instr::SigXor { var, imm })
            } else {
                Parsed::Instr(Instr::SigSet { var, imm })
            }
        }
        "gcopy" | "acopy" | "gxor" => {
            let dst = l.ident("destination")?;
            l.comma()?;
            let src = l.ident("source")?;
            if op == "gcopy" {
                Parsed::Instr(Instr::GCopy { dst, src })
            } else if op == "gxor" {
                Parsed::Instr(Instr::GXor { dst, src })
            } else {
                Parsed::Instr(Instr::ACopy { dst, src })
            }
        }
        "chk" => {
            let var = l.ident("variable")?;
            l.comma()?;
            let imm = l.int("immediate")?;
            l.comma()?;
            let fail = l.ident("label")?;
            Parsed::Instr(Instr::Chk { var, imm, fail })
        }
        "release" => Parsed::Instr(Instr::Release(l.ident("mutex")?)),
        "regsnap" => Parsed::Instr(Instr::RegSnap(l.usize("thread id")?)),
        "regrestore" => Parsed::Instr(Instr::RegRestore(l.usize("thread id")?)),
        "jmp" => Parsed::Term(Terminator::Jmp(l.ident("label")?)),
        "br" => {
            let cond = match l.ident("condition")?.as_str() {
                "eqz" => Cond::Eqz,
                "nez" => Cond::Nez,
                _ => {
                    l.pos -= 1;
                    return Err(l.err("expected `eqz` or `nez`"));
                }
            };
            let reg = l.reg()?;
            l.comma()?;
            let on_true = l.ident("label")?;
            l.comma()?;
            let on_false = l.ident("label")?;
            Parsed::Term(Terminator::Br {
                cond,
                reg,
                on_true,
                on_false,
            })
        }
        "ijmp" => Parsed::Term(Terminator::Ijmp(l.reg()?)),
        "halt" => Parsed::Term(Terminator::Halt),
        "trap" => Parsed::Term(Terminator::Trap),
        _ => {
            l.pos -= 1;
            return Err(l.err(format!("unknown mnemonic `{op}`")));
        }
    };
    l.done()?;
    Ok(parsed)
}

enum Scope {
    Top,
    Thread(ThreadDef),
    Handler(Vec<BasicBlock>),
}

struct OpenBlock {
    label: String,
    critical: bool,
    items: Vec<(usize, Parsed)>,
    line: usize,
    end_col: usize,
}

/// Parse IR source text into a [`Program`].
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut program: Option<Program> = None;
    let mut scope = Scope::Top;
    let mut open: Option<OpenBlock> = None;
    let mut threads: BTreeMap<usize, (usize, ThreadDef)> = BTreeMap::new();
    let mut handler_seen = false;
    // (line, kind, name) for reference checks after the whole file is read.
    let mut block_lines: BTreeMap<(Option<usize>, String), usize> = BTreeMap::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let toks = tokenize(raw, lineno)?;
        if toks.is_empty() {
            continue;
        }
        let mut l = Line {
            toks: &toks,
            pos: 0,
            lineno,
            end_col: raw.len() + 1,
        };

        if let Some(block) = open.as_mut() {
            if l.eat_punct('}') {
                l.done()?;
                let block = open.take().unwrap();
                let bb = close_block(block)?;
                let key = (
                    match &scope {
                        Scope::Thread(t) => Some(t.tid),
                        _ => None,
                    },
                    bb.label.clone(),
                );
                block_lines.insert(key, lineno);
                match &mut scope {
                    Scope::Thread(t) => t.blocks.push(bb),
                    Scope::Handler(h) => h.push(bb),
                    Scope::Top => unreachable!(),
                }
            } else {
                let parsed = parse_instr(&mut l)?;
                block.items.push((lineno, parsed));
                block.end_col = raw.len() + 1;
            }
            continue;
        }

        match &mut scope {
            Scope::Top => {
                let kw = l.ident("declaration")?;
                if kw != "program" && program.is_none() {
                    l.pos = 0;
                    return Err(l.err("expected `program <name>` first"));
                }
                match kw.as_str() {
                    "program" => {
                        if program.is_some() {
                            l.pos = 0;
                            return Err(l.err("duplicate `program` header"));
                        }
                        let name = l.ident("program name")?;
                        l.done()?;
                        program = Some(Program::new(name));
                    }
                    "shared" => {
                        let name = l.ident("variable name")?;
                        l.punct('=')?;
                        let v = l.int("initial value")?;
                        l.done()?;
                        let p = program.as_mut().unwrap();
                        if p.is_global(&name) {
                            return Err(ParseError::Duplicate {
                                line: lineno,
                                kind: "variable",
                                name,
                            });
                        }
                        p.shared_vars.push((name, v));
                    }
                    "array" => {
                        let name = l.ident("array name")?;
                        l.punct('[')?;
                        let len = l.usize("array length")?;
                        l.punct(']')?;
                        let mut init = vec![0; len];
                        if l.eat_punct('=') {
                            l.punct('[')?;
                            let mut vals = Vec::new();
                            if !l.eat_punct(']') {
                                loop {
                                    vals.push(l.int("array element")?);
                                    if l.eat_punct(']') {
                                        break;
                                    }
                                    l.comma()?;
                                }
                            }
                            if vals.len() != len {
                                return Err(l.err(format!(
                                    "array `{name}` has length {len} but {} initializers",
                                    vals.len()
                                )));
                            }
                            init = vals;
                        }
                        l.done()?;
                        let p = program.as_mut().unwrap();
                        if p.is_global(&name) {
                            return Err(ParseError::Duplicate {
                                line: lineno,
                                kind: "variable",
                                name,
                            });
                        }
                        p.shared_arrays.push(ArrayDecl { name, len, init });
                    }
                    "mutex" => {
                        let name = l.ident("mutex name")?;
                        l.done()?;
                        let p = program.as_mut().unwrap();
                        if p.mutexes.contains(&name) {
                            return Err(ParseError::Duplicate {
                                line: lineno,
                                kind: "mutex",
                                name,
                            });
                        }
                        p.mutexes.push(name);
                    }
                    "thread" => {
                        let tid = l.usize("thread id")?;
                        l.punct('{')?;
                        l.done()?;
                        if threads.contains_key(&tid) {
                            return Err(ParseError::Duplicate {
                                line: lineno,
                                kind: "thread",
                                name: tid.to_string(),
                            });
                        }
                        scope = Scope::Thread(ThreadDef {
                            tid,
                            blocks: Vec::new(),
                            entry: String::new(),
                        });
                        threads.insert(tid, (lineno, ThreadDef { tid, blocks: Vec::new(), entry: String::new() }));
                    }
                    "handler" => {
                        l.punct('{')?;
                        l.done()?;
                        if handler_seen {
                            return Err(ParseError::Duplicate {
                                line: lineno,
                                kind: "section",
                                name: "handler".into(),
                            });
                        }
                        handler_seen = true;
                        scope = Scope::Handler(Vec::new());
                    }
                    _ => {
                        l.pos = 0;
                        return Err(l.err(format!("unknown declaration `{kw}`")));
                    }
                }
            }
            Scope::Thread(_) | Scope::Handler(_) => {
                if l.eat_punct('}') {
                    l.done()?;
                    match std::mem::replace(&mut scope, Scope::Top) {
                        Scope::Thread(mut t) => {
                            if t.blocks.is_empty() {
                                return Err(ParseError::Syntax {
                                    line: lineno,
                                    col: 1,
                                    msg: format!("thread {} has no blocks", t.tid),
                                });
                            }
                            t.entry = t.blocks[0].label.clone();
                            let line = threads[&t.tid].0;
                            threads.insert(t.tid, (line, t));
                        }
                        Scope::Handler(h) => program.as_mut().unwrap().handler = h,
                        Scope::Top => unreachable!(),
                    }
                    continue;
                }
                let kw = l.ident("`block`")?;
                if kw != "block" {
                    l.pos = 0;
                    return Err(l.err("expected `block <label> {`"));
                }
                let label = l.ident("block label")?;
                let critical = matches!(l.peek(), Some(Tok::Ident(s)) if s == "critical");
                if critical {
                    l.pos += 1;
                }
                l.punct('{')?;
                l.done()?;
                let existing: &[BasicBlock] = match &scope {
                    Scope::Thread(t) => &t.blocks,
                    Scope::Handler(h) => h,
                    Scope::Top => unreachable!(),
                };
                if existing.iter().any(|b| b.label == label) {
                    return Err(ParseError::Duplicate {
                        line: lineno,
                        kind: "block label",
                        name: label,
                    });
                }
                open = Some(OpenBlock {
                    label,
                    critical,
                    items: Vec::new(),
                    line: lineno,
                    end_col: raw.len() + 1,
                });
            }
        }
    }

    if open.is_some() || !matches!(scope, Scope::Top) {
        return Err(ParseError::Syntax {
            line: last_line.max(1),
            col: 1,
            msg: "unexpected end of input (missing `}`)".into(),
        });
    }
    let mut program = program.ok_or(ParseError::Syntax {
        line: 1,
        col: 1,
        msg: "empty program".into(),
    })?;

    for (expected, (&tid, (line, _))) in threads.iter().enumerate() {
        if tid != expected {
            return Err(ParseError::Syntax {
                line: *line,
                col: 1,
                msg: format!("thread ids must be dense from 0; found {tid}, expected {expected}"),
            });
        }
    }
    if threads.is_empty() {
        return Err(ParseError::Syntax {
            line: last_line.max(1),
            col: 1,
            msg: "program has no thread 0".into(),
        });
    }
    program.threads = threads.into_values().map(|(_, t)| t).collect();
    check_references(&program, &block_lines)?;
    Ok(program)
}

fn close_block(block: OpenBlock) -> Result<BasicBlock, ParseError> {
    let OpenBlock {
        label,
        critical,
        mut items,
        line,
        end_col,
    } = block;
    let terminator = match items.pop() {
        Some((_, Parsed::Term(t))) => t,
        Some((l, Parsed::Instr(_))) => {
            return Err(ParseError::Syntax {
                line: l,
                col: end_col,
                msg: format!("block `{label}` must end with a terminator"),
            })
        }
        None => {
            return Err(ParseError::Syntax {
                line,
                col: 1,
                msg: format!("block `{label}` is empty"),
            })
        }
    };
    let body = items
        .into_iter()
        .map(|(_, p)| match p {
            Parsed::Instr(i) => i,
            Parsed::Term(t) => Instr::Control(t),
        })
        .collect();
    Ok(BasicBlock {
        label,
        body,
        terminator,
        is_critical_section: critical,
    })
}

fn check_references(
    p: &Program,
    block_lines: &BTreeMap<(Option<usize>, String), usize>,
) -> Result<(), ParseError> {
    let handler_labels: BTreeSet<&str> = p.handler.iter().map(|b| b.label.as_str()).collect();
    let regions = p
        .threads
        .iter()
        .map(|t| (Some(t.tid), &t.blocks))
        .chain(std::iter::once((None, &p.handler)));
    for (tid, blocks) in regions {
        let local: BTreeSet<&str> = blocks.iter().map(|b| b.label.as_str()).collect();
        for b in blocks.iter() {
            let line = block_lines
                .get(&(tid, b.label.clone()))
                .copied()
                .unwrap_or(0);
            let label_ok = |l: &str| local.contains(l) || handler_labels.contains(l);
            let undefined = |kind, name: &str| ParseError::Undefined {
                line,
                kind,
                name: name.to_string(),
            };
            let mut terms: Vec<&Terminator> = vec![&b.terminator];
            for i in &b.body {
                match i {
                    Instr::Ld { var, .. } | Instr::St { var, .. } | Instr::SigXor { var, .. } | Instr::SigSet { var, .. } => {
                        if !p.is_scalar(var) {
                            return Err(undefined("variable", var));
                        }
                    }
                    Instr::Chk { var, fail, .. } => {
                        if !p.is_scalar(var) {
                            return Err(undefined("variable", var));
                        }
                        if !handler_labels.contains(fail.as_str()) {
                            return Err(undefined("label", fail));
                        }
                    }
                    Instr::GCopy { dst, src } | Instr::GXor { dst, src } => {
                        for v in [dst, src] {
                            if !p.is_scalar(v) {
                                return Err(undefined("variable", v));
                            }
                        }
                    }
                    Instr::Lda { arr, .. } | Instr::Sta { arr, .. } => {
                        if p.array(arr).is_none() {
                            return Err(undefined("array", arr));
                        }
                    }
                    Instr::ACopy { dst, src } => {
                        for v in [dst, src] {
                            if p.array(v).is_none() {
                                return Err(undefined("array", v));
                            }
                        }
                        if p.array(dst).map(|a| a.len) != p.array(src).map(|a| a.len) {
                            return Err(ParseError::Syntax {
                                line,
                                col: 1,
                                msg: format!("acopy between arrays of different length `{dst}`, `{src}`"),
                            });
                        }
                    }
                    Instr::Lock(m) | Instr::Unlock(m) | Instr::Release(m) => {
                        if !p.mutexes.contains(m) {
                            return Err(undefined("mutex", m));
                        }
                    }
                    Instr::Spawn(t) | Instr::Join(t) | Instr::RegSnap(t) | Instr::RegRestore(t) => {
                        if *t >= p.threads.len() {
                            return Err(undefined("thread", &t.to_string()));
                        }
                    }
                    Instr::Control(t) => terms.push(t),
                    _ => {}
                }
            }
            for t in terms {
                for target in t.targets() {
                    if !label_ok(target) {
                        return Err(undefined("label", target));
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let p = parse_program("program p\nthread 0 {\n  block B0 {\n    out r0\n    halt\n  }\n}\n").unwrap();
        assert_eq!(p.threads.len(), 1);
        assert_eq!(p.threads[0].blocks.len(), 1);
        assert_eq!(p.threads[0].entry, "B0");
    }

    #[test]
    fn undefined_label() {
        let err = parse_program("program p\nthread 0 {\n block B0 {\n  jmp B9\n }\n}\n").unwrap_err();
        assert!(matches!(err, ParseError::Undefined { kind: "label", ref name, .. } if name == "B9"), "{err}");
    }

    #[test]
    fn undefined_variable_and_mutex() {
        let e = parse_program("program p\nthread 0 {\n block B0 {\n  ld r1, g\n  halt\n }\n}\n").unwrap_err();
        assert!(matches!(e, ParseError::Undefined { kind: "variable", .. }));
        let e = parse_program("program p\nthread 0 {\n block B0 {\n  lock m\n  halt\n }\n}\n").unwrap_err();
        assert!(matches!(e, ParseError::Undefined { kind: "mutex", .. }));
    }

    #[test]
    fn duplicate_names() {
        let e = parse_program("program p\nshared g = 1\narray g[2]\nthread 0 {\n block B0 {\n  halt\n }\n}\n").unwrap_err();
        assert!(matches!(e, ParseError::Duplicate { line: 3, .. }), "{e}");
        let e = parse_program("program p\nthread 0 {\n block A {\n  halt\n }\n block A {\n  halt\n }\n}\n").unwrap_err();
        assert!(matches!(e, ParseError::Duplicate { kind: "block label", .. }));
    }

    #[test]
    fn syntax_error_has_position() {
        let e = parse_program("program p\nthread 0 {\n block B0 {\n  add r1, r2\n  halt\n }\n}\n").unwrap_err();
        match e {
            ParseError::Syntax { line, col, .. } => {
                assert_eq!(line, 4);
                assert_eq!(col, 13);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn block_must_end_with_terminator() {
        let e = parse_program("program p\nthread 0 {\n block B0 {\n  set r1, 1\n }\n}\n").unwrap_err();
        assert!(matches!(e, ParseError::Syntax { .. }));
    }

    #[test]
    fn sparse_thread_ids_rejected() {
        let e = parse_program("program p\nthread 1 {\n block B0 {\n  halt\n }\n}\n").unwrap_err();
        assert!(e.to_string().contains("dense"));
    }

    #[test]
    fn array_initializer_and_comments() {
        let src = "# demo\nprogram p\narray a[3] = [1, -2, 3]  # init\nthread 0 {\n block B0 {\n  halt\n }\n}\n";
        let p = parse_program(src).unwrap();
        assert_eq!(p.shared_arrays[0].init, vec![1, -2, 3]);
        let e = parse_program("program p\narray a[3] = [1]\nthread 0 {\n block B0 {\n  halt\n }\n}\n").unwrap_err();
        assert!(matches!(e, ParseError::Syntax { line: 2, .. }));
    }

    #[test]
    fn control_in_body_is_kept_for_validation() {
        let src = "program p\nthread 0 {\n block A {\n  jmp B\n  halt\n }\n block B {\n  halt\n }\n}\n";
        let p = parse_program(src).unwrap();
        assert!(matches!(p.threads[0].blocks[0].body[0], Instr::Control(_)));
    }
}
