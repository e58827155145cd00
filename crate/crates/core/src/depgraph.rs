//! Dependency graphs.
//!
//! A [`Dgst`] describes one thread: its control-flow graph and the block-level
//! data flow over shared variables. A [`Dgmp`] combines the per-thread graphs
//! with synchronization arcs (create, join, lock, unlock ordering) and
//! communication arcs (a shared variable defined in one thread and used in
//! another).

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write;

use serde::Serialize;

use crate::ir::{BasicBlock, Instr, Program, Terminator, ThreadDef, RESERVED_PREFIX};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Cfg {
    /// Block labels in program order.
    pub nodes: Vec<String>,
    pub edges: BTreeSet<(String, String)>,
    pub entry: String,
    /// Set when some block branches back to the entry block.
    pub entry_is_loop_header: bool,
}

impl Cfg {
    pub fn successors<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .iter()
            .filter(move |(s, _)| s == label)
            .map(|(_, d)| d.as_str())
    }

    /// Predecessors ordered by the position of the source block.
    pub fn predecessors(&self, label: &str) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| self.edges.contains(&((*n).clone(), label.to_string())))
            .map(String::as_str)
            .collect()
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        self.edges.contains(&(from.to_string(), to.to_string()))
    }

    /// Blocks reachable from `from` through one or more edges.
    pub fn reachable_from(&self, from: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<&str> = self.successors(from).collect();
        while let Some(n) = queue.pop_front() {
            if seen.insert(n.to_string()) {
                queue.extend(self.successors(n));
            }
        }
        seen
    }
}

pub fn build_cfg(t: &ThreadDef) -> Cfg {
    let mut edges = BTreeSet::new();
    for b in &t.blocks {
        for target in b.terminator.targets() {
            edges.insert((b.label.clone(), target.to_string()));
        }
    }
    let entry_is_loop_header = edges.iter().any(|(_, d)| *d == t.entry);
    Cfg {
        nodes: t.blocks.iter().map(|b| b.label.clone()).collect(),
        edges,
        entry: t.entry.clone(),
        entry_is_loop_header,
    }
}

/// Shared variables (scalars and whole arrays) read and written by a block.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BlockAccess {
    pub def_globals: BTreeSet<String>,
    pub use_globals: BTreeSet<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Lifetime {
    pub birth: BTreeSet<String>,
    pub death: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Dfg {
    pub blocks: BTreeMap<String, BlockAccess>,
    pub lifetimes: BTreeMap<String, Lifetime>,
    /// `(def_block, use_block, variable)`: the use block is reachable from
    /// the defining block.
    pub data_edges: BTreeSet<(String, String, String)>,
}

/// Globals written by the original instructions of `b`. Arrays count as a
/// whole.
pub fn modified_globals(b: &BasicBlock) -> BTreeSet<String> {
    b.body
        .iter()
        .filter_map(|i| match i {
            Instr::St { var, .. } => Some(var.clone()),
            Instr::Sta { arr, .. } => Some(arr.clone()),
            _ => None,
        })
        .collect()
}

fn used_globals(b: &BasicBlock) -> BTreeSet<String> {
    b.body
        .iter()
        .filter_map(|i| match i {
            Instr::Ld { var, .. } => Some(var.clone()),
            Instr::Lda { arr, .. } => Some(arr.clone()),
            _ => None,
        })
        .collect()
}

pub fn build_dfg(t: &ThreadDef, cfg: &Cfg) -> Dfg {
    let blocks: BTreeMap<String, BlockAccess> = t
        .blocks
        .iter()
        .map(|b| {
            (
                b.label.clone(),
                BlockAccess {
                    def_globals: modified_globals(b),
                    use_globals: used_globals(b),
                },
            )
        })
        .collect();
    let reach: BTreeMap<&str, BTreeSet<String>> = cfg
        .nodes
        .iter()
        .map(|n| (n.as_str(), cfg.reachable_from(n)))
        .collect();

    let mut vars: BTreeSet<&str> = BTreeSet::new();
    for acc in blocks.values() {
        vars.extend(acc.def_globals.iter().map(String::as_str));
        vars.extend(acc.use_globals.iter().map(String::as_str));
    }

    let mut lifetimes = BTreeMap::new();
    let mut data_edges = BTreeSet::new();
    for v in vars {
        let referencing: BTreeSet<&str> = blocks
            .iter()
            .filter(|(_, a)| a.def_globals.contains(v) || a.use_globals.contains(v))
            .map(|(l, _)| l.as_str())
            .collect();
        let birth: BTreeSet<String> = blocks
            .iter()
            .filter(|(_, a)| a.def_globals.contains(v))
            .map(|(l, _)| l.clone())
            .collect();
        // A referencing block is a death point when every other referencing
        // block it can reach can also reach it back (it sits in a terminal
        // strongly connected group of references).
        let death = referencing
            .iter()
            .filter(|r| {
                referencing
                    .iter()
                    .filter(|o| *o != *r && reach[*r].contains(**o))
                    .all(|o| reach[*o].contains(**r))
            })
            .map(|r| r.to_string())
            .collect();
        for d in &birth {
            for (u, acc) in &blocks {
                if acc.use_globals.contains(v) && reach[d.as_str()].contains(u) {
                    data_edges.insert((d.clone(), u.clone(), v.to_string()));
                }
            }
        }
        lifetimes.insert(v.to_string(), Lifetime { birth, death });
    }

    Dfg {
        blocks,
        lifetimes,
        data_edges,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Dgst {
    pub tid: usize,
    pub cfg: Cfg,
    pub dfg: Dfg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncKind {
    Create,
    Join,
    Lock,
    UnlockOrder,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct BlockRef {
    pub tid: usize,
    pub block: String,
}

impl BlockRef {
    pub fn new(tid: usize, block: impl Into<String>) -> Self {
        Self {
            tid,
            block: block.into(),
        }
    }
}

impl std::fmt::Display for BlockRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "t{}/{}", self.tid, self.block)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SyncArc {
    pub from: BlockRef,
    pub to: BlockRef,
    pub kind: SyncKind,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct CommArc {
    pub def: BlockRef,
    pub usage: BlockRef,
    pub var: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Dgmp {
    pub dgsts: Vec<Dgst>,
    pub sync_arcs: BTreeSet<SyncArc>,
    pub comm_arcs: BTreeSet<CommArc>,
}

impl Dgmp {
    /// Communication arcs whose defining side is the given block.
    pub fn consumers_of<'a>(&'a self, tid: usize, block: &'a str) -> impl Iterator<Item = &'a CommArc> + 'a {
        self.comm_arcs
            .iter()
            .filter(move |a| a.def.tid == tid && a.def.block == block)
    }
}

fn blocks_with<'a>(t: &'a ThreadDef, pred: impl Fn(&Instr) -> bool + 'a) -> impl Iterator<Item = &'a BasicBlock> + 'a {
    t.blocks.iter().filter(move |b| b.body.iter().any(&pred))
}

pub fn build_dgmp(p: &Program) -> Dgmp {
    let dgsts: Vec<Dgst> = p
        .threads
        .iter()
        .map(|t| {
            let cfg = build_cfg(t);
            let dfg = build_dfg(t, &cfg);
            Dgst { tid: t.tid, cfg, dfg }
        })
        .collect();

    let mut sync_arcs = BTreeSet::new();
    for t in &p.threads {
        for b in &t.blocks {
            for i in &b.body {
                match i {
                    Instr::Spawn(child) => {
                        sync_arcs.insert(SyncArc {
                            from: BlockRef::new(t.tid, &b.label),
                            to: BlockRef::new(*child, &p.threads[*child].entry),
                            kind: SyncKind::Create,
                        });
                    }
                    Instr::Join(child) => {
                        for h in p.threads[*child]
                            .blocks
                            .iter()
                            .filter(|h| h.terminator == Terminator::Halt)
                        {
                            sync_arcs.insert(SyncArc {
                                from: BlockRef::new(*child, &h.label),
                                to: BlockRef::new(t.tid, &b.label),
                                kind: SyncKind::Join,
                            });
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    for m in &p.mutexes {
        let lockers: Vec<BlockRef> = p
            .threads
            .iter()
            .flat_map(|t| blocks_with(t, move |i| matches!(i, Instr::Lock(x) if x == m)).map(|b| BlockRef::new(t.tid, &b.label)))
            .collect();
        let unlockers: Vec<BlockRef> = p
            .threads
            .iter()
            .flat_map(|t| blocks_with(t, move |i| matches!(i, Instr::Unlock(x) if x == m)).map(|b| BlockRef::new(t.tid, &b.label)))
            .collect();
        for (i, a) in lockers.iter().enumerate() {
            for b in &lockers[i + 1..] {
                if a.tid != b.tid {
                    sync_arcs.insert(SyncArc {
                        from: a.clone(),
                        to: b.clone(),
                        kind: SyncKind::Lock,
                    });
                }
            }
        }
        for u in &unlockers {
            for l in &lockers {
                if u.tid != l.tid {
                    sync_arcs.insert(SyncArc {
                        from: u.clone(),
                        to: l.clone(),
                        kind: SyncKind::UnlockOrder,
                    });
                }
            }
        }
    }

    let mut comm_arcs = BTreeSet::new();
    for a in &dgsts {
        for (bi, acc_i) in &a.dfg.blocks {
            for v in acc_i.def_globals.iter().filter(|v| !v.starts_with(RESERVED_PREFIX)) {
                for b in dgsts.iter().filter(|b| b.tid != a.tid) {
                    for (bj, acc_j) in &b.dfg.blocks {
                        if acc_j.use_globals.contains(v) {
                            comm_arcs.insert(CommArc {
                                def: BlockRef::new(a.tid, bi),
                                usage: BlockRef::new(b.tid, bj),
                                var: v.clone(),
                            });
                        }
                    }
                }
            }
        }
    }

    Dgmp {
        dgsts,
        sync_arcs,
        comm_arcs,
    }
}

/// Deterministic DOT rendering: solid control arcs, dashed data arcs, dotted
/// bold synchronization arcs and dashed bold communication arcs.
pub fn to_dot(g: &Dgmp) -> String {
    let mut out = String::from("digraph dgmp {\n  node [shape=box];\n");
    for d in &g.dgsts {
        writeln!(out, "  subgraph cluster_t{} {{\n    label=\"thread {}\";", d.tid, d.tid).unwrap();
        for n in &d.cfg.nodes {
            writeln!(out, "    \"t{}/{}\";", d.tid, n).unwrap();
        }
        out.push_str("  }\n");
    }
    for d in &g.dgsts {
        for (s, t) in &d.cfg.edges {
            writeln!(out, "  \"t{0}/{1}\" -> \"t{0}/{2}\" [style=solid];", d.tid, s, t).unwrap();
        }
        for (s, t, v) in &d.dfg.data_edges {
            writeln!(out, "  \"t{0}/{1}\" -> \"t{0}/{2}\" [style=dashed, label=\"{3}\"];", d.tid, s, t, v).unwrap();
        }
    }
    for a in &g.sync_arcs {
        let kind = match a.kind {
            SyncKind::Create => "create",
            SyncKind::Join => "join",
            SyncKind::Lock => "lock",
            SyncKind::UnlockOrder => "unlock",
        };
        writeln!(out, "  \"{}\" -> \"{}\" [style=\"dotted,bold\", label=\"{kind}\"];", a.from, a.to).unwrap();
    }
    for a in &g.comm_arcs {
        writeln!(out, "  \"{}\" -> \"{}\" [style=\"dashed,bold\", label=\"{}\"];", a.def, a.usage, a.var).unwrap();
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    fn thread(src: &str) -> ThreadDef {
        parse_program(src).unwrap().threads.remove(0)
    }

    #[test]
    fn straight_line_cfg() {
        let t = thread("program p\nthread 0 {\n block B0 {\n  jmp B1\n }\n block B1 {\n  jmp B2\n }\n block B2 {\n  halt\n }\n}\n");
        let cfg = build_cfg(&t);
        let expected: BTreeSet<_> = [("B0", "B1"), ("B1", "B2")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        assert_eq!(cfg.edges, expected);
        assert!(!cfg.entry_is_loop_header);
    }

    #[test]
    fn diamond_and_self_loop() {
        let t = thread("program p\nthread 0 {\n block B0 {\n  br nez r1, B1, B2\n }\n block B1 {\n  jmp B3\n }\n block B2 {\n  jmp B3\n }\n block B3 {\n  br eqz r1, B3, B4\n }\n block B4 {\n  halt\n }\n}\n");
        let cfg = build_cfg(&t);
        assert_eq!(cfg.edges.len(), 6);
        assert!(cfg.has_edge("B3", "B3"));
        assert_eq!(cfg.predecessors("B3"), vec!["B1", "B2", "B3"]);
        assert!(cfg.edges.len() <= 2 * cfg.nodes.len());
    }

    // Y and Z initialized in N1, X in N2.
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

    #[test]
    fn def_sets_follow_block_bodies() {
        let t = thread(FIG5);
        let dfg = build_dfg(&t, &build_cfg(&t));
        let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(dfg.blocks["N1"].def_globals, set(&["Y", "Z"]));
        assert_eq!(dfg.blocks["N2"].def_globals, set(&["X"]));
        assert!(dfg.blocks["N3"].def_globals.is_empty());
        assert_eq!(dfg.lifetimes["X"].birth, set(&["N2"]));
        assert_eq!(dfg.lifetimes["X"].death, set(&["N3"]));
        assert!(dfg.data_edges.contains(&("N1".into(), "N2".into(), "Y".into())));
    }

    #[test]
    fn lifetime_in_loop_is_well_defined() {
        let t = thread("program p\nshared i = 0\nthread 0 {\n block A {\n  ld r1, i\n  st i, r1\n  br nez r1, A, B\n }\n block B {\n  halt\n }\n}\n");
        let dfg = build_dfg(&t, &build_cfg(&t));
        assert_eq!(dfg.lifetimes["i"].death.len(), 1);
    }

    #[test]
    fn modified_globals_cases() {
        let p = parse_program("program p\nshared g0 = 0\narray a[4]\nthread 0 {\n block A {\n  st g0, r1\n  sta a, r2, r3\n  halt\n }\n block B {\n  ld r1, g0\n  lda r2, a, r1\n  halt\n }\n}\n").unwrap();
        let m = modified_globals(&p.threads[0].blocks[0]);
        assert_eq!(m.into_iter().collect::<Vec<_>>(), vec!["a".to_string(), "g0".to_string()]);
        assert!(modified_globals(&p.threads[0].blocks[1]).is_empty());
    }

    const TWO: &str = "program two
shared v = 0
mutex m
thread 0 {
  block B0 {
    spawn 1
    jmp B1
  }
  block B1 {
    lock m
    unlock m
    jmp B2
  }
  block B2 {
    set r1, 5
    st v, r1
    join 1
    halt
  }
}
thread 1 {
  block B0 {
    lock m
    unlock m
    jmp B1
  }
  block B1 {
    ld r1, v
    halt
  }
}
";

    #[test]
    fn dgmp_arcs() {
        let g = build_dgmp(&parse_program(TWO).unwrap());
        assert_eq!(
            g.comm_arcs.iter().collect::<Vec<_>>(),
            vec![&CommArc {
                def: BlockRef::new(0, "B2"),
                usage: BlockRef::new(1, "B1"),
                var: "v".into()
            }]
        );
        assert!(g.sync_arcs.contains(&SyncArc {
            from: BlockRef::new(0, "B1"),
            to: BlockRef::new(1, "B0"),
            kind: SyncKind::Lock
        }));
        assert!(g.sync_arcs.contains(&SyncArc {
            from: BlockRef::new(0, "B0"),
            to: BlockRef::new(1, "B0"),
            kind: SyncKind::Create
        }));
        assert!(g.sync_arcs.contains(&SyncArc {
            from: BlockRef::new(1, "B1"),
            to: BlockRef::new(0, "B2"),
            kind: SyncKind::Join
        }));
    }

    #[test]
    fn single_thread_has_no_cross_arcs() {
        let g = build_dgmp(&parse_program(FIG5).unwrap());
        assert!(g.sync_arcs.is_empty());
        assert!(g.comm_arcs.is_empty());
    }

    #[test]
    fn dot_is_deterministic() {
        let p = parse_program(TWO).unwrap();
        let a = to_dot(&build_dgmp(&p));
        assert_eq!(a, to_dot(&build_dgmp(&p)));
        assert!(a.contains("\"t0/B2\" -> \"t1/B1\" [style=\"dashed,bold\", label=\"v\"]"));
    }
}
