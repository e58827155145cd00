//! Exhaustive enumeration of illegal transfers on small programs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::campaign::{Campaign, CampaignError, CfeKind, CommScenario, OutcomeClass};
use crate::instrument::{InstrumentedProgram, Tag};
use crate::ir::{Instr, Owner};
use crate::vm::{EventKind, FaultModel, FaultSpec, Image, RunResult, SchedConfig};

/// Single thread, four blocks, one loop.
pub const DESK_LOOP: &str = "program desk_loop
shared i = 0
shared s = 0
thread 0 {
  block B0 {
    set r1, 0
    st i, r1
    st s, r1
    jmp B1
  }
  block B1 {
    ld r1, i
    ld r2, s
    add r2, r2, r1
    st s, r2
    jmp B2
  }
  block B2 {
    ld r1, i
    set r3, 1
    add r1, r1, r3
    st i, r1
    set r4, 4
    cmp_lt r5, r1, r4
    br nez r5, B1, B3
  }
  block B3 {
    ld r2, s
    out r2
    halt
  }
}
";

/// Two threads updating a shared counter under one mutex.
pub const DESK_LOCK_COMM: &str = "program desk_lock_comm
shared x = 0
shared done = 0
mutex m
thread 0 {
  block M0 {
    spawn 1
    jmp M1
  }
  block M1 {
    lock m
    ld r1, x
    set r2, 10
    add r1, r1, r2
    st x, r1
    unlock m
    jmp M2
  }
  block M2 {
    join 1
    ld r1, x
    out r1
    ld r1, done
    out r1
    halt
  }
}
thread 1 {
  block S0 {
    lock m
    ld r1, x
    set r2, 3
    add r1, r1, r2
    st x, r1
    unlock m
    jmp S1
  }
  block S1 {
    set r3, 1
    st done, r3
    halt
  }
}
";

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error("enumeration space of {size} runs exceeds the bound {bound}")]
    SpaceTooLarge { size: u64, bound: u64 },
}

/// Where a candidate transfer lands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DestKind {
    /// First instruction of a thread block.
    Entry,
    /// An original instruction past the block's first.
    MidBody,
    /// Instrumentation inside a thread block, past its first instruction.
    Instrumentation,
    /// Any handler-region instruction.
    Handler,
}

impl DestKind {
    pub const ALL: [DestKind; 4] = [DestKind::Entry, DestKind::MidBody, DestKind::Instrumentation, DestKind::Handler];

    pub fn name(self) -> &'static str {
        match self {
            DestKind::Entry => "entry",
            DestKind::MidBody => "mid_body",
            DestKind::Instrumentation => "instrumentation",
            DestKind::Handler => "handler",
        }
    }
}

impl fmt::Display for DestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DestKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        DestKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown destination kind `{s}`"))
    }
}

#[derive(Clone, Debug)]
pub struct VerifyConfig {
    pub sched: SchedConfig,
    pub kinds: Vec<DestKind>,
    /// Largest number of runs allowed.
    pub bound: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            sched: SchedConfig {
                quantum: 1,
                ..SchedConfig::default()
            },
            kinds: DestKind::ALL.to_vec(),
            bound: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VerifyRow {
    pub fault: String,
    pub source: String,
    pub dest: String,
    pub dest_kind: DestKind,
    pub expected_correctable: bool,
    pub class: OutcomeClass,
    pub cfe_kind: CfeKind,
    pub detected: bool,
    pub memory_clean: bool,
    pub comm_scenario: CommScenario,
    /// Another thread wrote a variable the handler restored while the
    /// recovery was in flight.
    pub concurrent_writer: bool,
}

impl VerifyRow {
    pub fn corrected_clean(&self) -> bool {
        self.class == OutcomeClass::DetectedCorrected && self.memory_clean
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct KindSummary {
    pub candidates: usize,
    pub detected: usize,
    pub corrected: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct VerifySummary {
    pub candidates: usize,
    pub expected_correctable: usize,
    /// Expected-correctable candidates corrected with golden final memory.
    pub expected_corrected: usize,
    /// Corrected with golden memory although not predicted.
    pub unpredicted_corrected: usize,
    pub intra_node: usize,
    pub intra_node_detected: usize,
    pub by_kind: BTreeMap<DestKind, KindSummary>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VerifyTable {
    pub program: String,
    pub summary: VerifySummary,
    pub rows: Vec<VerifyRow>,
}

impl VerifyTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("row serializes");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
    }

    /// Predicted-correctable rows that were not corrected cleanly.
    pub fn misses(&self) -> Vec<&VerifyRow> {
        self.rows
            .iter()
            .filter(|r| r.expected_correctable && !r.corrected_clean())
            .collect()
    }
}

/// Per block: end of the entry prologue (signature and thread-id updates),
/// offset of the check, first offset after the completion mark from which
/// only unlocks remain, and whether a join precedes the check.
struct Shape {
    body: usize,
    check: usize,
    tail: usize,
    join_before_check: bool,
}

fn shapes(ip: &InstrumentedProgram) -> Vec<Option<Shape>> {
    ip.program
        .all_blocks()
        .zip(&ip.tags)
        .map(|((owner, b), tags)| {
            if owner == Owner::Handler {
                return None;
            }
            let body = tags
                .iter()
                .take_while(|t| matches!(t, Tag::SigUpdate | Tag::ThreadId | Tag::RegSnap))
                .count();
            let check = tags.iter().position(|t| *t == Tag::Check)?;
            let mark = (check..tags.len()).rev().find(|&o| matches!(tags[o], Tag::SigUpdate | Tag::AdjSet))?;
            let join_before_check = b.body[..check].iter().any(|i| matches!(i, Instr::Join(_)));
            let tail = (mark + 1..=b.body.len())
                .find(|&t| b.body[t..].iter().all(|i| matches!(i, Instr::Unlock(_))))
                .unwrap_or(b.body.len());
            Some(Shape {
                body,
                check,
                tail,
                join_before_check,
            })
        })
        .collect()
}

/// Per block id, the program globals a handler block copies back.
fn restored_vars(ip: &InstrumentedProgram, img: &Image) -> Vec<Vec<u32>> {
    ip.program
        .all_blocks()
        .map(|(owner, b)| {
            if owner != Owner::Handler {
                return Vec::new();
            }
            b.body
                .iter()
                .filter_map(|i| match i {
                    Instr::GCopy { dst, .. } | Instr::ACopy { dst, .. } => img.global_id(dst),
                    _ => None,
                })
                .collect()
        })
        .collect()
}

/// Whether another context wrote a variable restored by `ctx`'s handler
/// between the start of its current block and the handler exit.
fn concurrent_writer(img: &Image, restored: &[Vec<u32>], r: &RunResult, t0: u64, ctx: usize) -> bool {
    let vars: BTreeSet<u32> = r
        .trace
        .iter()
        .filter(|e| e.kind == EventKind::BlockEnter && e.tid == ctx && e.dyn_instr_index >= t0)
        .filter(|e| img.is_handler(e.block))
        .flat_map(|e| restored[e.block as usize].iter().copied())
        .collect();
    if vars.is_empty() {
        return false;
    }
    let te = r
        .trace
        .iter()
        .find(|e| e.kind == EventKind::HandlerExit && e.tid == ctx && e.dyn_instr_index >= t0)
        .map_or(u64::MAX, |e| e.dyn_instr_index);
    (0..r.per_thread.len()).filter(|&k| k != ctx).any(|k| {
        let start = r
            .trace
            .iter()
            .rfind(|e| e.kind == EventKind::BlockEnter && e.tid == k && e.dyn_instr_index <= t0)
            .map(|e| e.dyn_instr_index)
            .unwrap_or(0);
        r.trace.iter().any(|e| {
            e.kind == EventKind::SharedWrite
                && e.tid == k
                && (start..=te).contains(&e.dyn_instr_index)
                && matches!(e.payload, crate::vm::Payload::Var { var, .. } if vars.contains(&var))
        })
    })
}

fn dest_kind(img: &Image, ip: &InstrumentedProgram, b: u32, o: usize) -> DestKind {
    if img.is_handler(b) {
        DestKind::Handler
    } else if o == 0 {
        DestKind::Entry
    } else if ip.tags[b as usize][o].is_instrumentation() {
        DestKind::Instrumentation
    } else {
        DestKind::MidBody
    }
}

/// Every (golden step, destination) pair that is not a legal edge is one
/// candidate transfer: the instruction at the step is replaced by a jump to
/// the destination. Each
/// candidate is replayed, classified and compared with the static
/// expected-correctable predicate.
pub fn enumerate_and_check(ip: &InstrumentedProgram, cfg: &VerifyConfig) -> Result<VerifyTable, VerifyError> {
    let c = Campaign::new(ip, &cfg.sched)?;
    let img = &c.image;
    let dests: Vec<(u32, usize, DestKind)> = (0..img.num_blocks() as u32)
        .flat_map(|b| (0..img.block_len(b)).map(move |o| (b, o)))
        .map(|(b, o)| (b, o, dest_kind(img, ip, b, o)))
        .filter(|(_, _, k)| cfg.kinds.contains(k))
        .collect();
    let size = c.golden.steps.len() as u64 * dests.len() as u64;
    if size > cfg.bound {
        return Err(VerifyError::SpaceTooLarge { size, bound: cfg.bound });
    }
    let shapes = shapes(ip);
    let restored = restored_vars(ip, img);
    let succ: Vec<Vec<u32>> = ip
        .program
        .all_blocks()
        .map(|(owner, b)| b.terminator.targets().iter().filter_map(|l| img.block_id(owner, l)).collect())
        .collect();
    // A terminator retargeted to one of its own successors is a legal edge.
    let legal = |i: u64, b: u32, o: usize| {
        let s = c.golden.steps[i as usize];
        o == 0 && img.is_terminator(s.block, s.offset as usize) && succ[s.block as usize].contains(&b)
    };
    let cands: Vec<(u64, u32, usize, DestKind)> = (0..c.golden.steps.len() as u64)
        .flat_map(|i| dests.iter().map(move |&(b, o, k)| (i, b, o, k)))
        .filter(|&(i, b, o, _)| !legal(i, b, o))
        .collect();
    let rows = cands
        .par_iter()
        .map(|&(i, b, o, kind)| {
            let s = c.golden.steps[i as usize];
            let ctx = s.ctx as usize;
            let (sb, so) = (s.block, s.offset as usize);
            let model = match img.block_owner(b) {
                Owner::Thread(t) if t != ctx => FaultModel::InterThreadSwitch,
                _ if img.is_terminator(sb, so) => FaultModel::BranchTargetMod,
                _ => FaultModel::BranchInsertion,
            };
            let f = FaultSpec {
                model,
                trigger: i,
                target: Some(img.location(b, o)),
                seed: 0,
            };
            let (out, run) = c.replay(&f)?;
            let racing = out.activated && concurrent_writer(img, &restored, &run, i, ctx);
            let expected = match (&shapes[sb as usize], &shapes[b as usize]) {
                (Some(src), Some(dst)) => {
                    let src_ok = (src.body..=src.check).contains(&so) || so >= src.tail;
                    let land_ok = o == 0 || o == dst.body;
                    // From past the completion mark a successor's entry is signature-legal.
                    let legal_edge = so > src.check && o == 0 && succ[sb as usize].contains(&b);
                    img.block_owner(b) == Owner::Thread(ctx)
                        && sb != b
                        && src_ok
                        && land_ok
                        && !legal_edge
                        && !dst.join_before_check
                        && !out.undetectable_pair
                        && out.comm_scenario != CommScenario::S4
                        && !racing
                }
                _ => false,
            };
            Ok(VerifyRow {
                fault: f.to_string(),
                source: img.location(sb, so).to_string(),
                dest: img.location(b, o).to_string(),
                dest_kind: kind,
                expected_correctable: expected,
                class: out.class,
                cfe_kind: out.cfe_kind,
                detected: out.detection_latency.is_some(),
                memory_clean: out.memory_clean,
                comm_scenario: out.comm_scenario,
                concurrent_writer: racing,
            })
        })
        .collect::<Result<Vec<_>, CampaignError>>()?;

    let mut sum = VerifySummary {
        candidates: rows.len(),
        ..VerifySummary::default()
    };
    for r in &rows {
        let k = sum.by_kind.entry(r.dest_kind).or_default();
        k.candidates += 1;
        k.detected += usize::from(r.detected);
        k.corrected += usize::from(r.class == OutcomeClass::DetectedCorrected);
        if r.expected_correctable {
            sum.expected_correctable += 1;
            sum.expected_corrected += usize::from(r.corrected_clean());
        } else if r.corrected_clean() {
            sum.unpredicted_corrected += 1;
        }
        if r.cfe_kind == CfeKind::IntraNode {
            sum.intra_node += 1;
            sum.intra_node_detected += usize::from(r.detected);
        }
    }
    Ok(VerifyTable {
        program: ip.program.name.clone(),
        summary: sum,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::{instrument, Mode, ShadowPolicy};
    use crate::ir::parse_program;

    fn table(src: &str, kinds: &[DestKind]) -> VerifyTable {
        let ip = instrument(&parse_program(src).unwrap(), Mode::Crmp, ShadowPolicy::Globals).unwrap();
        let cfg = VerifyConfig {
            kinds: kinds.to_vec(),
            ..VerifyConfig::default()
        };
        enumerate_and_check(&ip, &cfg).unwrap()
    }

    #[test]
    fn loop_entry_jumps_are_corrected() {
        let t = table(DESK_LOOP, &[DestKind::Entry]);
        assert!(t.summary.expected_correctable > 0);
        assert!(t.misses().is_empty(), "{:#?}", &t.misses()[..t.misses().len().min(5)]);
    }

    #[test]
    fn intra_node_jumps_are_not_detected() {
        let t = table(DESK_LOOP, &[DestKind::MidBody, DestKind::Instrumentation]);
        assert!(t.summary.intra_node > 0);
        assert_eq!(t.summary.intra_node_detected, 0);
    }

    #[test]
    fn lock_comm_program_matches_predicate_at_both_quanta() {
        let ip = instrument(&parse_program(DESK_LOCK_COMM).unwrap(), Mode::Crmp, ShadowPolicy::Globals).unwrap();
        for sched in [VerifyConfig::default().sched, SchedConfig::default()] {
            let cfg = VerifyConfig {
                sched,
                ..VerifyConfig::default()
            };
            let t = enumerate_and_check(&ip, &cfg).unwrap();
            assert!(t.summary.expected_correctable > 0);
            assert!(t.misses().is_empty(), "{:#?}", t.misses());
            assert_eq!(t.summary.intra_node_detected, 0);
        }
    }

    #[test]
    fn landing_in_critical_block_is_detected_before_unlock() {
        let ip = instrument(&parse_program(DESK_LOCK_COMM).unwrap(), Mode::Crmp, ShadowPolicy::Globals).unwrap();
        let c = Campaign::new(&ip, &VerifyConfig::default().sched).unwrap();
        let img = &c.image;
        let mut seen = 0;
        for (tid, label) in [(0, "M1"), (1, "S0")] {
            let b = img.block_id(Owner::Thread(tid), label).unwrap();
            let check = ip.tags[b as usize].iter().position(|t| *t == Tag::Check).unwrap();
            for (i, s) in c.golden.steps.iter().enumerate() {
                if s.ctx as usize != tid || s.block == b || img.is_terminator(s.block, s.offset as usize) {
                    continue;
                }
                for o in 0..=check {
                    let f = FaultSpec {
                        model: FaultModel::BranchInsertion,
                        trigger: i as u64,
                        target: Some(img.location(b, o)),
                        seed: 0,
                    };
                    let (out, run) = c.replay(&f).unwrap();
                    let Some(d) = out.detection_latency else { continue };
                    let td = i as u64 + d;
                    seen += 1;
                    assert!(!run.trace.iter().any(|e| e.kind == EventKind::LockRelease
                        && e.tid == tid
                        && (i as u64..td).contains(&e.dyn_instr_index)));
                }
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn bound_is_enforced() {
        let ip = instrument(&parse_program(DESK_LOOP).unwrap(), Mode::Crmp, ShadowPolicy::Globals).unwrap();
        let cfg = VerifyConfig {
            bound: 10,
            ..VerifyConfig::default()
        };
        assert!(matches!(enumerate_and_check(&ip, &cfg), Err(VerifyError::SpaceTooLarge { .. })));
    }

    #[test]
    fn csv_has_one_row_per_candidate() {
        let t = table(DESK_LOOP, &[DestKind::Entry]);
        assert_eq!(t.to_csv().lines().count(), t.rows.len() + 1);
    }
}
