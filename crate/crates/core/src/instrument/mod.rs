//! Program instrumentation.
//!
//! [`instrument`] runs the whole pipeline: user-program validation,
//! critical-section normalization, release-point splitting, signature
//! assignment and the CRMP or BCP rewrite. Every instruction of the output is
//! tagged with a [`Tag`] so instrumentation can be located (and stripped).

mod normalize;
mod rewrite;
mod signatures;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{validate_user_program, Diagnostic, Owner, Program};

pub use normalize::{normalize_critical_sections, split_release_points};
pub use rewrite::{emit_handler, instrument_bcp, instrument_crmp};
pub use signatures::{assign_signatures, SignatureMap, EXIT_MARK};

#[derive(Debug, Error)]
pub enum InstrumentError {
    #[error("invalid program:\n{}", render(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("signature assignment failed: {0}")]
    Signature(String),
}

fn render(d: &[Diagnostic]) -> String {
    d.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Crmp,
    Bcp,
    None,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Crmp => "crmp",
            Mode::Bcp => "bcp",
            Mode::None => "none",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "crmp" => Ok(Mode::Crmp),
            "bcp" => Ok(Mode::Bcp),
            "none" => Ok(Mode::None),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShadowPolicy {
    /// Shadow shared globals only.
    Globals,
    /// Shadow globals and snapshot registers at block entry.
    All,
}

impl fmt::Display for ShadowPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShadowPolicy::Globals => "globals",
            ShadowPolicy::All => "all",
        })
    }
}

impl FromStr for ShadowPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "globals" => Ok(ShadowPolicy::Globals),
            "all" => Ok(ShadowPolicy::All),
            _ => Err(format!("unknown shadow policy `{s}`")),
        }
    }
}

/// Provenance of one instruction (terminators included).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Original,
    SigUpdate,
    ThreadId,
    RegSnap,
    Check,
    Commit,
    AdjSet,
    /// Handler code that routes control (fail-site bookkeeping, thread and
    /// signature lookup).
    Dispatch,
    /// Handler code that copies shadows back or releases mutexes.
    Restore,
    /// Handler code that repairs the signature stream and jumps back.
    Transfer,
}

impl Tag {
    pub fn is_instrumentation(self) -> bool {
        self != Tag::Original
    }
}

/// Names of the globals the instrumenter adds.
pub mod names {
    pub const T: &str = "__T";
    pub const EXP: &str = "__exp";
    pub const KEY: &str = "__key";
    pub const HANDLER: &str = "__handler";
    pub const MISS: &str = "__h_miss";

    pub fn sst(j: usize) -> String {
        format!("__sst{j}")
    }
    pub fn dst(j: usize) -> String {
        format!("__dst{j}")
    }
    pub fn adj(j: usize) -> String {
        format!("__adj{j}")
    }
    pub fn shadow(v: &str) -> String {
        format!("__sh_{v}")
    }
    pub fn fail(j: usize, block: &str) -> String {
        format!("__fail_{j}_{block}")
    }
    pub fn restore_source(j: usize, block: &str) -> String {
        format!("__h_rs_{j}_{block}")
    }
    /// Handler block that resumes after a block that had completed.
    pub fn resume(j: usize, block: &str) -> String {
        format!("__h_rc_{j}_{block}")
    }
    /// Saved branch operand of the last completed block.
    pub fn branch_save(j: usize) -> String {
        format!("__bc{j}")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InstrumentedProgram {
    pub program: Program,
    /// The normalized program the rewrite started from.
    pub baseline: Program,
    pub sigmap: SignatureMap,
    pub mode: Mode,
    pub shadow_policy: ShadowPolicy,
    /// Per block, in global block id order, one tag per instruction.
    pub tags: Vec<Vec<Tag>>,
}

impl InstrumentedProgram {
    pub fn tags_of(&self, owner: Owner, label: &str) -> &[Tag] {
        let id = self.program.block_id(owner, label).expect("block exists");
        &self.tags[id]
    }

    /// Half-open index ranges of instrumentation inside each thread block.
    pub fn critical_instr_ranges(&self) -> BTreeMap<(usize, String), Vec<(usize, usize)>> {
        let mut out = BTreeMap::new();
        for ((owner, b), tags) in self.program.all_blocks().zip(&self.tags) {
            let Owner::Thread(tid) = owner else { continue };
            let mut ranges = Vec::new();
            let mut start = None;
            for (k, t) in tags.iter().enumerate() {
                match (t.is_instrumentation(), start) {
                    (true, None) => start = Some(k),
                    (false, Some(s)) => {
                        ranges.push((s, k));
                        start = None;
                    }
                    _ => {}
                }
            }
            if let Some(s) = start {
                ranges.push((s, tags.len()));
            }
            out.insert((tid, b.label.clone()), ranges);
        }
        out
    }

    /// Remove every instrumentation instruction, the handler region and the
    /// reserved globals. Yields [`InstrumentedProgram::baseline`].
    pub fn strip(&self) -> Program {
        let mut p = self.program.clone();
        let mut tags = self.tags.iter();
        for t in &mut p.threads {
            for b in &mut t.blocks {
                let bt = tags.next().expect("tag per block");
                b.body = b
                    .body
                    .drain(..)
                    .zip(bt)
                    .filter(|(_, t)| !t.is_instrumentation())
                    .map(|(i, _)| i)
                    .collect();
            }
        }
        p.handler.clear();
        let reserved = |n: &str| n.starts_with(crate::ir::RESERVED_PREFIX);
        p.shared_vars.retain(|(n, _)| !reserved(n));
        p.shared_arrays.retain(|a| !reserved(&a.name));
        p
    }

    /// Deterministic key-ordered JSON describing signatures and
    /// instrumentation ranges.
    pub fn sidecar_json(&self) -> String {
        #[derive(Serialize)]
        struct Sidecar {
            mode: Mode,
            shadow_policy: ShadowPolicy,
            signatures: BTreeMap<String, u16>,
            lookup: BTreeMap<String, String>,
            exit_mark: u32,
            entry_xor: BTreeMap<String, u32>,
            fan_in_base: BTreeMap<String, u32>,
            adjust: BTreeMap<String, u32>,
            critical_instr_ranges: BTreeMap<String, Vec<[usize; 2]>>,
            undetectable_pairs: Vec<[String; 2]>,
        }
        let key = |r: &crate::depgraph::BlockRef| r.to_string();
        let sm = &self.sigmap;
        let sc = Sidecar {
            mode: self.mode,
            shadow_policy: self.shadow_policy,
            signatures: sm.sigs.iter().map(|(k, v)| (key(k), *v)).collect(),
            lookup: sm.lookup.iter().map(|(s, r)| (format!("{s:#06x}"), key(r))).collect(),
            exit_mark: signatures::EXIT_MARK,
            entry_xor: sm.entry_xor.iter().map(|(k, v)| (key(k), *v)).collect(),
            fan_in_base: sm.fan_in.iter().map(|(k, v)| (key(k), *v)).collect(),
            adjust: sm.adjust.iter().map(|(k, v)| (key(k), *v)).collect(),
            critical_instr_ranges: self
                .critical_instr_ranges()
                .into_iter()
                .map(|((t, b), r)| (format!("t{t}/{b}"), r.into_iter().map(|(a, b)| [a, b]).collect()))
                .collect(),
            undetectable_pairs: sm.undetectable.iter().map(|(a, b)| [key(a), key(b)]).collect(),
        };
        let mut s = serde_json::to_string_pretty(&sc).expect("sidecar serializes");
        s.push('\n');
        s
    }
}

/// Validate, normalize and split a user program into the form the rewrite
/// expects.
pub fn prepare(p: &Program) -> Result<Program, InstrumentError> {
    let diags = validate_user_program(p);
    if !diags.is_empty() {
        return Err(InstrumentError::Invalid(diags));
    }
    let n = normalize_critical_sections(p).map_err(InstrumentError::Invalid)?;
    Ok(split_release_points(&n))
}

pub fn instrument(p: &Program, mode: Mode, policy: ShadowPolicy) -> Result<InstrumentedProgram, InstrumentError> {
    let prepared = prepare(p)?;
    let sm = assign_signatures(&prepared)?;
    Ok(match mode {
        Mode::Crmp => instrument_crmp(&prepared, &sm, policy),
        Mode::Bcp => instrument_bcp(&prepared, &sm),
        Mode::None => InstrumentedProgram {
            tags: prepared.all_blocks().map(|(_, b)| vec![Tag::Original; b.len()]).collect(),
            program: prepared.clone(),
            baseline: prepared,
            sigmap: sm,
            mode,
            shadow_policy: policy,
        },
    })
}
