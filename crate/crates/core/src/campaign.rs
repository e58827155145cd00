//! Fault sampling, replay and outcome classification.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depgraph::{build_dgmp, BlockRef, Dgmp};
use crate::instrument::{InstrumentedProgram, Mode, ShadowPolicy, Tag};
use crate::ir::{static_size, Owner};
use crate::metrics::{latency_stats, LatencyStats};
use crate::vm::{
    EventKind, FaultModel, FaultSpec, Image, Location, Outcome, Payload, RunResult, SchedConfig, TraceEvent,
    TrapReason, VmError,
};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error("fault-free run did not complete: {0}")]
    Golden(String),
    #[error("no fault model in the mix has a legal trigger and destination")]
    NothingToSample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    BenignCorrect,
    DetectedCorrected,
    DetectedUncorrected,
    SilentWrongOutput,
    Trap,
    Timeout,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 6] = [
        OutcomeClass::BenignCorrect,
        OutcomeClass::DetectedCorrected,
        OutcomeClass::DetectedUncorrected,
        OutcomeClass::SilentWrongOutput,
        OutcomeClass::Trap,
        OutcomeClass::Timeout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OutcomeClass::BenignCorrect => "benign_correct",
            OutcomeClass::DetectedCorrected => "detected_corrected",
            OutcomeClass::DetectedUncorrected => "detected_uncorrected",
            OutcomeClass::SilentWrongOutput => "silent_wrong_output",
            OutcomeClass::Trap => "trap",
            OutcomeClass::Timeout => "timeout",
        }
    }

    /// Run ended with the golden output.
    pub fn is_correct(self) -> bool {
        matches!(self, OutcomeClass::BenignCorrect | OutcomeClass::DetectedCorrected)
    }
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfeKind {
    None,
    IntraNode,
    IntraThread,
    InterThread,
}

impl fmt::Display for CfeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CfeKind::None => "none",
            CfeKind::IntraNode => "intra_node",
            CfeKind::IntraThread => "intra_thread",
            CfeKind::InterThread => "inter_thread",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommScenario {
    None,
    S1,
    S2,
    S3,
    S4,
}

impl fmt::Display for CommScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommScenario::None => "none",
            CommScenario::S1 => "s1",
            CommScenario::S2 => "s2",
            CommScenario::S3 => "s3",
            CommScenario::S4 => "s4",
        })
    }
}

/// Correction latency split into detection, handler dispatch, shadow
/// restore and control transfer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub detection: u64,
    pub handler: u64,
    pub restore: u64,
    pub transfer: u64,
}

impl Components {
    pub fn total(&self) -> u64 {
        self.detection + self.handler + self.restore + self.transfer
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionOutcome {
    pub fault: FaultSpec,
    pub activated: bool,
    pub class: OutcomeClass,
    pub cfe_kind: CfeKind,
    /// Source block of the transfer, as `t<tid>/<label>`.
    pub source: Option<String>,
    /// Destination position.
    pub dest: Option<String>,
    pub detection_latency: Option<u64>,
    /// Handler exit minus fault activation, from trace indices.
    pub correction_latency: Option<u64>,
    /// Tag-derived decomposition; present when `correction_latency` is.
    pub components: Option<Components>,
    pub comm_scenario: CommScenario,
    /// Source and destination form a pair the signatures cannot tell apart.
    pub undetectable_pair: bool,
    /// Destination lies inside instrumentation code of a thread block, past
    /// its first instruction.
    pub into_critical: bool,
    pub into_handler: bool,
    /// Final non-reserved memory equals the fault-free run's.
    pub memory_clean: bool,
    pub trap: Option<String>,
}

/// Relative weights of the fault models, in [`FaultModel::ALL`] order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mix {
    pub weights: [f64; 4],
}

impl Default for Mix {
    /// Equal thirds over the three intra-thread models.
    fn default() -> Self {
        Mix { weights: [1.0, 1.0, 1.0, 0.0] }
    }
}

impl Mix {
    pub fn only(model: FaultModel) -> Self {
        let mut weights = [0.0; 4];
        weights[model_index(model)] = 1.0;
        Mix { weights }
    }

    pub fn weight(&self, model: FaultModel) -> f64 {
        self.weights[model_index(model)]
    }
}

fn model_index(m: FaultModel) -> usize {
    FaultModel::ALL.iter().position(|x| *x == m).expect("known model")
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = FaultModel::ALL
            .iter()
            .zip(self.weights)
            .filter(|(_, w)| *w > 0.0)
            .map(|(m, w)| format!("{m}={w}"))
            .collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for Mix {
    type Err = String;
    /// `equal`, `inter`, or `model=weight` pairs separated by commas.
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "equal" => return Ok(Mix::default()),
            "inter" => return Ok(Mix::only(FaultModel::InterThreadSwitch)),
            _ => {}
        }
        let mut weights = [0.0; 4];
        for part in s.split(',') {
            let (m, w) = part.split_once('=').ok_or_else(|| format!("bad mix entry `{part}`"))?;
            let m: FaultModel = m.trim().parse()?;
            let w: f64 = w.trim().parse().map_err(|_| format!("bad weight in `{part}`"))?;
            if !(w >= 0.0 && w.is_finite()) {
                return Err(format!("weight must be finite and non-negative in `{part}`"));
            }
            weights[model_index(m)] = w;
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Err("mix has no positive weight".into());
        }
        Ok(Mix { weights })
    }
}

/// Code positions faults are drawn from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Triggers on original program instructions; destinations at block
    /// starts or original instructions.
    #[default]
    Original,
    /// Every instruction, instrumentation included.
    All,
}

impl FromStr for Domain {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "original" => Ok(Domain::Original),
            "all" => Ok(Domain::All),
            _ => Err(format!("unknown domain `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sampled {
    pub faults: Vec<FaultSpec>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overhead {
    pub baseline_static: usize,
    pub instrumented_static: usize,
    pub baseline_dyn: u64,
    pub instrumented_dyn: u64,
}

/// Everything needed to replay faults against one instrumented program.
pub struct Campaign<'a> {
    pub ip: &'a InstrumentedProgram,
    pub image: Image,
    /// Replay configuration: tracing and step recording on, step budget 50x
    /// the fault-free run.
    pub cfg: SchedConfig,
    pub golden: RunResult,
    pub dgmp: Dgmp,
    pub overhead: Overhead,
    /// Per block id, the length of the leading signature-update prologue and
    /// the offsets of the later signature-state updates.
    bounds: Vec<(usize, Vec<usize>)>,
    /// Per domain and thread, the (block, offset) destinations.
    positions: [Vec<Vec<(u32, usize)>>; 2],
}

impl<'a> Campaign<'a> {
    pub fn new(ip: &'a InstrumentedProgram, cfg: &SchedConfig) -> Result<Self, CampaignError> {
        let image = Image::compile(&ip.program)?;
        let mut cfg = SchedConfig {
            trace: true,
            record_steps: true,
            audit: false,
            ..*cfg
        };
        let golden = image.run(&cfg);
        if golden.outcome != Outcome::Completed {
            return Err(CampaignError::Golden(format!("{:?}", golden.outcome)));
        }
        cfg.max_steps = golden.dyn_instr_total.saturating_mul(50).max(1000);
        let base = crate::vm::run(&ip.baseline, &SchedConfig { trace: false, record_steps: false, ..cfg })?;
        let overhead = Overhead {
            baseline_static: static_size(&ip.baseline).total(),
            instrumented_static: static_size(&ip.program).total(),
            baseline_dyn: base.dyn_instr_total,
            instrumented_dyn: golden.dyn_instr_total,
        };
        let bounds = ip
            .tags
            .iter()
            .map(|t| {
                let pro = t.iter().take_while(|x| matches!(x, Tag::RegSnap | Tag::SigUpdate)).count();
                let marks = (pro..t.len()).filter(|&o| matches!(t[o], Tag::SigUpdate | Tag::AdjSet)).collect();
                (pro, marks)
            })
            .collect();
        let mut all = vec![Vec::new(); image.num_threads()];
        let mut original = vec![Vec::new(); image.num_threads()];
        for id in 0..image.num_blocks() as u32 {
            if let Owner::Thread(t) = image.block_owner(id) {
                for o in 0..image.block_len(id) {
                    all[t].push((id, o));
                    if o == 0 || !ip.tags[id as usize][o].is_instrumentation() {
                        original[t].push((id, o));
                    }
                }
            }
        }
        let positions = [original, all];
        Ok(Campaign {
            ip,
            image,
            cfg,
            golden,
            dgmp: build_dgmp(&ip.baseline),
            overhead,
            bounds,
            positions,
        })
    }

    /// Position of the `k`-th original instruction (terminator included) of
    /// thread `tid`'s block `label`.
    pub fn original_pos(&self, tid: usize, label: &str, k: usize) -> Option<Location> {
        let id = self.image.block_id(Owner::Thread(tid), label)?;
        let off = self.ip.tags[id as usize]
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.is_instrumentation())
            .nth(k)?
            .0;
        Some(self.image.location(id, off))
    }

    /// Dynamic indices of the fault-free run executing `loc`.
    pub fn steps_at(&self, loc: &Location) -> Vec<u64> {
        let Ok((b, o)) = self.image.resolve(loc) else {
            return Vec::new();
        };
        self.golden
            .steps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.block == b && s.offset as usize == o)
            .map(|(i, _)| i as u64)
            .collect()
    }

    fn positions(&self, domain: Domain) -> &[Vec<(u32, usize)>] {
        &self.positions[domain as usize]
    }

    fn triggers(&self, model: FaultModel, domain: Domain) -> Vec<u64> {
        let img = &self.image;
        let tags = &self.ip.tags;
        let steps = self
            .golden
            .steps
            .iter()
            .enumerate()
            .filter(|(_, s)| domain == Domain::All || !tags[s.block as usize][s.offset as usize].is_instrumentation());
        match model {
            FaultModel::BranchInsertion => steps
                .filter(|(_, s)| !img.is_terminator(s.block, s.offset as usize))
                .map(|(i, _)| i as u64)
                .collect(),
            FaultModel::BranchDeletion | FaultModel::BranchTargetMod => steps
                .filter(|(_, s)| img.is_terminator(s.block, s.offset as usize))
                .map(|(i, _)| i as u64)
                .collect(),
            FaultModel::InterThreadSwitch => {
                if self.positions(domain).iter().filter(|p| !p.is_empty()).count() < 2 {
                    Vec::new()
                } else {
                    steps.map(|(i, _)| i as u64).collect()
                }
            }
        }
    }

    fn pick_target(&self, rng: &mut ChaCha8Rng, model: FaultModel, ctx: usize, domain: Domain) -> Option<Location> {
        let positions = self.positions(domain);
        let (b, o) = match model {
            FaultModel::BranchDeletion => return None,
            FaultModel::BranchInsertion | FaultModel::BranchTargetMod => {
                let own = &positions[ctx];
                own[rng.gen_range(0..own.len())]
            }
            FaultModel::InterThreadSwitch => {
                let total: usize = positions.iter().map(Vec::len).sum::<usize>() - positions[ctx].len();
                let mut k = rng.gen_range(0..total);
                let mut hit = None;
                for (t, ps) in positions.iter().enumerate() {
                    if t == ctx {
                        continue;
                    }
                    if k < ps.len() {
                        hit = Some(ps[k]);
                        break;
                    }
                    k -= ps.len();
                }
                hit.expect("index within total")
            }
        };
        Some(self.image.location(b, o))
    }

    /// Draw `n` faults: model per `mix`, trigger uniform over the fault-free
    /// run's steps in `domain` meeting the model's precondition, destination
    /// uniform over the legal positions of `domain`.
    pub fn sample_faults(&self, n: usize, seed: u64, mix: &Mix, domain: Domain) -> Result<Sampled, CampaignError> {
        let mut warnings = Vec::new();
        let mut weights = mix.weights;
        let triggers: Vec<Vec<u64>> = FaultModel::ALL.iter().map(|m| self.triggers(*m, domain)).collect();
        for (k, m) in FaultModel::ALL.iter().enumerate() {
            if weights[k] > 0.0 && triggers[k].is_empty() {
                warnings.push(format!("{m} has no legal trigger or destination; weight dropped"));
                weights[k] = 0.0;
            }
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Err(CampaignError::NothingToSample);
        }
        let dist = WeightedIndex::new(weights).expect("positive weight");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let faults = (0..n as u64)
            .map(|i| {
                let k = dist.sample(&mut rng);
                let model = FaultModel::ALL[k];
                let trigger = triggers[k][rng.gen_range(0..triggers[k].len())];
                let ctx = self.golden.steps[trigger as usize].ctx as usize;
                FaultSpec {
                    model,
                    trigger,
                    target: self.pick_target(&mut rng, model, ctx, domain),
                    seed: i,
                }
            })
            .collect();
        Ok(Sampled { faults, warnings })
    }

    /// Same block, both ends past the prologue and no signature-state update
    /// between them.
    fn is_intra_node(&self, src: u32, src_off: usize, dst: u32, dst_off: usize) -> bool {
        let (pro, marks) = &self.bounds[src as usize];
        let crosses = marks.iter().any(|&m| (src_off <= m) != (dst_off <= m));
        src == dst && src_off >= *pro && dst_off >= *pro && !crosses
    }

    /// Replay one fault and classify the run.
    pub fn inject_and_classify(&self, f: &FaultSpec) -> Result<InjectionOutcome, CampaignError> {
        Ok(self.replay(f)?.0)
    }

    /// [`Campaign::inject_and_classify`], also returning the faulty run.
    pub fn replay(&self, f: &FaultSpec) -> Result<(InjectionOutcome, RunResult), CampaignError> {
        let r = self.image.run_with_fault(&self.cfg, f)?;
        let img = &self.image;
        let mut out = InjectionOutcome {
            fault: f.clone(),
            activated: r.fault_activated,
            class: OutcomeClass::BenignCorrect,
            cfe_kind: CfeKind::None,
            source: None,
            dest: None,
            detection_latency: None,
            correction_latency: None,
            components: None,
            comm_scenario: CommScenario::None,
            undetectable_pair: false,
            into_critical: false,
            into_handler: false,
            memory_clean: r.memory == self.golden.memory,
            trap: None,
        };
        let act = r.trace.iter().find(|e| e.kind == EventKind::FaultActivated).copied();
        let output_ok = r.output == self.golden.output;

        let Some(act) = act.filter(|_| r.fault_activated) else {
            out.class = match &r.outcome {
                Outcome::Trap(t) => {
                    out.trap = Some(t.to_string());
                    OutcomeClass::Trap
                }
                Outcome::Timeout => OutcomeClass::Timeout,
                Outcome::Completed if output_ok => OutcomeClass::BenignCorrect,
                Outcome::Completed => OutcomeClass::SilentWrongOutput,
            };
            return Ok((out, r));
        };

        let (t0, ctx, src) = (act.dyn_instr_index, act.tid, act.block);
        let src_off = r.steps[t0 as usize].offset as usize;
        let dst = match f.model {
            FaultModel::BranchDeletion => img.blocks[src as usize].next.map(|b| (b, 0)),
            _ => f.target.as_ref().map(|l| img.resolve(l)).transpose()?,
        };
        out.source = Some(img.block_name(src));
        out.dest = dst.map(|(b, o)| img.location(b, o).to_string());
        out.cfe_kind = match dst {
            Some((b, o)) if self.is_intra_node(src, src_off, b, o) => CfeKind::IntraNode,
            Some((b, _)) => match img.block_owner(b) {
                Owner::Thread(t) if t != ctx => CfeKind::InterThread,
                _ => CfeKind::IntraThread,
            },
            None => CfeKind::IntraThread,
        };
        if let Some((b, o)) = dst {
            out.into_handler = img.is_handler(b);
            out.into_critical = !out.into_handler && o > 0 && self.ip.tags[b as usize][o].is_instrumentation();
            if let (Owner::Thread(ts), Owner::Thread(td)) = (img.block_owner(src), img.block_owner(b)) {
                let pair = (
                    BlockRef::new(ts, img.block_label(src)),
                    BlockRef::new(td, img.block_label(b)),
                );
                out.undetectable_pair = self.ip.sigmap.undetectable.contains(&pair);
            }
        }

        let fail = r
            .trace
            .iter()
            .find(|e| e.kind == EventKind::CheckFail && e.dyn_instr_index >= t0)
            .copied();
        let exit = fail.and_then(|fe| {
            r.trace
                .iter()
                .find(|e| e.kind == EventKind::HandlerExit && e.tid == fe.tid && e.dyn_instr_index > fe.dyn_instr_index)
                .copied()
        });
        if let Some(fe) = fail {
            out.detection_latency = Some(fe.dyn_instr_index - t0);
        }

        out.class = match &r.outcome {
            Outcome::Trap(TrapReason::HandlerSignatureMiss) => {
                out.trap = Some(TrapReason::HandlerSignatureMiss.to_string());
                OutcomeClass::DetectedUncorrected
            }
            Outcome::Trap(t) => {
                out.trap = Some(t.to_string());
                OutcomeClass::Trap
            }
            Outcome::Timeout => OutcomeClass::Timeout,
            Outcome::Completed => match (fail.is_some(), output_ok) {
                (false, true) => OutcomeClass::BenignCorrect,
                (false, false) => OutcomeClass::SilentWrongOutput,
                (true, true) => OutcomeClass::DetectedCorrected,
                (true, false) => OutcomeClass::DetectedUncorrected,
            },
        };

        if let (OutcomeClass::DetectedCorrected, Some(fe), Some(xe)) = (out.class, fail, exit) {
            let (td, te) = (fe.dyn_instr_index, xe.dyn_instr_index);
            out.correction_latency = Some(te - t0);
            let mut c = Components {
                detection: td - t0,
                ..Components::default()
            };
            for s in &r.steps[(td + 1) as usize..=te as usize] {
                match self.ip.tags[s.block as usize][s.offset as usize] {
                    Tag::Dispatch => c.handler += 1,
                    Tag::Restore => c.restore += 1,
                    Tag::Transfer => c.transfer += 1,
                    _ => {}
                }
            }
            out.components = Some(c);
        }

        out.comm_scenario = self.tag_comm_scenario(
            &r.trace,
            t0,
            ctx,
            src,
            dst.map(|d| d.0),
            fail.map(|e| e.dyn_instr_index),
            exit.map(|e| e.dyn_instr_index),
        );
        Ok((out, r))
    }

    /// Place the fault relative to cross-thread consumers of the variables
    /// its source or destination block defines. `detected` and `exited` are
    /// the check failure and handler exit indices.
    #[allow(clippy::too_many_arguments)]
    pub fn tag_comm_scenario(
        &self,
        trace: &[TraceEvent],
        t0: u64,
        ctx: usize,
        src: u32,
        dst: Option<u32>,
        detected: Option<u64>,
        exited: Option<u64>,
    ) -> CommScenario {
        let img = &self.image;
        let producers: BTreeSet<BlockRef> = [Some(src), dst]
            .into_iter()
            .flatten()
            .filter_map(|b| match img.block_owner(b) {
                Owner::Thread(t) => Some(BlockRef::new(t, img.block_label(b))),
                Owner::Handler => None,
            })
            .collect();
        let arcs: Vec<_> = self.dgmp.comm_arcs.iter().filter(|a| producers.contains(&a.def)).collect();
        if arcs.is_empty() {
            return CommScenario::None;
        }
        let vars: BTreeSet<u32> = arcs.iter().filter_map(|a| img.global_id(&a.var)).collect();
        let consumers: BTreeSet<u32> = arcs
            .iter()
            .filter_map(|a| img.block_id(Owner::Thread(a.usage.tid), &a.usage.block))
            .collect();
        let td = detected.unwrap_or(u64::MAX);
        let te = exited.unwrap_or(u64::MAX);
        let mut corrupted: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        let mut reads = Vec::new();
        for e in trace.iter().filter(|e| e.dyn_instr_index >= t0) {
            let Payload::Var { var, elem, .. } = e.payload else { continue };
            if !vars.contains(&var) {
                continue;
            }
            match e.kind {
                EventKind::SharedWrite if e.tid == ctx && e.dyn_instr_index < td => {
                    corrupted.entry((var, elem)).or_insert(e.dyn_instr_index);
                }
                EventKind::SharedRead if e.tid != ctx && consumers.contains(&e.block) && e.dyn_instr_index > t0 => {
                    reads.push((e.dyn_instr_index, var, elem));
                }
                _ => {}
            }
        }
        if reads.is_empty() {
            return CommScenario::S1;
        }
        let dirty = reads
            .iter()
            .any(|(i, v, el)| *i < td && corrupted.get(&(*v, *el)).is_some_and(|w| w < i));
        if dirty {
            CommScenario::S4
        } else if reads.iter().any(|(i, ..)| *i < te) {
            CommScenario::S3
        } else {
            CommScenario::S2
        }
    }

    /// Replay every fault (in parallel) and aggregate.
    pub fn run_campaign(&self, faults: &[FaultSpec]) -> Result<CampaignReport, CampaignError> {
        let mut outcomes = faults
            .par_iter()
            .map(|f| self.inject_and_classify(f))
            .collect::<Result<Vec<_>, _>>()?;
        outcomes.sort_by(|a, b| a.fault.seed.cmp(&b.fault.seed).then_with(|| a.fault.cmp(&b.fault)));
        Ok(CampaignReport::aggregate(self, outcomes))
    }
}

pub fn sample_faults(c: &Campaign<'_>, n: usize, seed: u64, mix: &Mix, domain: Domain) -> Result<Sampled, CampaignError> {
    c.sample_faults(n, seed, mix, domain)
}

pub fn inject_and_classify(c: &Campaign<'_>, f: &FaultSpec) -> Result<InjectionOutcome, CampaignError> {
    c.inject_and_classify(f)
}

pub fn run_campaign(c: &Campaign<'_>, faults: &[FaultSpec]) -> Result<CampaignReport, CampaignError> {
    c.run_campaign(faults)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Detected (corrected or not) over activated.
    pub detected_of_activated: f64,
    pub corrected_of_activated: f64,
    /// Correct output (benign or corrected) over activated.
    pub correct_of_activated: f64,
    pub correct_of_all: f64,
    pub wrong_of_activated: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub program: String,
    pub mode: Mode,
    pub shadow_policy: ShadowPolicy,
    pub quantum: u64,
    pub sched_seed: u64,
    pub injections: usize,
    pub activated: usize,
    pub models: BTreeMap<FaultModel, usize>,
    pub classes: BTreeMap<OutcomeClass, usize>,
    /// Percent of activated injections per class.
    pub class_percent: BTreeMap<OutcomeClass, f64>,
    pub coverage: Coverage,
    pub cfe_kinds: BTreeMap<CfeKind, usize>,
    pub comm_scenarios: BTreeMap<CommScenario, usize>,
    pub undetectable_pairs_hit: usize,
    pub latency: LatencyStats,
    pub latency_counts: String,
    pub overhead: Overhead,
    #[serde(skip)]
    pub outcomes: Vec<InjectionOutcome>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl CampaignReport {
    fn aggregate(c: &Campaign<'_>, outcomes: Vec<InjectionOutcome>) -> Self {
        let act: Vec<&InjectionOutcome> = outcomes.iter().filter(|o| o.activated).collect();
        let mut classes: BTreeMap<OutcomeClass, usize> = OutcomeClass::ALL.iter().map(|k| (*k, 0)).collect();
        for o in &act {
            *classes.get_mut(&o.class).expect("all classes") += 1;
        }
        let n_act = act.len();
        let count = |f: &dyn Fn(&InjectionOutcome) -> bool| act.iter().filter(|o| f(o)).count();
        let detected = count(&|o| o.detection_latency.is_some());
        let corrected = classes[&OutcomeClass::DetectedCorrected];
        let correct = count(&|o| o.class.is_correct());
        let correct_all = outcomes.iter().filter(|o| o.class.is_correct()).count();
        let mut models: BTreeMap<FaultModel, usize> = BTreeMap::new();
        for o in &outcomes {
            *models.entry(o.fault.model).or_default() += 1;
        }
        let mut cfe_kinds = BTreeMap::new();
        let mut comm_scenarios = BTreeMap::new();
        for o in &act {
            *cfe_kinds.entry(o.cfe_kind).or_default() += 1;
            *comm_scenarios.entry(o.comm_scenario).or_default() += 1;
        }
        CampaignReport {
            program: c.ip.program.name.clone(),
            mode: c.ip.mode,
            shadow_policy: c.ip.shadow_policy,
            quantum: c.cfg.quantum,
            sched_seed: c.cfg.seed,
            injections: outcomes.len(),
            activated: n_act,
            models,
            class_percent: classes.iter().map(|(k, v)| (*k, 100.0 * ratio(*v, n_act))).collect(),
            classes,
            coverage: Coverage {
                detected_of_activated: ratio(detected, n_act),
                corrected_of_activated: ratio(corrected, n_act),
                correct_of_activated: ratio(correct, n_act),
                correct_of_all: ratio(correct_all, outcomes.len()),
                wrong_of_activated: ratio(n_act - correct, n_act),
            },
            cfe_kinds,
            comm_scenarios,
            undetectable_pairs_hit: act.iter().filter(|o| o.undetectable_pair).count(),
            latency: latency_stats(&outcomes),
            latency_counts: "all executed instructions, instrumentation included".into(),
            overhead: c.overhead,
            outcomes,
        }
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per injection.
    pub fn to_csv(&self) -> String {
        outcomes_csv(&self.outcomes)
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    id: u64,
    model: FaultModel,
    trigger: u64,
    target: String,
    activated: bool,
    class: OutcomeClass,
    cfe_kind: CfeKind,
    source: &'a str,
    dest: &'a str,
    detection_latency: Option<u64>,
    correction_latency: Option<u64>,
    lat_detection: Option<u64>,
    lat_handler: Option<u64>,
    lat_restore: Option<u64>,
    lat_transfer: Option<u64>,
    comm_scenario: CommScenario,
    undetectable_pair: bool,
    into_critical: bool,
    into_handler: bool,
    memory_clean: bool,
    trap: &'a str,
}

/// Column names of the per-injection CSV.
pub const CSV_COLUMNS: [&str; 21] = [
    "id",
    "model",
    "trigger",
    "target",
    "activated",
    "class",
    "cfe_kind",
    "source",
    "dest",
    "detection_latency",
    "correction_latency",
    "lat_detection",
    "lat_handler",
    "lat_restore",
    "lat_transfer",
    "comm_scenario",
    "undetectable_pair",
    "into_critical",
    "into_handler",
    "memory_clean",
    "trap",
];

pub fn outcomes_csv(outcomes: &[InjectionOutcome]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("header writes");
    for o in outcomes {
        let c = o.components;
        w.serialize(CsvRow {
            id: o.fault.seed,
            model: o.fault.model,
            trigger: o.fault.trigger,
            target: o.fault.target.as_ref().map(|t| t.to_string()).unwrap_or_default(),
            activated: o.activated,
            class: o.class,
            cfe_kind: o.cfe_kind,
            source: o.source.as_deref().unwrap_or(""),
            dest: o.dest.as_deref().unwrap_or(""),
            detection_latency: o.detection_latency,
            correction_latency: o.correction_latency,
            lat_detection: c.map(|c| c.detection),
            lat_handler: c.map(|c| c.handler),
            lat_restore: c.map(|c| c.restore),
            lat_transfer: c.map(|c| c.transfer),
            comm_scenario: o.comm_scenario,
            undetectable_pair: o.undetectable_pair,
            into_critical: o.into_critical,
            into_handler: o.into_handler,
            memory_clean: o.memory_clean,
            trap: o.trap.as_deref().unwrap_or(""),
        })
        .expect("row serializes");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
}

