//! `crmp`: command-line front end for the toolkit.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 validation failure,
//! 3 runtime trap or timeout.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use crmp_core::campaign::{Campaign, CampaignReport, Domain, Mix};
use crmp_core::depgraph::{build_dgmp, to_dot};
use crmp_core::instrument::{instrument, prepare, InstrumentedProgram, Mode, ShadowPolicy};
use crmp_core::ir::{parse_program, serialize, validate_user_program, Program};
use crmp_core::metrics::{emit_report, table_summary, CccDenominator, MetricsConfig};
use crmp_core::verify::{enumerate_and_check, DestKind, VerifyConfig};
use crmp_core::vm::{FaultModel, FaultSpec, Image, Outcome, SchedConfig};
use crmp_core::workloads::{generate, BenchKind, BenchSpec};

#[derive(Parser)]
#[command(name = "crmp", version, about = "Control-flow error detection and recovery toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and validate a program, printing its canonical text.
    Parse { file: PathBuf },
    /// Dump the dependency graph as DOT.
    Graphs { file: PathBuf },
    /// Instrument a program.
    Instrument {
        file: PathBuf,
        #[command(flatten)]
        inst: InstArgs,
        /// Write the signature sidecar JSON here.
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run a program on the simulator.
    Run {
        file: PathBuf,
        #[command(flatten)]
        inst: InstArgs,
        #[command(flatten)]
        sched: SchedArgs,
        /// Print the event trace as NDJSON on stdout; the summary goes to stderr.
        #[arg(long)]
        trace: bool,
    },
    /// Replay one fault and print its classification.
    Inject {
        file: PathBuf,
        /// `<model>@<trigger>[-><t<tid>|h>/<block>+<offset>]`
        #[arg(long)]
        fault: String,
        #[command(flatten)]
        inst: InstArgs,
        #[command(flatten)]
        sched: SchedArgs,
    },
    /// Sample faults, replay them and write per-mode reports.
    Campaign(CampaignArgs),
    /// Combine campaign reports into cost and efficiency tables.
    Report {
        /// Campaign JSON files.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value = "unit-sum")]
        ccc: CccDenominator,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Enumerate every illegal transfer of a small program.
    Verify {
        #[arg(long)]
        program: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        bound: u64,
        /// Destination kinds: entry, mid_body, instrumentation, handler.
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<DestKind>>,
        #[arg(long, default_value_t = 1)]
        quantum: u64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Benchmark program generators.
    Bench {
        #[command(subcommand)]
        cmd: BenchCmd,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Emit a benchmark program as IR text.
    Gen {
        #[command(flatten)]
        bench: BenchArgs,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct InstArgs {
    #[arg(long, default_value = "crmp")]
    mode: Mode,
    #[arg(long, default_value = "globals")]
    shadow: ShadowPolicy,
}

#[derive(Args)]
struct SchedArgs {
    #[arg(long, default_value_t = 50)]
    quantum: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_steps: Option<u64>,
}

impl SchedArgs {
    fn config(&self) -> SchedConfig {
        let mut c = SchedConfig {
            quantum: self.quantum,
            seed: self.seed,
            ..SchedConfig::default()
        };
        if let Some(m) = self.max_steps {
            c.max_steps = m;
        }
        c
    }
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    kind: BenchKind,
    #[arg(long)]
    size: Option<usize>,
    /// Input data seed.
    #[arg(long = "seed", default_value_t = 1)]
    data_seed: u64,
    /// Slave thread cap (matmul).
    #[arg(long)]
    threads: Option<usize>,
}

impl BenchArgs {
    fn spec(&self) -> Result<BenchSpec, Failure> {
        let mut s = BenchSpec::new(self.kind, self.data_seed);
        if let Some(n) = self.size {
            s.size = n;
        }
        if let Some(t) = self.threads {
            s.threads = t;
        }
        s.check().map_err(|e| Failure::Usage(anyhow!(e)))?;
        Ok(s)
    }
}

#[derive(Args)]
struct CampaignArgs {
    /// Program file; omit when using --bench.
    file: Option<PathBuf>,
    /// Generate a benchmark instead of reading a file: qs, mm or ll.
    #[arg(long)]
    bench: Option<BenchKind>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Extra inter-thread-switch injections on top of `n`.
    #[arg(long, default_value_t = 0)]
    inter: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// `equal`, `inter` or `model=weight,...`.
    #[arg(long, default_value = "equal")]
    mix: Mix,
    /// Fault positions: original or all.
    #[arg(long, default_value = "original")]
    domain: Domain,
    /// Modes to run, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "crmp,bcp")]
    modes: Vec<Mode>,
    #[arg(long, default_value = "globals")]
    shadow: ShadowPolicy,
    #[arg(long, default_value_t = 50)]
    quantum: u64,
    #[arg(long, default_value_t = 0)]
    sched_seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

enum Failure {
    Usage(anyhow::Error),
    Invalid(anyhow::Error),
    Trap(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.into())
    }
}

fn read_source(path: &Path) -> Result<String, Failure> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        return Ok(s);
    }
    std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Usage)
}

fn load(path: &Path) -> Result<Program, Failure> {
    let src = read_source(path)?;
    let p = parse_program(&src).map_err(|e| Failure::Invalid(anyhow!("{}: {e}", path.display())))?;
    let diags = validate_user_program(&p);
    if !diags.is_empty() {
        let msg: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(Failure::Invalid(anyhow!("{}:\n  {}", path.display(), msg.join("\n  "))));
    }
    Ok(p)
}

fn instrumented(p: &Program, a: &InstArgs) -> Result<InstrumentedProgram, Failure> {
    instrument(p, a.mode, a.shadow).map_err(|e| Failure::Invalid(e.into()))
}

fn emit(out: Option<&Path>, body: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, body).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{body}"),
    }
    Ok(())
}

fn run_cmd(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Parse { file } => {
            let p = load(&file)?;
            print!("{}", serialize(&p));
        }
        Cmd::Graphs { file } => {
            let p = prepare(&load(&file)?).map_err(|e| Failure::Invalid(e.into()))?;
            print!("{}", to_dot(&build_dgmp(&p)));
        }
        Cmd::Instrument {
            file,
            inst,
            sidecar,
            out,
        } => {
            let ip = instrumented(&load(&file)?, &inst)?;
            emit(out.as_deref(), &serialize(&ip.program))?;
            if let Some(s) = sidecar {
                std::fs::write(&s, ip.sidecar_json()).with_context(|| format!("writing {}", s.display()))?;
            }
        }
        Cmd::Run {
            file,
            inst,
            sched,
            trace,
        } => {
            let ip = instrumented(&load(&file)?, &inst)?;
            let img = Image::compile(&ip.program).map_err(|e| Failure::Invalid(e.into()))?;
            let cfg = SchedConfig { trace, ..sched.config() };
            let r = img.run(&cfg);
            let summary = serde_json::json!({
                "outcome": match &r.outcome {
                    Outcome::Completed => "completed".to_string(),
                    Outcome::Trap(t) => format!("trap: {t}"),
                    Outcome::Timeout => "timeout".to_string(),
                },
                "output": r.output,
                "dyn_instr_total": r.dyn_instr_total,
                "per_thread": r.per_thread,
            });
            if trace {
                print!("{}", img.trace_ndjson(&r.trace));
                eprintln!("{summary}");
            } else {
                println!("{summary}");
            }
            match r.outcome {
                Outcome::Completed => {}
                Outcome::Trap(t) => return Err(Failure::Trap(t.to_string())),
                Outcome::Timeout => return Err(Failure::Trap("step budget exhausted".into())),
            }
        }
        Cmd::Inject {
            file,
            fault,
            inst,
            sched,
        } => {
            let f: FaultSpec = fault.parse().map_err(|e: String| Failure::Usage(anyhow!(e)))?;
            let ip = instrumented(&load(&file)?, &inst)?;
            let c = Campaign::new(&ip, &sched.config()).map_err(|e| Failure::Trap(e.to_string()))?;
            let o = c.inject_and_classify(&f).map_err(|e| Failure::Usage(e.into()))?;
            println!("{}", serde_json::to_string_pretty(&o).expect("outcome serializes"));
        }
        Cmd::Campaign(a) => campaign(a)?,
        Cmd::Report {
            reports,
            alpha,
            ccc,
            out,
        } => {
            let mc = MetricsConfig::new(alpha, ccc).map_err(|e| Failure::Usage(e.into()))?;
            let mut rs = Vec::new();
            for p in &reports {
                let s = read_source(p)?;
                rs.push(CampaignReport::from_json(&s).with_context(|| format!("reading report {}", p.display()))?);
            }
            emit_report(&rs, &mc, &out)?;
            print!("{}", table_summary(&rs, &mc));
        }
        Cmd::Verify {
            program,
            bound,
            kinds,
            quantum,
            out,
        } => {
            let ip = instrumented(
                &load(&program)?,
                &InstArgs {
                    mode: Mode::Crmp,
                    shadow: ShadowPolicy::Globals,
                },
            )?;
            let mut cfg = VerifyConfig {
                bound,
                ..VerifyConfig::default()
            };
            cfg.sched.quantum = quantum;
            if let Some(k) = kinds {
                cfg.kinds = k;
            }
            let t = enumerate_and_check(&ip, &cfg).map_err(|e| Failure::Usage(e.into()))?;
            emit(out.as_deref(), &t.to_csv())?;
            eprintln!("{}", serde_json::to_string_pretty(&t.summary).expect("summary serializes"));
            let misses = t.misses().len();
            if misses > 0 {
                return Err(Failure::Invalid(anyhow!(
                    "{misses} expected-correctable transfers were not corrected"
                )));
            }
        }
        Cmd::Bench {
            cmd: BenchCmd::Gen { bench, out },
        } => {
            let p = generate(&bench.spec()?);
            emit(out.as_deref(), &serialize(&p))?;
        }
    }
    Ok(())
}

fn campaign(a: CampaignArgs) -> Result<(), Failure> {
    let p = match (&a.file, a.bench) {
        (Some(f), None) => load(f)?,
        (None, Some(kind)) => {
            let args = BenchArgs {
                kind,
                size: a.size,
                data_seed: a.data_seed,
                threads: None,
            };
            generate(&args.spec()?)
        }
        _ => return Err(Failure::Usage(anyhow!("give exactly one of a program file or --bench"))),
    };
    if a.n == 0 && a.inter == 0 {
        return Err(Failure::Usage(anyhow!("nothing to inject: --n and --inter are both 0")));
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let sched = SchedConfig {
        quantum: a.quantum,
        seed: a.sched_seed,
        ..SchedConfig::default()
    };
    for mode in &a.modes {
        let ip = instrumented(
            &p,
            &InstArgs {
                mode: *mode,
                shadow: a.shadow,
            },
        )?;
        let c = Campaign::new(&ip, &sched).map_err(|e| Failure::Trap(e.to_string()))?;
        let mut faults = Vec::new();
        if a.n > 0 {
            let s = c.sample_faults(a.n, a.seed, &a.mix, a.domain).map_err(|e| Failure::Usage(e.into()))?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            faults = s.faults;
        }
        if a.inter > 0 {
            let s = c
                .sample_faults(a.inter, a.seed.wrapping_add(1), &Mix::only(FaultModel::InterThreadSwitch), a.domain)
                .map_err(|e| Failure::Usage(e.into()))?;
            faults.extend(s.faults.into_iter().map(|mut f| {
                f.seed += a.n as u64;
                f
            }));
        }
        let r = c.run_campaign(&faults).map_err(|e| Failure::Usage(e.into()))?;
        let stem = format!("{}-{}", r.program, r.mode);
        std::fs::write(a.out.join(format!("{stem}.json")), r.to_json())?;
        std::fs::write(a.out.join(format!("{stem}.csv")), r.to_csv())?;
        println!(
            "{stem}: {} injections, {} activated, correct {:.1}% of activated",
            r.injections,
            r.activated,
            100.0 * r.coverage.correct_of_activated
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run_cmd(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Invalid(e)) => {
            eprintln!("invalid: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Trap(t)) => {
            eprintln!("trap: {t}");
            ExitCode::from(3)
        }
    }
}
