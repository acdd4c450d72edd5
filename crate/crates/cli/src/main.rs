//! `pufbind`: parse, run, analyze and protect control-state ASM programs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::LazyLock;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use pufbind_core::ast::{eval_term, Env, Program, Value};
use pufbind_core::interp::{run_with, MonitoredOracle, NoCtlRuntime, SeededChoices};
use pufbind_core::par::Execution;
use pufbind_core::parser::{parse_program, pretty_print, DIALECT_VERSION};
use pufbind_core::protect::{
    check_enrollment, derive_safe_condition, protect, ProtectError, ProtectedRuntime, PufModel,
    DEFAULT_ATTEMPT_BUDGET,
};
use pufbind_core::puf::{Enrollment, PufDevice, PufError};
use pufbind_core::symexec::{merge_successors, report, symbolic_step, SymInit};
use pufbind_core::verify::{
    adversarial_responses, compare_target_traces, exhaustive_safety_check, CloneExperiment,
    PufSpace, ReachSubject, Verdict,
};

const EXIT_VIOLATION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_ENROLLMENT: u8 = 3;

static VERSION: LazyLock<String> = LazyLock::new(|| {
    format!(
        "{} (formula dialect {DIALECT_VERSION})",
        env!("CARGO_PKG_VERSION")
    )
});

#[derive(Parser)]
#[command(name = "pufbind", version = VERSION.as_str(), about = "Control-state ASM toolchain with PUF binding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a program
    Parse {
        file: PathBuf,
        /// Print the canonical form instead of a summary
        #[arg(long)]
        canonical: bool,
    },
    /// Execute a program and write its trace as JSON lines
    Run {
        file: PathBuf,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        seed: u64,
        /// random:SEED, file:PATH or always-true
        #[arg(long, default_value = "always-true")]
        monitored: String,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Symbolically execute one step and report paths and condX
    Symexec {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_ctl_abstraction: bool,
    },
    /// Bind a program to a simulated device
    Protect {
        file: PathBuf,
        #[command(flatten)]
        device: DeviceArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a protected program on a (possibly different) device
    RunProtected {
        dir: PathBuf,
        #[arg(long)]
        device_seed: u64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "always-true")]
        monitored: String,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Check that no unsafe state is reachable
    Verify {
        /// Program file, or a directory written by `protect`
        path: PathBuf,
        /// Explore the whole state space instead of sampling runs
        #[arg(long)]
        exhaustive: bool,
        /// Let the PUF answer anything (protected programs)
        #[arg(long)]
        adversarial_puf: bool,
        /// Device to run a protected program on when not adversarial
        #[arg(long)]
        device_seed: Option<u64>,
        /// Sampled runs when not exhaustive
        #[arg(long, default_value_t = 100)]
        runs: u64,
        #[arg(long, default_value_t = 1000)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Compare a protected program with its original on target and clones
    Compare {
        dir: PathBuf,
        #[arg(long)]
        target_seed: u64,
        /// Comma-separated seeds or an inclusive range A..B
        #[arg(long)]
        clone_seeds: String,
        /// Run seeds used for the target comparison
        #[arg(long)]
        trials: u64,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Run seed of the clone experiment
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "random:0")]
        monitored: String,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        exec: ExecArgs,
    },
}

#[derive(Args)]
struct DeviceArgs {
    #[arg(long)]
    device_seed: u64,
    #[arg(long)]
    challenge_bits: u32,
    #[arg(long)]
    response_bits: u32,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = DEFAULT_ATTEMPT_BUDGET)]
    attempt_budget: u64,
}

#[derive(Args)]
struct ExecArgs {
    /// Process work items one at a time
    #[arg(long)]
    sequential: bool,
}

impl ExecArgs {
    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

/// A failed command: message for standard error and exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn violation(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_VIOLATION,
            message: message.into(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Outcome {
    fs::write(path, text)
        .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

fn load(path: &Path) -> Result<Program, Failure> {
    let text = read(path)?;
    parse_program(&text).map_err(|diags| {
        let file = path.display().to_string();
        Failure::usage(
            diags
                .iter()
                .map(|d| d.render(&file))
                .collect::<Vec<_>>()
                .join("\n"),
        )
    })
}

struct ProtectedDir {
    original: Program,
    program: Program,
    enrollment: Enrollment,
}

fn load_protected(dir: &Path) -> Result<ProtectedDir, Failure> {
    let program = load(&dir.join("protected.casm"))?;
    let original = load(&dir.join("original.casm"))?;
    let enrollment = Enrollment::from_json(&read(&dir.join("enrollment.json"))?)
        .map_err(|e| Failure::usage(format!("malformed enrollment: {e}")))?;
    check_enrollment(&program, &enrollment).map_err(|e| Failure::usage(e.to_string()))?;
    Ok(ProtectedDir {
        original,
        program,
        enrollment,
    })
}

fn monitored_oracle(program: &Program, policy: &str) -> Result<MonitoredOracle, Failure> {
    if policy == "always-true" {
        return Ok(MonitoredOracle::always_true(program));
    }
    if let Some(s) = policy.strip_prefix("random:") {
        let seed = s
            .parse()
            .map_err(|_| Failure::usage(format!("bad monitored seed `{s}`")))?;
        return Ok(MonitoredOracle::Random { seed });
    }
    if let Some(path) = policy.strip_prefix("file:") {
        return MonitoredOracle::scripted_from_json(program, &read(Path::new(path))?)
            .map_err(|e| Failure::usage(e.to_string()));
    }
    Err(Failure::usage(format!(
        "--monitored expects random:SEED, file:PATH or always-true, got `{policy}`"
    )))
}

fn parse_seeds(list: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::usage(format!("bad seed list `{list}`"));
    if let Some((a, b)) = list.split_once("..") {
        let (a, b): (u64, u64) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json values serialize") + "\n"
}

fn cmd_parse(file: &Path, canonical: bool) -> Outcome {
    let p = load(file)?;
    if canonical {
        print!("{}", pretty_print(&p));
    } else {
        println!(
            "{}: ok ({} functions, {} main rules, {} named rules)",
            p.name,
            p.functions.len(),
            p.main_rules.len(),
            p.named_rules.len()
        );
    }
    Ok(())
}

fn cmd_run(file: &Path, steps: u64, seed: u64, monitored: &str, trace: &Path) -> Outcome {
    let p = load(file)?;
    let oracle = monitored_oracle(&p, monitored)?;
    let t = run_with(
        &p,
        p.initial_state.clone(),
        steps,
        &oracle,
        &mut SeededChoices::new(seed),
        &mut NoCtlRuntime,
    )
    .map_err(|e| Failure::usage(e.to_string()))?;
    write(trace, &t.to_jsonl())?;
    println!("{}: {steps} steps written to {}", p.name, trace.display());
    Ok(())
}

fn cmd_symexec(file: &Path, out: &Path, abstraction: bool) -> Outcome {
    let p = load(file)?;
    let init = SymInit::with_assumptions(&p);
    let res = symbolic_step(&p, &init, abstraction).map_err(|e| Failure::usage(e.to_string()))?;
    let moving: Vec<_> = res
        .paths
        .iter()
        .filter(|x| !x.is_stutter())
        .cloned()
        .collect();
    let merged = merge_successors(&res.table, &moving);
    let condx = if abstraction {
        let c = derive_safe_condition(&p).map_err(|e| Failure::usage(e.to_string()))?;
        Some(c.condx.formula)
    } else {
        None
    };
    let raw = report(&res.table, &res.paths, condx.as_ref());
    let grouped = report(&res.table, &merged, None);
    let doc = json!({
        "program": p.name.to_string(),
        "ctlAbstraction": abstraction,
        "paths": raw["paths"],
        "merged": grouped["paths"],
        "condX": raw["condX"],
        "symbols": raw["symbols"],
    });
    write(out, &pretty(&doc))?;
    println!(
        "{}: {} paths ({} non-stutter, {} after merging)",
        p.name,
        res.paths.len(),
        moving.len(),
        merged.len()
    );
    Ok(())
}

fn cmd_protect(file: &Path, d: &DeviceArgs, out: &Path) -> Outcome {
    let p = load(file)?;
    let device = PufDevice::new(d.device_seed, d.challenge_bits, d.response_bits, d.noise)
        .map_err(|e| Failure::usage(e.to_string()))?;
    let pp = protect(&p, &device, d.attempt_budget).map_err(|e| match e {
        ProtectError::Enrollment(
            PufError::EnrollmentExhausted { .. } | PufError::NoisyReadout { .. },
        ) => Failure {
            code: EXIT_ENROLLMENT,
            message: format!("enrollment failed: {e}"),
        },
        other => Failure::usage(other.to_string()),
    })?;
    let files = [
        ("protected.casm", pp.text()),
        ("enrollment.json", pp.enrollment.to_json()),
        ("original.casm", pretty_print(&p)),
        ("provenance.json", pp.provenance_json()),
    ];
    let existed = out.exists();
    fs::create_dir_all(out)
        .map_err(|e| Failure::usage(format!("cannot create {}: {e}", out.display())))?;
    for (i, (name, text)) in files.iter().enumerate() {
        if let Err(f) = write(&out.join(name), text) {
            // leave nothing half-written behind
            for (n, _) in &files[..=i] {
                let _ = fs::remove_file(out.join(n));
            }
            if !existed {
                let _ = fs::remove_dir(out);
            }
            return Err(f);
        }
    }
    for w in &pp.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{}: {} transitions bound, written to {}",
        p.name,
        pp.enrollment.transitions.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_run_protected(
    dir: &Path,
    device_seed: u64,
    noise: f64,
    steps: u64,
    seed: u64,
    monitored: &str,
    trace: &Path,
) -> Outcome {
    let pd = load_protected(dir)?;
    let e = &pd.enrollment;
    let device = PufDevice::new(device_seed, e.challenge_bits, e.response_bits, noise)
        .map_err(|e| Failure::usage(e.to_string()))?;
    let oracle = monitored_oracle(&pd.program, monitored)?;
    let mut rt = ProtectedRuntime::new(
        &pd.program,
        e,
        PufModel::Device {
            puf: &device,
            query_seed: seed,
        },
    );
    let t = run_with(
        &pd.program,
        pd.program.initial_state.clone(),
        steps,
        &oracle,
        &mut SeededChoices::new(seed),
        &mut rt,
    )
    .map_err(|e| Failure::usage(e.to_string()))?;
    write(trace, &t.to_jsonl())?;
    let s = rt.stats;
    println!(
        "{}: {steps} steps, {} bound, {} fallbacks, {} safe stalls",
        pd.program.name, s.bound_ok, s.fallback, s.safe_stall
    );
    Ok(())
}

struct VerifyOptions {
    exhaustive: bool,
    adversarial: bool,
    device_seed: Option<u64>,
    runs: u64,
    steps: u64,
    seed: u64,
    report: Option<PathBuf>,
    exec: Execution,
}

fn cmd_verify(path: &Path, o: &VerifyOptions) -> Outcome {
    let protected = if path.is_dir() {
        Some(load_protected(path)?)
    } else {
        None
    };
    let plain;
    let device;
    let subject = match &protected {
        None => {
            plain = load(path)?;
            ReachSubject::Plain(&plain)
        }
        Some(pd) => {
            let puf = if o.adversarial {
                PufSpace::Adversarial
            } else {
                let seed = o.device_seed.ok_or_else(|| {
                    Failure::usage("protected programs need --adversarial-puf or --device-seed")
                })?;
                let e = &pd.enrollment;
                device = PufDevice::new(seed, e.challenge_bits, e.response_bits, 0.0)
                    .map_err(|e| Failure::usage(e.to_string()))?;
                PufSpace::Device(&device)
            };
            ReachSubject::Protected {
                program: &pd.program,
                enrollment: &pd.enrollment,
                puf,
            }
        }
    };
    let program = subject.program();
    let (doc, unsafe_found) = if o.exhaustive {
        let r =
            exhaustive_safety_check(&subject, o.exec).map_err(|e| Failure::usage(e.to_string()))?;
        let found = r.unsafe_reachable;
        let doc = serde_json::to_value(&r).expect("report serializes");
        println!(
            "{}: explored {} states, {} transitions, unsafe reachable: {}",
            program.name, r.explored_states, r.transition_count, r.unsafe_reachable
        );
        (doc, found)
    } else {
        let seeds: Vec<u64> = (0..o.runs).map(|k| o.seed.wrapping_add(k)).collect();
        let outcomes = o.exec.map(&seeds, |&s| sample_run(&subject, s, o.steps));
        let mut violations = Vec::new();
        for (s, r) in seeds.iter().zip(outcomes) {
            if let Some(step) = r? {
                violations.push(json!({"seed": s, "step": step}));
            }
        }
        println!(
            "{}: {} sampled runs of {} steps, {} reached an unsafe state",
            program.name,
            o.runs,
            o.steps,
            violations.len()
        );
        let found = !violations.is_empty();
        (
            json!({"runs": o.runs, "steps": o.steps, "unsafeReachable": found, "violations": violations}),
            found,
        )
    };
    if let Some(p) = &o.report {
        write(p, &pretty(&doc))?;
    }
    if unsafe_found {
        return Err(Failure::violation(format!(
            "{}: an unsafe state is reachable",
            program.name
        )));
    }
    Ok(())
}

/// First step of a seeded random run that lands in an unsafe state.
fn sample_run(subject: &ReachSubject<'_>, seed: u64, steps: u64) -> Result<Option<u64>, Failure> {
    let program = subject.program();
    let oracle = MonitoredOracle::Random { seed };
    let t = match *subject {
        ReachSubject::Plain(p) => run_with(
            p,
            p.initial_state.clone(),
            steps,
            &oracle,
            &mut SeededChoices::new(seed),
            &mut NoCtlRuntime,
        ),
        ReachSubject::Protected {
            program,
            enrollment,
            puf,
        } => {
            let candidates = adversarial_responses(enrollment);
            let model = match puf {
                PufSpace::Adversarial => PufModel::Adversarial { candidates },
                PufSpace::Device(d) => PufModel::Device {
                    puf: d,
                    query_seed: seed,
                },
            };
            let mut rt = ProtectedRuntime::new(program, enrollment, model);
            run_with(
                program,
                program.initial_state.clone(),
                steps,
                &oracle,
                &mut SeededChoices::new(seed),
                &mut rt,
            )
        }
    }
    .map_err(|e| Failure::usage(e.to_string()))?;
    for e in &t.entries {
        let mut s = program.initial_state.clone();
        s.values.extend(e.state.clone());
        if eval_term(&program.unsafe_formula, &s, &Env::new()) == Ok(Value::Bool(true)) {
            return Ok(Some(e.step));
        }
    }
    Ok(None)
}

struct CompareOptions {
    target_seed: u64,
    clone_seeds: Vec<u64>,
    trials: u64,
    steps: u64,
    noise: f64,
    seed: u64,
    monitored: String,
    report: PathBuf,
    exec: Execution,
}

fn cmd_compare(dir: &Path, o: &CompareOptions) -> Outcome {
    let pd = load_protected(dir)?;
    let e = &pd.enrollment;
    let oracle = monitored_oracle(&pd.original, &o.monitored)?;
    let target = PufDevice::new(o.target_seed, e.challenge_bits, e.response_bits, 0.0)
        .map_err(|e| Failure::usage(e.to_string()))?;
    let run_seeds: Vec<u64> = (0..o.trials).collect();
    let comparisons = o.exec.map(&run_seeds, |&s| {
        compare_target_traces(
            &pd.original,
            &pd.program,
            e,
            &target,
            o.target_seed,
            o.steps,
            &oracle,
            s,
        )
    });
    let mut target_rows = Vec::new();
    let mut mismatches = 0;
    let mut fallbacks = 0;
    for (s, c) in run_seeds.iter().zip(comparisons) {
        let c = c.map_err(|e| Failure::usage(e.to_string()))?;
        if c.verdict != Verdict::Equal {
            mismatches += 1;
        }
        fallbacks += c.fallbacks;
        let mut row = serde_json::to_value(&c).expect("comparison serializes");
        row["runSeed"] = json!(s);
        target_rows.push(row);
    }
    let exp = CloneExperiment {
        original: &pd.original,
        protected: &pd.program,
        enrollment: e,
        oracle,
        run_seed: o.seed,
        steps: o.steps,
        noise: o.noise,
    };
    let clones = exp
        .run(&o.clone_seeds, o.exec)
        .map_err(|e| Failure::usage(e.to_string()))?;
    let doc = json!({
        "target": {
            "deviceSeed": o.target_seed,
            "trials": o.trials,
            "mismatches": mismatches,
            "fallbacks": fallbacks,
            "runs": target_rows,
        },
        "clones": clones,
    });
    write(&o.report, &pretty(&doc))?;
    println!(
        "target: {}/{} equal, {fallbacks} fallbacks; clones: {}/{} diverged, {} safety violations, fallback rate {:.3}",
        o.trials - mismatches,
        o.trials,
        clones.trials_diverged,
        clones.trials,
        clones.safety_violations,
        clones.fallback_rate
    );
    if !clones.flagged_seeds.is_empty() {
        eprintln!(
            "warning: seeds {:?} behave like the enrolled device",
            clones.flagged_seeds
        );
    }
    if mismatches > 0 || clones.safety_violations > 0 {
        return Err(Failure::violation("target mismatch or safety violation"));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::Parse { file, canonical } => cmd_parse(&file, canonical),
        Command::Run {
            file,
            steps,
            seed,
            monitored,
            trace,
        } => cmd_run(&file, steps, seed, &monitored, &trace),
        Command::Symexec {
            file,
            out,
            no_ctl_abstraction,
        } => cmd_symexec(&file, &out, !no_ctl_abstraction),
        Command::Protect { file, device, out } => cmd_protect(&file, &device, &out),
        Command::RunProtected {
            dir,
            device_seed,
            noise,
            steps,
            seed,
            monitored,
            trace,
        } => cmd_run_protected(&dir, device_seed, noise, steps, seed, &monitored, &trace),
        Command::Verify {
            path,
            exhaustive,
            adversarial_puf,
            device_seed,
            runs,
            steps,
            seed,
            report,
            exec,
        } => cmd_verify(
            &path,
            &VerifyOptions {
                exhaustive,
                adversarial: adversarial_puf,
                device_seed,
                runs,
                steps,
                seed,
                report,
                exec: exec.execution(),
            },
        ),
        Command::Compare {
            dir,
            target_seed,
            clone_seeds,
            trials,
            steps,
            noise,
            seed,
            monitored,
            report,
            exec,
        } => cmd_compare(
            &dir,
            &CompareOptions {
                target_seed,
                clone_seeds: parse_seeds(&clone_seeds)?,
                trials,
                steps,
                noise,
                seed,
                monitored,
                report,
                exec: exec.execution(),
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.message);
            ExitCode::from(f.code)
        }
    }
}
