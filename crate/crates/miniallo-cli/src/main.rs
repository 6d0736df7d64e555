//! `miniallo` command-line driver.
//!
//! Orchestrates parse → schedule → compose → size → build, then hands
//! the result to the simulator, the HLS emitter, or the reporters.
//!
//! Exit codes: 0 success, 1 user error (bad input, failed check),
//! 2 internal invariant failure.

use clap::{Args, Parser, Subcommand};
use miniallo::diag::{Diag, Severity};
use miniallo::ir::IrModule;
use miniallo::sched::Schedule;
use miniallo::schfile::{self, BuildTarget};
use miniallo::sim::{self, TensorValue};
use miniallo::{hls, perf, stream};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "miniallo",
    version,
    about = "A small accelerator-design compiler: typed kernels, schedule scripts, simulation, and HLS emission"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Kernel source file (.adl)
    kernel: String,
    /// Schedule script (.sch) to apply
    #[arg(long)]
    schedule: Option<String>,
    /// Function to operate on (defaults to the scheduled function, else
    /// `top`, else the only function in the module)
    #[arg(long)]
    func: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Apply a schedule and emit the built design
    Build {
        #[command(flatten)]
        common: Common,
        /// Output language (`hls` for C++; omit for canonical IR text)
        #[arg(long)]
        emit: Option<String>,
        /// Output file (default: stdout)
        #[arg(short, long)]
        output: Option<String>,
    },
    /// Run the functional or dataflow simulator
    Sim {
        #[command(flatten)]
        common: Common,
        /// Tensor input file; missing arguments are zero-initialized
        #[arg(long)]
        input: Option<String>,
        /// Seed for randomly generated inputs when no file is given
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use the cycle-stepped dataflow interpreter
        #[arg(long)]
        dataflow: bool,
        /// Cycle budget for the dataflow interpreter
        #[arg(long, default_value_t = 10_000_000)]
        cycle_limit: u64,
    },
    /// Differentially test the scheduled design against the unscheduled kernel
    Check {
        #[command(flatten)]
        common: Common,
        /// Number of random trials
        #[arg(long, default_value_t = 20)]
        trials: u64,
        /// Seed for input generation
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cycle budget per dataflow trial
        #[arg(long, default_value_t = 10_000_000)]
        cycle_limit: u64,
    },
    /// Print performance, FIFO, or layout reports
    Report {
        #[command(flatten)]
        common: Common,
        /// Estimated latency and pipeline initiation intervals
        #[arg(long)]
        perf: bool,
        /// Derived stream rates and FIFO depths
        #[arg(long)]
        fifo: bool,
        /// Memory partition layouts after unification
        #[arg(long)]
        layout: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(d) => {
            eprintln!("error: {d}");
            match d.severity {
                Severity::User => ExitCode::from(1),
                Severity::Internal => ExitCode::from(2),
            }
        }
    }
}

/// The compiled kernel plus, when a script was given, the built schedule.
struct Loaded {
    pristine: IrModule,
    program: IrModule,
    schedule: Option<Schedule>,
    target: Option<BuildTarget>,
}

fn read_file(path: &str) -> miniallo::Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Diag::user_nospan(format!("cannot read `{path}`: {e}")))
}

fn load(common: &Common) -> miniallo::Result<Loaded> {
    let src = read_file(&common.kernel)?;
    let pristine = miniallo::check::compile_source(&common.kernel, &src)?;
    match &common.schedule {
        None => Ok(Loaded {
            program: pristine.clone(),
            pristine,
            schedule: None,
            target: None,
        }),
        Some(path) => {
            let script = read_file(path)?;
            let out = schfile::run_script(&pristine, &script, path)?;
            Ok(Loaded {
                pristine,
                program: out.schedule.program().clone(),
                target: Some(out.target),
                schedule: Some(out.schedule),
            })
        }
    }
}

/// Pick the function a command operates on.
fn pick_func(l: &Loaded, common: &Common) -> miniallo::Result<String> {
    if let Some(f) = &common.func {
        l.program.expect_func(f)?;
        return Ok(f.clone());
    }
    if let Some(s) = &l.schedule {
        return Ok(s.target().to_string());
    }
    if l.program.funcs.len() == 1 {
        return Ok(l.program.funcs[0].name.clone());
    }
    if l.program.func("top").is_some() {
        return Ok("top".to_string());
    }
    Err(Diag::user_nospan(
        "module has several functions; pick one with --func",
    ))
}

fn write_out(text: &str, output: Option<&str>) -> miniallo::Result<()> {
    match output {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Diag::user_nospan(format!("cannot write `{path}`: {e}"))),
    }
}

fn run(cli: Cli) -> miniallo::Result<()> {
    match cli.cmd {
        Cmd::Build { common, emit, output } => {
            let l = load(&common)?;
            let want_hls = match emit.as_deref() {
                Some("hls") => true,
                Some("ir") => false,
                Some(other) => {
                    return Err(Diag::user_nospan(format!(
                        "unknown emit target `{other}` (expected hls or ir)"
                    )))
                }
                None => l.target == Some(BuildTarget::Hls),
            };
            let text = if want_hls {
                let hash = l.schedule.as_ref().map(|s| s.schedule_hash());
                hls::emit(&l.program, hash.as_deref())?
            } else {
                l.program.render()
            };
            write_out(&text, output.as_deref())
        }
        Cmd::Sim { common, input, seed, dataflow, cycle_limit } => {
            let l = load(&common)?;
            let func = pick_func(&l, &common)?;
            let args = gather_args(&l.program, &func, input.as_deref(), seed)?;
            let out = if dataflow {
                let (out, stalls) = sim::run_dataflow(&l.program, &func, &args, cycle_limit)?;
                if stalls.deadlocked {
                    return Err(Diag::user_nospan(format!(
                        "`{func}` deadlocked after {} cycles ({} blocked reads, {} blocked writes)",
                        stalls.cycles,
                        total(&stalls.blocked_reads),
                        total(&stalls.blocked_writes)
                    ))
                    .with_rule("deadlock"));
                }
                eprintln!("cycles: {}", stalls.cycles);
                out
            } else {
                sim::run(&l.program, &func, &args)?
            };
            let f = l.program.expect_func(&func)?;
            let mut named: Vec<(String, TensorValue)> = f
                .params
                .iter()
                .zip(out.args.iter())
                .map(|(p, v)| (p.name.clone(), v.clone()))
                .collect();
            if let (Some(r), Some(v)) = (&f.result, &out.result) {
                named.push((r.name.clone(), v.clone()));
            }
            print!("{}", sim::write_tensors(&named));
            Ok(())
        }
        Cmd::Check { common, trials, seed, cycle_limit } => {
            if common.schedule.is_none() {
                return Err(Diag::user_nospan(
                    "check needs --schedule: it compares the scheduled design against the unscheduled kernel",
                ));
            }
            let l = load(&common)?;
            let func = pick_func(&l, &common)?;
            let base = baseline_name(&l, &func);
            sim::equivalent(&l.pristine, &base, &l.program, &func, trials, seed)?;
            // Functional agreement is necessary but not sufficient for a
            // dataflow design: finite FIFO depths can still deadlock, so
            // step a few trials through the cycle-accurate interpreter.
            let df_trials = trials.min(5);
            if l.program.expect_func(&func)?.dataflow {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for t in 0..df_trials {
                    let args = random_args(&l.program, &func, &mut rng)?;
                    let (_, stalls) =
                        sim::run_dataflow(&l.program, &func, &args, cycle_limit)?;
                    if stalls.deadlocked {
                        return Err(Diag::user_nospan(format!(
                            "`{func}` deadlocked on trial {t} after {} cycles ({} blocked reads, {} blocked writes)",
                            stalls.cycles,
                            total(&stalls.blocked_reads),
                            total(&stalls.blocked_writes)
                        ))
                        .with_rule("deadlock"));
                    }
                }
            }
            println!("check passed: {trials} trials");
            Ok(())
        }
        Cmd::Report { common, perf: want_perf, fifo, layout } => {
            if !(want_perf || fifo || layout) {
                return Err(Diag::user_nospan(
                    "report needs at least one of --perf, --fifo, --layout",
                ));
            }
            let l = load(&common)?;
            let func = pick_func(&l, &common)?;
            if want_perf {
                report_perf(&l, &func)?;
            }
            if fifo {
                report_fifo(&l.program, &func)?;
            }
            if layout {
                report_layout(&l.program);
            }
            Ok(())
        }
    }
}

fn total(counts: &[(String, u64)]) -> u64 {
    counts.iter().map(|(_, c)| c).sum()
}

/// When the script customized a template, the built function keeps the
/// template's name, which no longer exists in the pristine module; fall
/// back to any instance of that template for the baseline.
fn baseline_name(l: &Loaded, func: &str) -> String {
    if l.pristine.func(func).is_some() {
        return func.to_string();
    }
    l.pristine
        .funcs
        .iter()
        .find(|f| f.template.as_deref() == Some(func))
        .map(|f| f.name.clone())
        .unwrap_or_else(|| func.to_string())
}

fn gather_args(
    m: &IrModule,
    func: &str,
    input: Option<&str>,
    seed: u64,
) -> miniallo::Result<Vec<TensorValue>> {
    let f = m.expect_func(func)?;
    match input {
        Some(path) => {
            let text = read_file(path)?;
            let given = sim::read_tensors(path, &text)?;
            for (name, _) in &given {
                if !f.params.iter().any(|p| &p.name == name) {
                    return Err(Diag::user_nospan(format!(
                        "input tensor `{name}` does not match any parameter of `{func}`"
                    )));
                }
            }
            Ok(f.params
                .iter()
                .map(|p| {
                    given
                        .iter()
                        .find(|(n, _)| n == &p.name)
                        .map(|(_, v)| {
                            if v.ty == p.ty {
                                Ok(v.clone())
                            } else {
                                Err(Diag::user_nospan(format!(
                                    "input tensor `{}` has the wrong type for `{func}`",
                                    p.name
                                )))
                            }
                        })
                        .unwrap_or_else(|| Ok(TensorValue::zero(p.ty.clone())))
                })
                .collect::<miniallo::Result<Vec<_>>>()?)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_args(m, func, &mut rng)
        }
    }
}

fn random_args(
    m: &IrModule,
    func: &str,
    rng: &mut ChaCha8Rng,
) -> miniallo::Result<Vec<TensorValue>> {
    let f = m.expect_func(func)?;
    Ok(f.params
        .iter()
        .map(|p| sim::random_value(rng, &p.ty))
        .collect())
}

fn report_perf(l: &Loaded, func: &str) -> miniallo::Result<()> {
    let cfg = perf::LatencyConfig::default();
    let rep = perf::latency(&l.program, func, &cfg)?;
    println!("perf {func}: estimated latency {} cycles", rep.total);
    for p in &rep.pipelines {
        println!(
            "  pipeline {}:{} requested II={} achieved II={}",
            p.func, p.loop_, p.requested, p.achieved
        );
    }
    if l.schedule.is_some() {
        let base = baseline_name(l, func);
        if let Ok(s) = perf::speedup(&l.pristine, &l.program, &base, &cfg) {
            println!("  speedup vs unscheduled: {s:.2}x");
        }
    }
    Ok(())
}

fn report_fifo(m: &IrModule, func: &str) -> miniallo::Result<()> {
    let g = stream::derive_rates(m, func)?;
    let eff = stream::propagate_ii(&g)?;
    for (stage, ii) in g.stages.iter().zip(eff.iter()) {
        println!(
            "fifo {func}: stage {} rate C={} II={} effective II={}",
            stage.name, stage.c, stage.ii, ii
        );
    }
    for e in stream::size_fifos(&g)? {
        println!(
            "fifo {func}: stream {} {} -> {} volume={} depth={}",
            e.stream, e.src, e.dst, e.spec.v, e.depth
        );
    }
    Ok(())
}

fn report_layout(m: &IrModule) {
    for f in &m.funcs {
        for d in f.decls() {
            if !d.layout.is_top() {
                println!("layout {}:{} {}", f.name, d.name, d.layout);
            }
        }
    }
}
