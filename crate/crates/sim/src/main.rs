use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cond_sim::bench::{bench_scaling, write_bench_csv};
use cond_sim::report::report_csv;
use cond_sim::scenario::{OperatorSpec, StepSpec};
use cond_sim::verify;
use cond_sim::{load_scenario, run, RunConfig, SimError, SolverKind};

#[derive(Parser)]
#[command(name = "cond", version, about = "Contact dynamics scenarios, benchmarks and self-checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write per-step metrics as CSV.
    Run(RunArgs),
    /// Time the solver over lattice sizes and fit the scaling exponent.
    Bench(BenchArgs),
    /// Run the acceptance checks and print one line per check.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Cond,
    Pgs,
    Apgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum OperatorArg {
    Strict,
    Proximal,
    Anisotropic,
}

#[derive(Clone, Copy, ValueEnum)]
enum StepArg {
    Frobenius,
    Bb1,
    Bb2,
    BbAlt,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, value_enum, default_value = "cond")]
    solver: SolverArg,
    #[arg(long, value_enum)]
    operator: Option<OperatorArg>,
    #[arg(long = "step-matrix", value_enum)]
    step_matrix: Option<StepArg>,
    #[arg(long = "residual-tol")]
    residual_tol: Option<f64>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    #[arg(long, value_enum)]
    chebyshev: Option<Toggle>,
    /// Virtual-node gain as a multiple of median mass / step size.
    #[arg(long)]
    kv: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stop after this many steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Write zero for all timings so output is byte-reproducible.
    #[arg(long = "zero-timings")]
    zero_timings: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Run only these checks (comma separated numbers).
    #[arg(long, value_delimiter = ',')]
    only: Vec<usize>,
}

fn configure(path: &Path, a: &SolverArgs) -> Result<(cond_sim::Scenario, RunConfig), SimError> {
    let mut s = load_scenario(path)?;
    if let Some(op) = a.operator {
        s.solver.operator = match op {
            OperatorArg::Strict => OperatorSpec::Strict,
            OperatorArg::Proximal => OperatorSpec::Proximal,
            OperatorArg::Anisotropic => OperatorSpec::Anisotropic,
        };
    }
    if let Some(st) = a.step_matrix {
        s.solver.step_matrix = match st {
            StepArg::Frobenius => StepSpec::Frobenius,
            StepArg::Bb1 => StepSpec::Bb1,
            StepArg::Bb2 => StepSpec::Bb2,
            StepArg::BbAlt => StepSpec::BbAlt,
        };
    }
    if let Some(t) = a.residual_tol {
        s.solver.residual_tol = t;
    }
    if let Some(m) = a.max_iter {
        s.solver.max_iter = m;
    }
    if let Some(c) = a.chebyshev {
        s.solver.chebyshev = matches!(c, Toggle::On);
    }
    if let Some(k) = a.kv {
        s.contact.kv_scale = k;
        s.contact.kv = None;
    }
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    s.validate()?;
    let kind = match a.solver {
        SolverArg::Cond => SolverKind::Cond,
        SolverArg::Pgs => SolverKind::Pgs,
        SolverArg::Apgd => SolverKind::Apgd,
    };
    let mut cfg = RunConfig::new(kind, s.solver.to_config());
    if a.operator.is_some() {
        cfg.baseline.operator = cfg.cond.operator;
    }
    cfg.zero_timings = a.zero_timings;
    cfg.max_steps = a.steps;
    Ok((s, cfg))
}

fn run_cmd(a: &RunArgs) -> Result<ExitCode, SimError> {
    let (s, cfg) = configure(&a.scenario, &a.solver)?;
    let scene = s.build()?;
    let r = run(&scene, &cfg)?;
    if let Some(out) = &a.out {
        report_csv(&r.rows, out)?;
    }
    println!(
        "steps={} max_pen_m={:e} mean_iters={:.2} mean_solve_ms={:.4} diverged={}",
        r.rows.len(),
        r.max_penetration(),
        r.mean_iterations(),
        r.mean_solve_ms(),
        r.diverged_steps
    );
    Ok(if r.diverged_steps > 0 { ExitCode::from(3) } else { ExitCode::SUCCESS })
}

fn bench_cmd(a: &BenchArgs) -> Result<ExitCode, SimError> {
    let (s, cfg) = configure(&a.scenario, &a.solver)?;
    let rep = bench_scaling(&s, &a.sizes, &cfg)?;
    for p in &rep.points {
        println!(
            "size={} dof={} contacts={:.1} iters={:.1} solve_ms={:.4} delassus_ms={:.4}",
            p.size, p.dof, p.mean_contacts, p.mean_iters, p.solve_ms, p.delassus_ms
        );
    }
    match rep.fit {
        Some(f) => println!("exponent={:.4} r2={:.4}", f.exponent, f.r2),
        None => println!("exponent=absent"),
    }
    if let Some(out) = &a.out {
        write_bench_csv(&rep, out)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn verify_cmd(a: &VerifyArgs) -> ExitCode {
    let mut ok = true;
    for check in verify::all_checks() {
        if !a.only.is_empty() && !a.only.contains(&check.id) {
            continue;
        }
        let r = (check.run)();
        println!("{}", r.line());
        ok &= r.passed;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn init_threads() -> Result<(), SimError> {
    let Ok(v) = std::env::var("COND_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| SimError::Validation(format!("COND_THREADS must be a positive integer, got {v:?}")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| SimError::Validation(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    let res = match &cli.command {
        Command::Run(a) => run_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Verify(a) => Ok(verify_cmd(a)),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
