//! Batch front-end for the overlapping group LASSO toolkit: load or generate
//! a problem, run one solver (optionally under the adaptive outer loop), and
//! emit machine-readable traces, run reports, and certificate tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use ndarray::Array1;
use oglasso::{
    adadrops_run, detect_zero_groups_lasso, detect_zero_groups_ogn, gen_gaussian, gen_multitask,
    gen_sliding, gen_tree_groups, lambda_max_grouped, lasso_certificate, objective,
    ogn_certificate, parse_libsvm, read_groups, solve_with, AdaDropsConfig, DetectionMode,
    GroupCovering, LiftingOperator, ProblemData, RoundRecord, SolverConfig, SolverKind,
    SolverTrace, SupportCertificate, SupportState, SyntheticSpec,
};
use serde::Serialize;

/// Norms at or below this count as zero in report summaries and in the
/// certify command's ground-truth column.
const ZERO_TOL: f64 = 1e-8;

/// Relative guard band for certificate detection at computed solutions:
/// active groups sit exactly on the threshold at the optimum, so the band
/// keeps solve noise from flipping them into the certified-zero set.
const CERT_GUARD: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "oglasso", version, about = "Overlapping group LASSO solver toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance: iteration trace as JSON lines to --out, run report
    /// as JSON on stdout. Exit code 0 only on convergence.
    Solve(RunArgs),
    /// Solve to high accuracy, then score both zero-group certificates at the
    /// solution: per-group CSV to --out, summary JSON on stdout.
    Certify(RunArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GenKind {
    Sliding,
    Tree,
    Multitask,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Pd,
    Admm,
    Varpro,
}

impl SolverArg {
    fn kind(self) -> SolverKind {
        match self {
            SolverArg::Pd => SolverKind::Pd,
            SolverArg::Admm => SolverKind::Admm,
            SolverArg::Varpro => SolverKind::Varpro,
        }
    }

    fn name(self) -> &'static str {
        match self {
            SolverArg::Pd => "pd",
            SolverArg::Admm => "admm",
            SolverArg::Varpro => "varpro",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AdadropsArg {
    Off,
    Lasso,
    Ogn,
}

impl AdadropsArg {
    fn name(self) -> &'static str {
        match self {
            AdadropsArg::Off => "off",
            AdadropsArg::Lasso => "lasso",
            AdadropsArg::Ogn => "ogn",
        }
    }
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["data", "gen"])))]
#[command(group(ArgGroup::new("reg").args(["lambda", "lambda_ratio"])))]
struct RunArgs {
    /// LIBSVM-format data file (`label idx:val ...`, 1-based indices).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Group-structure file (`n N` header, then `w k i_1 ... i_k` per line);
    /// unit-weight singletons when omitted.
    #[arg(long, requires = "data")]
    groups: Option<PathBuf>,
    /// Synthetic instance family.
    #[arg(long, value_enum)]
    gen: Option<GenKind>,
    /// Group count for sliding windows; base feature count for multitask.
    #[arg(long = "N", default_value_t = 100)]
    num_groups: usize,
    /// Sliding window size.
    #[arg(long, default_value_t = 10)]
    gs: usize,
    /// Overlap between consecutive sliding windows.
    #[arg(long, default_value_t = 3)]
    os: usize,
    /// Tree depth (tree generator).
    #[arg(long, default_value_t = 4)]
    depth: usize,
    /// Children per internal node (tree generator).
    #[arg(long, default_value_t = 2)]
    fanout: usize,
    /// Task count (multitask generator).
    #[arg(long, default_value_t = 4)]
    q: usize,
    /// Absolute regularization strength.
    #[arg(long)]
    lambda: Option<f64>,
    /// Regularization relative to the all-zero threshold: lambda = lambda_max / R.
    #[arg(long, value_name = "R")]
    lambda_ratio: Option<f64>,
    #[arg(long, value_enum, default_value_t = SolverArg::Admm)]
    solver: SolverArg,
    /// Adaptive dimension-reduction outer loop with the chosen certificate.
    #[arg(long, value_enum, default_value_t = AdadropsArg::Off)]
    adadrops: AdadropsArg,
    /// Most groups added per outer round.
    #[arg(long, default_value_t = 10)]
    growth_cap: usize,
    /// Groups seeded by correlation ranking.
    #[arg(long, default_value_t = 10)]
    init_size: usize,
    /// Stop tolerance; defaults to 1e-8 for solve and 1e-10 for certify.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    max_iters: usize,
    /// Seed for all generator randomness; echoed in reports.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Primal step override (primal-dual solver only).
    #[arg(long)]
    sigma: Option<f64>,
    /// Dual step (primal-dual) or penalty (ADMM) override.
    #[arg(long)]
    tau: Option<f64>,
    /// Output path: trace.jsonl for solve, certificates.csv for certify.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Loaded {
    problem: ProblemData,
    cov: GroupCovering,
    source: String,
}

fn override_lambda(p: ProblemData, lambda: Option<f64>) -> Result<ProblemData> {
    match lambda {
        Some(l) => Ok(ProblemData::new(p.a, p.y, l)?),
        None => Ok(p),
    }
}

fn load(args: &RunArgs) -> Result<Loaded> {
    let ratio = args.lambda_ratio.unwrap_or(10.0);
    if let Some(path) = &args.data {
        let (a, y) = parse_libsvm(path, None)
            .with_context(|| format!("reading {}", path.display()))?;
        let cov = match &args.groups {
            Some(gpath) => {
                let cov =
                    read_groups(gpath).with_context(|| format!("reading {}", gpath.display()))?;
                if cov.n() != a.n() {
                    bail!(
                        "group file covers {} coordinates but the data has {}",
                        cov.n(),
                        a.n()
                    );
                }
                cov
            }
            None => GroupCovering::with_unit_weights(
                a.n(),
                (0..a.n()).map(|j| vec![j]).collect(),
            )?,
        };
        let lambda = match args.lambda {
            Some(l) => l,
            None => {
                let lam_max = lambda_max_grouped(&a, y.view(), &cov);
                if lam_max <= 0.0 {
                    bail!("lambda_max is zero for this data; pass --lambda explicitly");
                }
                lam_max / ratio
            }
        };
        let source = format!(
            "libsvm:{} groups:{}",
            path.display(),
            args.groups
                .as_ref()
                .map_or_else(|| "singletons".into(), |g| g.display().to_string()),
        );
        return Ok(Loaded { problem: ProblemData::new(a, y, lambda)?, cov, source });
    }
    let (problem, cov, source) = match args.gen.expect("clap enforces a source") {
        GenKind::Sliding => {
            let spec = SyntheticSpec {
                num_groups: args.num_groups,
                group_size: args.gs,
                overlap: args.os,
                weight: None,
                num_rows: None,
                lambda_ratio: ratio,
                seed: args.seed,
            };
            let (p, cov) = gen_sliding(&spec)?;
            let source = format!("sliding N={} gs={} os={}", args.num_groups, args.gs, args.os);
            (p, cov, source)
        }
        GenKind::Tree => {
            let cov = gen_tree_groups(args.depth, args.fanout)?;
            let p = gen_gaussian(&cov, None, ratio, args.seed)?;
            let source = format!("tree depth={} fanout={}", args.depth, args.fanout);
            (p, cov, source)
        }
        GenKind::Multitask => {
            let (p, cov) = gen_multitask(args.num_groups, args.q, None, ratio, args.seed)?;
            let source = format!("multitask n={} q={}", args.num_groups, args.q);
            (p, cov, source)
        }
    };
    Ok(Loaded { problem: override_lambda(problem, args.lambda)?, cov, source })
}

fn solver_config(args: &RunArgs, default_tol: f64) -> SolverConfig {
    SolverConfig {
        max_iters: args.max_iters,
        stop_tol: args.tol.unwrap_or(default_tol),
        sigma: args.sigma,
        tau: args.tau,
        seed: args.seed,
        ..SolverConfig::default()
    }
}

struct Outcome {
    x: Array1<f64>,
    converged: bool,
    trace: SolverTrace,
    rounds: Vec<RoundRecord>,
}

fn run_solver(
    loaded: &Loaded,
    lift: &LiftingOperator,
    args: &RunArgs,
    config: SolverConfig,
) -> Result<Outcome> {
    match args.adadrops {
        AdadropsArg::Off => {
            let res = solve_with(&loaded.problem, lift, args.solver.kind(), &config, None)?;
            Ok(Outcome { x: res.x, converged: res.converged, trace: res.trace, rounds: vec![] })
        }
        mode => {
            let option = match mode {
                AdadropsArg::Lasso => SupportCertificate::Lasso,
                _ => SupportCertificate::Ogn,
            };
            let cfg = AdaDropsConfig {
                option,
                init_size: args.init_size,
                growth_cap: args.growth_cap,
                inner: config,
                ..AdaDropsConfig::default()
            };
            let res = adadrops_run(&loaded.problem, &loaded.cov, args.solver.kind(), &cfg)?;
            // adadrops_run only returns once a round both converged and
            // certified no violations.
            Ok(Outcome { x: res.x, converged: true, trace: res.trace, rounds: res.rounds })
        }
    }
}

#[derive(Serialize)]
struct RunReport {
    schema: u32,
    command: &'static str,
    seed: u64,
    source: String,
    m: usize,
    n: usize,
    num_groups: usize,
    lambda: f64,
    solver: &'static str,
    adadrops: &'static str,
    tol: f64,
    max_iters: usize,
    converged: bool,
    iters: usize,
    objective: f64,
    residual: f64,
    /// Working dimension of the last recorded iteration.
    kappa_final: usize,
    /// Coordinates with |x_i| above the zero tolerance.
    support_coords: usize,
    /// Groups with ||x[G_t]|| above the zero tolerance.
    active_groups: usize,
    outer_rounds: usize,
    wall_time: f64,
    trace_path: String,
}

fn cmd_solve(args: &RunArgs) -> Result<ExitCode> {
    let loaded = load(args)?;
    let lift = LiftingOperator::from_covering(&loaded.cov);
    let config = solver_config(args, 1e-8);
    let tol = config.stop_tol;
    let max_iters = config.max_iters;
    let trace_path = args.out.clone().unwrap_or_else(|| PathBuf::from("trace.jsonl"));

    let started = Instant::now();
    let outcome = run_solver(&loaded, &lift, args, config)?;
    let wall_time = started.elapsed().as_secs_f64();

    let file = File::create(&trace_path)
        .with_context(|| format!("creating {}", trace_path.display()))?;
    let mut w = BufWriter::new(file);
    outcome.trace.write_jsonl(&mut w)?;
    for rec in &outcome.rounds {
        serde_json::to_writer(&mut w, rec)?;
        writeln!(w)?;
    }
    w.flush()?;

    // Terminal fields come straight from the trace so the report and the
    // trace file cannot disagree.
    let last = outcome.trace.records.last();
    let report = RunReport {
        schema: 1,
        command: "solve",
        seed: args.seed,
        source: loaded.source.clone(),
        m: loaded.problem.m(),
        n: loaded.problem.n(),
        num_groups: loaded.cov.num_groups(),
        lambda: loaded.problem.lambda,
        solver: args.solver.name(),
        adadrops: args.adadrops.name(),
        tol,
        max_iters,
        converged: outcome.converged,
        iters: last.map_or(0, |r| r.iter),
        objective: last
            .map_or_else(|| objective(&loaded.problem, &lift, outcome.x.view()), |r| r.obj),
        residual: last.map_or(0.0, |r| r.res),
        kappa_final: last
            .map(|r| r.kappa)
            .or_else(|| outcome.rounds.last().map(|r| r.kappa))
            .unwrap_or_else(|| lift.n()),
        support_coords: outcome.x.iter().filter(|v| v.abs() > ZERO_TOL).count(),
        active_groups: lift.active_groups(outcome.x.view(), ZERO_TOL).len(),
        outer_rounds: outcome.rounds.len(),
        wall_time,
        trace_path: trace_path.display().to_string(),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if outcome.converged { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

#[derive(Serialize)]
struct CertifySummary {
    schema: u32,
    command: &'static str,
    seed: u64,
    source: String,
    m: usize,
    n: usize,
    num_groups: usize,
    lambda: f64,
    solver: &'static str,
    adadrops: &'static str,
    tol: f64,
    converged: bool,
    objective: f64,
    /// Groups with ||x*[G_t]|| at or below the zero tolerance.
    true_zero_groups: usize,
    /// Strict residual-correlation detections.
    lasso_detected: usize,
    /// Strict lifted-dual detections.
    ogn_detected: usize,
    csv_path: String,
}

fn cmd_certify(args: &RunArgs) -> Result<ExitCode> {
    let loaded = load(args)?;
    let lift = LiftingOperator::from_covering(&loaded.cov);
    let config = solver_config(args, 1e-10);
    let tol = config.stop_tol;
    let outcome = run_solver(&loaded, &lift, args, config)?;

    let beta = lasso_certificate(&loaded.problem, outcome.x.view());
    let state = SupportState::of_point(&lift, outcome.x.view(), ZERO_TOL)?;
    let cert = ogn_certificate(&lift, &state, beta.view(), outcome.x.view())?;
    let beta_norms = lift.group_vec_norms(beta.view());
    let group_norms = lift.group_vec_norms(outcome.x.view());
    let guard = DetectionMode::Guarded { margin: CERT_GUARD };
    let lasso_zero = detect_zero_groups_lasso(beta.view(), &lift, guard);
    let ogn_zero = detect_zero_groups_ogn(&cert, guard);
    let mut lasso_mask = vec![false; loaded.cov.num_groups()];
    for &t in &lasso_zero {
        lasso_mask[t] = true;
    }
    let mut ogn_mask = vec![false; loaded.cov.num_groups()];
    for &t in &ogn_zero {
        ogn_mask[t] = true;
    }

    let csv_path = args.out.clone().unwrap_or_else(|| PathBuf::from("certificates.csv"));
    let file =
        File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "group,weight,beta_norm,ogn_norm,lasso_zero,ogn_zero")?;
    for t in 0..loaded.cov.num_groups() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            t,
            loaded.cov.weight(t),
            beta_norms[t],
            cert.block_norms[t],
            lasso_mask[t] as u8,
            ogn_mask[t] as u8,
        )?;
    }
    w.flush()?;

    let summary = CertifySummary {
        schema: 1,
        command: "certify",
        seed: args.seed,
        source: loaded.source.clone(),
        m: loaded.problem.m(),
        n: loaded.problem.n(),
        num_groups: loaded.cov.num_groups(),
        lambda: loaded.problem.lambda,
        solver: args.solver.name(),
        adadrops: args.adadrops.name(),
        tol,
        converged: outcome.converged,
        objective: objective(&loaded.problem, &lift, outcome.x.view()),
        true_zero_groups: group_norms.iter().filter(|&&nrm| nrm <= ZERO_TOL).count(),
        lasso_detected: lasso_zero.len(),
        ogn_detected: ogn_zero.len(),
        csv_path: csv_path.display().to_string(),
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(if outcome.converged { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args = match &cli.command {
        Command::Solve(args) | Command::Certify(args) => args,
    };
    if args.groups.is_some() && args.data.is_none() {
        Cli::command()
            .error(
                clap::error::ErrorKind::MissingRequiredArgument,
                "--groups only applies to --data problems",
            )
            .exit();
    }
    let result = match &cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Certify(args) => cmd_certify(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
