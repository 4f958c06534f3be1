//! Command-line frontend: solve single instances, run benchmark sweeps,
//! verify the install with the property-check suite, and inspect traces.
//!
//! Exit codes for `solve`: 0 converged to a stationary point, 2 hit the
//! iteration cap, 3 stalled on the objective-change test, 1 bad input.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nhtp::baselines::{htp_solve, iht_solve, BaselineConfig};
use nhtp::bench::{
    analyze_rate, export, preset, run_sweep, ExportFormat, GridCell, ProblemKind, SolverChoice,
    SweepSpec, PRESET_NAMES,
};
use nhtp::problems::{
    gen_dct_cs, gen_gaussian_cs, gen_logistic_correlated, gen_logistic_independent, load_libsvm,
    recovery_success,
};
use nhtp::solver::{read_trace_csv, solve, write_trace_csv, SolveReport, SolveStatus, SolverConfig};
use nhtp::{DenseVector, Objective};

#[derive(Parser)]
#[command(
    name = "nhtp",
    about = "Sparse optimization via Newton hard-thresholding pursuit",
    version,
    max_term_width = 100
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and print a convergence summary
    Solve(SolveArgs),
    /// Run a benchmark sweep and write CSV/JSON plus plot data
    Bench(BenchArgs),
    /// Run the property-check suite (exit 0 iff every check passes)
    Check(CheckArgs),
    /// Inspect a trace CSV written by solve --trace-out
    Trace(TraceArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    /// Gaussian sensing matrix with unit-norm columns
    Gaussian,
    /// Random partial discrete-cosine sensing matrix
    Dct,
    /// Independent two-cluster logistic data
    LogisticIndep,
    /// Autoregressive logistic data with a planted sparse parameter
    LogisticAr,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    Nhtp,
    Iht,
    Htp,
}

#[derive(Args)]
struct SolveArgs {
    /// Synthetic instance kind (alternative to --data) [default: gaussian]
    #[arg(long, value_enum, default_value = "gaussian")]
    kind: KindArg,
    /// Dimension n [default: 256]
    #[arg(long, default_value_t = 256)]
    n: usize,
    /// Sample/measurement count m [default: 64]
    #[arg(long, default_value_t = 64)]
    m: usize,
    /// Sparsity level s (required)
    #[arg(long, short)]
    s: Option<usize>,
    /// Instance seed [default: 1]
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Autoregressive correlation for logistic-ar [default: 0.5]
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    /// LIBSVM-format data file (logistic regression; overrides --kind)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Solver to run [default: nhtp]
    #[arg(long, value_enum, default_value = "nhtp")]
    solver: SolverArg,
    /// Step size: fixed step for iht/htp, initial step for nhtp
    /// [default: iht/htp 0.5; nhtp uses the dimension-based formula]
    #[arg(long)]
    eta: Option<f64>,
    /// Stationarity tolerance [default: 1e-6]
    #[arg(long)]
    tol: Option<f64>,
    /// Relative objective-change stall tolerance, 0 disables [default: 1e-6]
    #[arg(long)]
    ftol: Option<f64>,
    /// Iteration cap [default: 2000]
    #[arg(long)]
    max_iters: Option<usize>,
    /// Armijo sufficient-decrease factor [default: 5e-5]
    #[arg(long)]
    sigma: Option<f64>,
    /// Backtracking shrink factor [default: 0.5]
    #[arg(long)]
    beta: Option<f64>,
    /// Maximum backtracking steps per line search [default: 50]
    #[arg(long)]
    max_backtracks: Option<usize>,
    /// Load solver settings from a flat TOML file (flags override it)
    #[arg(long)]
    solver_config: Option<PathBuf>,
    /// Write the iteration trace as CSV
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Print only the status line
    #[arg(long, short, default_value_t = false)]
    quiet: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Named experiment preset: fig1-desk, fig2-desk, table2-desk, table3-desk
    #[arg(long)]
    preset: Option<String>,
    /// Full sweep spec as a TOML file (overrides preset and grid flags)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem kind for a flag-built sweep [default: gaussian]
    #[arg(long, value_enum, default_value = "gaussian")]
    kind: KindArg,
    /// Dimension n [default: 256]
    #[arg(long, default_value_t = 256)]
    n: usize,
    /// Comma-separated measurement counts [default: 64]
    #[arg(long, default_value = "64")]
    m_list: String,
    /// Comma-separated sparsity levels [default: 10]
    #[arg(long, default_value = "10")]
    s_list: String,
    /// Autoregressive correlation for logistic-ar cells [default: 0.5]
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    /// Trials per grid cell [default: 100]
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Comma-separated solvers, baselines take :eta [default: nhtp,iht:0.5]
    #[arg(long, default_value = "nhtp,iht:0.5")]
    solvers: String,
    /// Base seed for per-trial seed derivation [default: 1]
    #[arg(long, default_value_t = 1)]
    base_seed: u64,
    /// Worker threads; 0 uses all cores [default: env NHTP_JOBS or 0]
    #[arg(long)]
    jobs: Option<usize>,
    /// Output path prefix; writes <prefix>.csv/.json/.plot.csv [default: sweep]
    #[arg(long, default_value = "sweep")]
    out: String,
    /// Keep per-trial rows in the JSON output
    #[arg(long, default_value_t = false)]
    retain_trials: bool,
    /// Zero out wall-time columns so repeated runs are byte-identical
    #[arg(long, default_value_t = false)]
    no_timing: bool,
    /// Use the original paper-scale grids (long running)
    #[arg(long, default_value_t = false)]
    paper_scale: bool,
}

#[derive(Args)]
struct CheckArgs {
    /// Run the reduced suite (finishes in a few seconds)
    #[arg(long, default_value_t = false)]
    quick: bool,
}

#[derive(Args)]
struct TraceArgs {
    /// Trace CSV produced by solve --trace-out
    #[arg(long)]
    file: PathBuf,
    /// Fit the empirical convergence order of the residual tail
    #[arg(long, default_value_t = false)]
    rate: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap would exit 2; the input-error contract says 1
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Check(args) => cmd_check(args),
        Command::Trace(args) => cmd_trace(args),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

enum Instance {
    Cs(nhtp::problems::CsInstance),
    Logistic(nhtp::problems::LogisticInstance),
}

impl Instance {
    fn objective(&self) -> &dyn Objective {
        match self {
            Instance::Cs(i) => &i.objective,
            Instance::Logistic(i) => &i.objective,
        }
    }

    fn x_star(&self) -> Option<&DenseVector> {
        match self {
            Instance::Cs(i) => Some(&i.x_star),
            Instance::Logistic(i) => i.x_star.as_ref(),
        }
    }
}

fn build_instance(args: &SolveArgs, s: usize) -> Result<Instance, String> {
    if let Some(path) = &args.data {
        let inst = load_libsvm(path).map_err(|e| e.to_string())?;
        if s > inst.objective.dim() {
            return Err(format!(
                "sparsity {s} exceeds the data dimension {}",
                inst.objective.dim()
            ));
        }
        return Ok(Instance::Logistic(inst));
    }
    let (n, m, seed) = (args.n, args.m, args.seed);
    let check_cs = || {
        if !(s <= m && m <= n) {
            Err(format!("need s <= m <= n, got s={s} m={m} n={n}"))
        } else {
            Ok(())
        }
    };
    Ok(match args.kind {
        KindArg::Gaussian => {
            check_cs()?;
            Instance::Cs(gen_gaussian_cs(n, m, s, seed))
        }
        KindArg::Dct => {
            check_cs()?;
            Instance::Cs(gen_dct_cs(n, m, s, seed))
        }
        KindArg::LogisticIndep => Instance::Logistic(gen_logistic_independent(n, m, seed)),
        KindArg::LogisticAr => {
            if !(0.0..=1.0).contains(&args.theta) {
                return Err("theta must lie in [0, 1]".to_string());
            }
            Instance::Logistic(gen_logistic_correlated(n, m, s, args.theta, seed))
        }
    })
}

fn cmd_solve(args: SolveArgs) -> Result<ExitCode, String> {
    let s = args.s.ok_or("--s is required")?;
    if s == 0 {
        return Err("--s must be at least 1".to_string());
    }
    let instance = build_instance(&args, s)?;
    let obj = instance.objective();

    let report = match args.solver {
        SolverArg::Nhtp => {
            let mut config = match &args.solver_config {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                    let mut c: SolverConfig =
                        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
                    c.s = s;
                    c
                }
                None => SolverConfig::new(s),
            };
            if let Some(eta) = args.eta {
                config.eta0 = Some(eta);
            }
            if let Some(tol) = args.tol {
                config.tol = tol;
            }
            if let Some(ftol) = args.ftol {
                config.f_change_tol = ftol;
            }
            if let Some(mi) = args.max_iters {
                config.max_iters = mi;
            }
            if let Some(sigma) = args.sigma {
                config.sigma = sigma;
            }
            if let Some(beta) = args.beta {
                config.beta = beta;
            }
            if let Some(mb) = args.max_backtracks {
                config.max_backtracks = mb;
            }
            solve(obj, &config).map_err(|e| e.to_string())?
        }
        SolverArg::Iht | SolverArg::Htp => {
            let mut config = BaselineConfig::new(s, args.eta.unwrap_or(0.5));
            if let Some(mi) = args.max_iters {
                config.max_iters = mi;
            }
            if let Some(tol) = args.tol {
                config.tol = tol;
            }
            match (args.solver, &instance) {
                (SolverArg::Iht, _) => iht_solve(obj, &config),
                (SolverArg::Htp, Instance::Cs(i)) => {
                    htp_solve(&i.objective, &config).map_err(|e| e.to_string())?
                }
                (SolverArg::Htp, Instance::Logistic(_)) => {
                    return Err("htp requires a least-squares instance".to_string())
                }
                (SolverArg::Nhtp, _) => unreachable!(),
            }
        }
    };

    print_solve_report(&args, &instance, &report)?;
    if let Some(path) = &args.trace_out {
        let file = fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
        write_trace_csv(std::io::BufWriter::new(file), &report.trace)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        if !args.quiet {
            println!("trace written to {}", path.display());
        }
    }
    Ok(match report.status {
        SolveStatus::Stationary => ExitCode::SUCCESS,
        SolveStatus::MaxIters => ExitCode::from(2),
        SolveStatus::FChangeStalled => ExitCode::from(3),
    })
}

fn print_solve_report(
    args: &SolveArgs,
    instance: &Instance,
    report: &SolveReport,
) -> Result<(), String> {
    let status = match report.status {
        SolveStatus::Stationary => "stationary",
        SolveStatus::FChangeStalled => "stalled",
        SolveStatus::MaxIters => "max-iters",
    };
    println!("status: {status}");
    if args.quiet {
        return Ok(());
    }
    println!(
        "iterations: {} (newton {}, gradient {})",
        report.iterations, report.newton_steps, report.gradient_steps
    );
    println!("final f: {:.6e}", report.final_value);
    println!(
        "final tol: {:.6e} (residual {:.6e})",
        report.final_tol, report.final_residual
    );
    println!(
        "certificate: grad-on-support {:.3e}, off-support violation {:.3e}, passed {}",
        report.certificate.grad_on_support_norm,
        report.certificate.offsupport_violation,
        report.certificate.passed
    );
    println!("wall time: {:.3} ms", report.wall_time.as_secs_f64() * 1e3);
    if let Some(truth) = instance.x_star() {
        let err = (&report.x_final - truth).mapv(|v| v * v).sum().sqrt();
        println!(
            "recovery error: {:.3e} ({})",
            err,
            if recovery_success(&report.x_final, truth) {
                "success"
            } else {
                "miss"
            }
        );
    }
    if let Instance::Logistic(i) = instance {
        println!("logistic loss: {:.6e}", i.objective.loss(&report.x_final));
    }
    Ok(())
}

fn parse_usize_list(text: &str, what: &str) -> Result<Vec<usize>, String> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad {what} entry '{t}'"))
        })
        .collect()
}

fn parse_solvers(text: &str) -> Result<Vec<SolverChoice>, String> {
    text.split(',')
        .map(|t| {
            let t = t.trim();
            let (name, eta) = match t.split_once(':') {
                Some((name, eta)) => {
                    let eta: f64 = eta.parse().map_err(|_| format!("bad step size in '{t}'"))?;
                    (name, Some(eta))
                }
                None => (t, None),
            };
            match name {
                "nhtp" => Ok(SolverChoice::Nhtp),
                "iht" => Ok(SolverChoice::Iht { eta: eta.unwrap_or(0.5) }),
                "htp" => Ok(SolverChoice::Htp { eta: eta.unwrap_or(0.9) }),
                _ => Err(format!("unknown solver '{name}'")),
            }
        })
        .collect()
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode, String> {
    let mut spec: SweepSpec = if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
    } else if let Some(name) = &args.preset {
        preset(name, args.paper_scale).ok_or_else(|| {
            format!("unknown preset '{name}' (available: {})", PRESET_NAMES.join(", "))
        })?
    } else {
        let kind = match args.kind {
            KindArg::Gaussian => ProblemKind::GaussianCs,
            KindArg::Dct => ProblemKind::DctCs,
            KindArg::LogisticIndep => ProblemKind::LogisticIndep,
            KindArg::LogisticAr => ProblemKind::LogisticAr,
        };
        let ms = parse_usize_list(&args.m_list, "m")?;
        let ss = parse_usize_list(&args.s_list, "s")?;
        let theta = (kind == ProblemKind::LogisticAr).then_some(args.theta);
        let grid: Vec<GridCell> = ms
            .iter()
            .flat_map(|&m| ss.iter().map(move |&s| GridCell { n: args.n, m, s, theta }))
            .collect();
        SweepSpec {
            kind,
            grid,
            trials: args.trials,
            solvers: parse_solvers(&args.solvers)?,
            base_seed: args.base_seed,
            parallelism: 0,
            retain_trials: false,
            record_timing: true,
            baseline_max_iters: 3000,
        }
    };
    let jobs = match args.jobs {
        Some(j) => j,
        None => std::env::var("NHTP_JOBS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0),
    };
    spec.parallelism = jobs;
    if args.retain_trials {
        spec.retain_trials = true;
    }
    if args.no_timing {
        spec.record_timing = false;
    }

    let result = run_sweep(&spec).map_err(|e| e.to_string())?;

    println!("kind       n      m     s  solver  trials  success  mean_err    mean_iters");
    for c in &result.cells {
        println!(
            "{:<9} {:>6} {:>6} {:>4}  {:<6} {:>6}  {:>7}  {:<11} {:>9.1}",
            c.kind,
            c.n,
            c.m,
            c.s,
            c.solver,
            c.trials,
            c.success_rate.map(|r| format!("{r:.2}")).unwrap_or_else(|| "-".into()),
            c.mean_abs_error
                .map(|e| format!("{e:.3e}"))
                .unwrap_or_else(|| format!("loss {:.2e}", c.mean_loss)),
            c.mean_iters,
        );
    }

    let csv = PathBuf::from(format!("{}.csv", args.out));
    let json = PathBuf::from(format!("{}.json", args.out));
    export(&result, ExportFormat::Csv, &csv).map_err(|e| e.to_string())?;
    export(&result, ExportFormat::Json, &json).map_err(|e| e.to_string())?;
    println!(
        "wrote {}, {}, {}",
        csv.display(),
        json.display(),
        csv.with_file_name("".to_string()).join(format!("{}.plot.csv",
            csv.file_stem().unwrap_or_default().to_string_lossy())).display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(args: CheckArgs) -> Result<ExitCode, String> {
    let outcomes = nhtp::selfcheck::run(args.quick);
    let mut all = true;
    for o in &outcomes {
        println!(
            "[{}] {} — {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
        all &= o.passed;
    }
    Ok(if all { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_trace(args: TraceArgs) -> Result<ExitCode, String> {
    let file = fs::File::open(&args.file).map_err(|e| format!("{}: {e}", args.file.display()))?;
    let trace =
        read_trace_csv(std::io::BufReader::new(file)).map_err(|e| format!("{}: {e}", args.file.display()))?;
    if trace.is_empty() {
        return Err("trace contains no rows".to_string());
    }
    let newton = trace
        .iter()
        .filter(|r| r.direction_kind == Some(nhtp::solver::DirectionKind::Newton))
        .count();
    let gradient = trace
        .iter()
        .filter(|r| r.direction_kind == Some(nhtp::solver::DirectionKind::Gradient))
        .count();
    let last = trace.last().unwrap();
    println!(
        "rows: {} (newton {}, gradient {})",
        trace.len(),
        newton,
        gradient
    );
    println!(
        "last row: k={} f={:.6e} residual={:.6e} tol={:.6e}",
        last.k, last.f_val, last.residual_norm, last.tol_value
    );
    if args.rate {
        let fit = analyze_rate(&trace);
        println!(
            "rate fit: exponent {:.3}, constant {:.3e}, classification {:?} ({} window points)",
            fit.exponent,
            fit.constant,
            fit.classification,
            fit.window.len()
        );
    }
    Ok(ExitCode::SUCCESS)
}
