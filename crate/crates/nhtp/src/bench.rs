//! Experiment harness: seeded success-rate sweeps, error tables, rate-of-
//! convergence analysis and CSV/JSON export with plot-ready companions.
//!
//! Trials are embarrassingly parallel. Every trial derives its own seed from
//! `(base_seed, cell, trial)`, and aggregation sorts the per-trial rows
//! before reducing, so results are identical for any worker count.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{htp_solve, iht_solve, BaselineConfig};
use crate::problems::{
    gen_dct_cs, gen_gaussian_cs, gen_logistic_correlated, gen_logistic_independent,
    recovery_success, trial_seed, CsInstance, LogisticInstance,
};
use crate::solver::{
    solve, IterationRecord, SolveStatus, SolverConfig, StationarityCertificate,
};
use crate::DenseVector;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid sweep spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    GaussianCs,
    DctCs,
    LogisticIndep,
    LogisticAr,
}

impl ProblemKind {
    pub fn is_cs(self) -> bool {
        matches!(self, ProblemKind::GaussianCs | ProblemKind::DctCs)
    }

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::GaussianCs => "gaussian",
            ProblemKind::DctCs => "dct",
            ProblemKind::LogisticIndep => "logistic-indep",
            ProblemKind::LogisticAr => "logistic-ar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SolverChoice {
    Nhtp,
    Iht { eta: f64 },
    Htp { eta: f64 },
}

impl SolverChoice {
    pub fn name(&self) -> &'static str {
        match self {
            SolverChoice::Nhtp => "NHTP",
            SolverChoice::Iht { .. } => "IHT",
            SolverChoice::Htp { .. } => "HTP",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub n: usize,
    pub m: usize,
    pub s: usize,
    #[serde(default)]
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kind: ProblemKind,
    pub grid: Vec<GridCell>,
    pub trials: usize,
    pub solvers: Vec<SolverChoice>,
    #[serde(default)]
    pub base_seed: u64,
    /// Worker threads; 0 uses the default pool.
    #[serde(default)]
    pub parallelism: usize,
    /// Keep every per-trial row in the result (large for big sweeps).
    #[serde(default)]
    pub retain_trials: bool,
    /// Record wall-clock times; disable for byte-identical output files.
    #[serde(default = "default_true")]
    pub record_timing: bool,
    #[serde(default = "default_baseline_iters")]
    pub baseline_max_iters: usize,
}

fn default_true() -> bool {
    true
}
fn default_baseline_iters() -> usize {
    3000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub cell: usize,
    pub solver: String,
    pub trial: usize,
    pub success: Option<bool>,
    pub abs_error: Option<f64>,
    /// Mean logistic loss for logistic kinds, objective value for CS.
    pub loss: f64,
    pub time_s: f64,
    pub iters: usize,
    pub status: SolveStatus,
    pub cert_grad_norm: f64,
    pub cert_violation: f64,
    pub cert_passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub kind: String,
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub theta: Option<f64>,
    pub solver: String,
    pub trials: usize,
    pub success_rate: Option<f64>,
    pub mean_abs_error: Option<f64>,
    pub mean_time: f64,
    pub median_time: f64,
    pub mean_iters: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<CellStats>,
    #[serde(default)]
    pub trials: Option<Vec<TrialRecord>>,
}

enum GeneratedInstance {
    Cs(CsInstance),
    Logistic(LogisticInstance),
}

fn generate(kind: ProblemKind, cell: &GridCell, seed: u64) -> GeneratedInstance {
    match kind {
        ProblemKind::GaussianCs => GeneratedInstance::Cs(gen_gaussian_cs(cell.n, cell.m, cell.s, seed)),
        ProblemKind::DctCs => GeneratedInstance::Cs(gen_dct_cs(cell.n, cell.m, cell.s, seed)),
        ProblemKind::LogisticIndep => {
            GeneratedInstance::Logistic(gen_logistic_independent(cell.n, cell.m, seed))
        }
        ProblemKind::LogisticAr => GeneratedInstance::Logistic(gen_logistic_correlated(
            cell.n,
            cell.m,
            cell.s,
            cell.theta.unwrap_or(0.5),
            seed,
        )),
    }
}

struct TrialOutcome {
    x: DenseVector,
    iters: usize,
    status: SolveStatus,
    certificate: StationarityCertificate,
}

fn default_solver(
    inst: &GeneratedInstance,
    solver: &SolverChoice,
    cell: &GridCell,
    baseline_max_iters: usize,
) -> TrialOutcome {
    let from_report = |r: crate::solver::SolveReport| TrialOutcome {
        x: r.x_final,
        iters: r.iterations,
        status: r.status,
        certificate: r.certificate,
    };
    match (inst, solver) {
        (GeneratedInstance::Cs(i), SolverChoice::Nhtp) => {
            from_report(solve(&i.objective, &SolverConfig::new(cell.s)).expect("valid config"))
        }
        (GeneratedInstance::Logistic(i), SolverChoice::Nhtp) => {
            from_report(solve(&i.objective, &SolverConfig::new(cell.s)).expect("valid config"))
        }
        (GeneratedInstance::Cs(i), SolverChoice::Iht { eta }) => {
            let mut c = BaselineConfig::new(cell.s, *eta);
            c.max_iters = baseline_max_iters;
            from_report(iht_solve(&i.objective, &c))
        }
        (GeneratedInstance::Logistic(i), SolverChoice::Iht { eta }) => {
            let mut c = BaselineConfig::new(cell.s, *eta);
            c.max_iters = baseline_max_iters;
            from_report(iht_solve(&i.objective, &c))
        }
        (GeneratedInstance::Cs(i), SolverChoice::Htp { eta }) => {
            let mut c = BaselineConfig::new(cell.s, *eta);
            c.max_iters = baseline_max_iters;
            match htp_solve(&i.objective, &c) {
                Ok(r) => from_report(r),
                // a failed restricted solve counts as a non-success, not an abort
                Err(_) => TrialOutcome {
                    x: DenseVector::zeros(cell.n),
                    iters: 0,
                    status: SolveStatus::MaxIters,
                    certificate: StationarityCertificate {
                        grad_on_support_norm: f64::INFINITY,
                        offsupport_violation: f64::INFINITY,
                        eta_used: *eta,
                        passed: false,
                    },
                },
            }
        }
        (GeneratedInstance::Logistic(_), SolverChoice::Htp { .. }) => {
            unreachable!("spec validation rejects HTP on logistic problems")
        }
    }
}

fn validate(spec: &SweepSpec) -> Result<(), BenchError> {
    if spec.trials == 0 {
        return Err(BenchError::InvalidSpec("trials must be at least 1".into()));
    }
    if spec.grid.is_empty() {
        return Err(BenchError::InvalidSpec("grid must be non-empty".into()));
    }
    if spec.solvers.is_empty() {
        return Err(BenchError::InvalidSpec("at least one solver required".into()));
    }
    if !spec.kind.is_cs()
        && spec
            .solvers
            .iter()
            .any(|s| matches!(s, SolverChoice::Htp { .. }))
    {
        return Err(BenchError::InvalidSpec(
            "HTP requires a least-squares (CS) problem".into(),
        ));
    }
    for cell in &spec.grid {
        if cell.s == 0 || cell.s > cell.m || cell.m > cell.n {
            return Err(BenchError::InvalidSpec(format!(
                "cell (n={}, m={}, s={}) violates s <= m <= n",
                cell.n, cell.m, cell.s
            )));
        }
    }
    Ok(())
}

fn run_sweep_inner<F>(spec: &SweepSpec, run_trial: &F) -> Result<SweepResult, BenchError>
where
    F: Fn(&GeneratedInstance, &SolverChoice, &GridCell) -> TrialOutcome + Sync,
{
    validate(spec)?;
    let tasks: Vec<(usize, usize, usize)> = (0..spec.grid.len())
        .flat_map(|c| {
            (0..spec.solvers.len()).flat_map(move |s| (0..spec.trials).map(move |t| (c, s, t)))
        })
        .collect();

    let execute = |(cell_idx, solver_idx, trial): (usize, usize, usize)| {
        let cell = &spec.grid[cell_idx];
        let solver = &spec.solvers[solver_idx];
        let seed = trial_seed(spec.base_seed, cell_idx as u64, trial as u64);
        let inst = generate(spec.kind, cell, seed);
        let started = Instant::now();
        let out = run_trial(&inst, solver, cell);
        let time_s = if spec.record_timing {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        let (success, abs_error, loss) = match &inst {
            GeneratedInstance::Cs(i) => {
                let err = (&out.x - &i.x_star).mapv(|v| v * v).sum().sqrt();
                (
                    Some(recovery_success(&out.x, &i.x_star)),
                    Some(err),
                    crate::objective::Objective::value(&i.objective, &out.x),
                )
            }
            GeneratedInstance::Logistic(i) => {
                let (success, err) = match &i.x_star {
                    Some(t) => {
                        let err = (&out.x - t).mapv(|v| v * v).sum().sqrt();
                        (Some(recovery_success(&out.x, t)), Some(err))
                    }
                    None => (None, None),
                };
                (success, err, i.objective.loss(&out.x))
            }
        };
        (
            (cell_idx, solver_idx, trial),
            TrialRecord {
                cell: cell_idx,
                solver: solver.name().to_string(),
                trial,
                success,
                abs_error,
                loss,
                time_s,
                iters: out.iters,
                status: out.status,
                cert_grad_norm: out.certificate.grad_on_support_norm,
                cert_violation: out.certificate.offsupport_violation,
                cert_passed: out.certificate.passed,
            },
        )
    };

    let mut keyed: Vec<((usize, usize, usize), TrialRecord)> = if spec.parallelism == 1 {
        tasks.into_iter().map(execute).collect()
    } else {
        use rayon::prelude::*;
        let body = |tasks: Vec<(usize, usize, usize)>| {
            tasks.into_par_iter().map(execute).collect::<Vec<_>>()
        };
        if spec.parallelism == 0 {
            body(tasks)
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(spec.parallelism)
                .build()
                .map_err(|e| BenchError::InvalidSpec(e.to_string()))?;
            pool.install(|| body(tasks))
        }
    };
    keyed.sort_by_key(|(k, _)| *k);
    let records: Vec<TrialRecord> = keyed.into_iter().map(|(_, r)| r).collect();

    let mut cells = Vec::new();
    for (cell_idx, cell) in spec.grid.iter().enumerate() {
        for (solver_idx, solver) in spec.solvers.iter().enumerate() {
            let rows: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.cell == cell_idx && r.solver == solver.name())
                .collect();
            debug_assert_eq!(rows.len(), spec.trials);
            let _ = solver_idx;
            let successes = rows.iter().filter(|r| r.success == Some(true)).count();
            let success_rate = rows
                .iter()
                .any(|r| r.success.is_some())
                .then(|| successes as f64 / spec.trials as f64);
            let finite_errors: Vec<f64> = rows
                .iter()
                .filter_map(|r| r.abs_error)
                .filter(|e| e.is_finite())
                .collect();
            let mean_abs_error = (!finite_errors.is_empty())
                .then(|| finite_errors.iter().sum::<f64>() / finite_errors.len() as f64);
            let mut times: Vec<f64> = rows.iter().map(|r| r.time_s).collect();
            times.sort_by(f64::total_cmp);
            let mean_time = times.iter().sum::<f64>() / times.len() as f64;
            let median_time = times[times.len() / 2];
            let mean_iters =
                rows.iter().map(|r| r.iters as f64).sum::<f64>() / rows.len() as f64;
            let finite_losses: Vec<f64> =
                rows.iter().map(|r| r.loss).filter(|l| l.is_finite()).collect();
            let mean_loss = if finite_losses.is_empty() {
                f64::NAN
            } else {
                finite_losses.iter().sum::<f64>() / finite_losses.len() as f64
            };
            cells.push(CellStats {
                kind: spec.kind.name().to_string(),
                n: cell.n,
                m: cell.m,
                s: cell.s,
                theta: cell.theta,
                solver: solver.name().to_string(),
                trials: spec.trials,
                success_rate,
                mean_abs_error,
                mean_time,
                median_time,
                mean_iters,
                mean_loss,
            });
        }
    }
    Ok(SweepResult {
        cells,
        trials: spec.retain_trials.then_some(records),
    })
}

/// Runs the full sweep described by `spec`.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult, BenchError> {
    run_sweep_inner(spec, &|inst, solver, cell| {
        default_solver(inst, solver, cell, spec.baseline_max_iters)
    })
}

/// Recovery-error table over CS instances; rejects logistic kinds where no
/// planted signal distance exists.
pub fn run_error_table(spec: &SweepSpec) -> Result<SweepResult, BenchError> {
    if !spec.kind.is_cs() {
        return Err(BenchError::InvalidSpec(
            "error tables require a CS problem kind".into(),
        ));
    }
    run_sweep(spec)
}

// ---------------------------------------------------------------------------
// Convergence-rate analysis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateClass {
    Quadratic,
    Superlinear,
    Linear,
    Inconclusive,
}

/// Log-log fit of consecutive residuals `log r_{k+1} = log C + p log r_k`
/// over the terminal window.
#[derive(Debug, Clone)]
pub struct RateFit {
    /// Residuals used for the fit (the last in-window ones, in order).
    pub window: Vec<f64>,
    pub exponent: f64,
    pub constant: f64,
    pub classification: RateClass,
}

/// Number of trailing in-window residuals used by the fit.
const RATE_WINDOW: usize = 6;

/// Fits the empirical convergence order from a solve trace. Only residuals
/// strictly between the machine-precision floor 1e-14 and 1e-2 participate;
/// fewer than four such records is inconclusive.
pub fn analyze_rate(trace: &[IterationRecord]) -> RateFit {
    let indexed: Vec<(usize, f64)> = trace
        .iter()
        .enumerate()
        .filter(|(_, r)| r.residual_norm > 1e-14 && r.residual_norm < 1e-2)
        .map(|(i, r)| (i, r.residual_norm))
        .collect();
    if indexed.len() < 4 {
        return RateFit {
            window: indexed.into_iter().map(|(_, r)| r).collect(),
            exponent: f64::NAN,
            constant: f64::NAN,
            classification: RateClass::Inconclusive,
        };
    }
    let tail = &indexed[indexed.len().saturating_sub(RATE_WINDOW)..];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for w in tail.windows(2) {
        // only adjacent iterations form a valid recursion pair
        if w[1].0 == w[0].0 + 1 {
            xs.push(w[0].1.log10());
            ys.push(w[1].1.log10());
        }
    }
    let window: Vec<f64> = tail.iter().map(|(_, r)| *r).collect();
    if xs.len() < 2 {
        return RateFit {
            window,
            exponent: f64::NAN,
            constant: f64::NAN,
            classification: RateClass::Inconclusive,
        };
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        cov += (x - mx) * (y - my);
        var += (x - mx) * (x - mx);
    }
    let exponent = cov / var;
    let constant = 10f64.powf(my - exponent * mx);
    let classification = if exponent >= 1.7 {
        RateClass::Quadratic
    } else if exponent >= 1.2 {
        RateClass::Superlinear
    } else if exponent >= 0.5 {
        RateClass::Linear
    } else {
        RateClass::Inconclusive
    };
    RateFit {
        window,
        exponent,
        constant,
        classification,
    }
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Sibling path with `.plot.csv` appended to the stem.
fn plot_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.plot.csv"))
}

/// Writes the aggregated result. CSV keeps the fixed column order
/// `kind,n,m,s,solver,trials,success_rate,mean_error,mean_time,mean_iters`
/// and also writes a `<stem>.plot.csv` companion with one x column (the grid
/// parameter that varies) and one metric column per solver. JSON mirrors the
/// whole result structure.
pub fn export(result: &SweepResult, format: ExportFormat, path: &Path) -> Result<(), BenchError> {
    let io_err = |p: &Path| {
        let p = p.display().to_string();
        move |source| BenchError::Io { path: p.clone(), source }
    };
    match format {
        ExportFormat::Json => {
            let file = File::create(path).map_err(io_err(path))?;
            serde_json::to_writer_pretty(BufWriter::new(file), result)
                .map_err(|e| BenchError::Io {
                    path: path.display().to_string(),
                    source: e.into(),
                })?;
            Ok(())
        }
        ExportFormat::Csv => {
            let file = File::create(path).map_err(io_err(path))?;
            let mut w = BufWriter::new(file);
            let werr = io_err(path);
            writeln!(
                w,
                "kind,n,m,s,solver,trials,success_rate,mean_error,mean_time,mean_iters"
            )
            .map_err(&werr)?;
            for c in &result.cells {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{}",
                    c.kind,
                    c.n,
                    c.m,
                    c.s,
                    c.solver,
                    c.trials,
                    fmt_opt(c.success_rate),
                    fmt_opt(c.mean_abs_error),
                    c.mean_time,
                    c.mean_iters
                )
                .map_err(&werr)?;
            }
            w.flush().map_err(&werr)?;
            write_plot_data(result, &plot_path(path))
        }
    }
}

fn write_plot_data(result: &SweepResult, path: &Path) -> Result<(), BenchError> {
    let io_err = |source| BenchError::Io {
        path: path.display().to_string(),
        source,
    };
    let solvers: Vec<String> = {
        let mut names = Vec::new();
        for c in &result.cells {
            if !names.contains(&c.solver) {
                names.push(c.solver.clone());
            }
        }
        names
    };
    // pick the grid parameter that actually varies as the x axis
    let distinct = |f: fn(&CellStats) -> usize| {
        let mut vals: Vec<usize> = result.cells.iter().map(f).collect();
        vals.dedup();
        vals.sort_unstable();
        vals.dedup();
        vals.len()
    };
    let (axis_name, axis_of): (&str, fn(&CellStats) -> usize) = if distinct(|c| c.s) > 1 {
        ("s", |c| c.s)
    } else if distinct(|c| c.m) > 1 {
        ("m", |c| c.m)
    } else {
        ("n", |c| c.n)
    };

    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{axis_name},{}", solvers.join(",")).map_err(io_err)?;
    let mut axis_values: Vec<usize> = result.cells.iter().map(axis_of).collect();
    axis_values.dedup();
    for x in axis_values {
        let mut row = vec![x.to_string()];
        for solver in &solvers {
            let cell = result
                .cells
                .iter()
                .find(|c| axis_of(c) == x && &c.solver == solver);
            let metric = cell.map(|c| c.success_rate.unwrap_or(c.mean_loss));
            row.push(metric.map(|v| v.to_string()).unwrap_or_default());
        }
        writeln!(w, "{}", row.join(",")).map_err(io_err)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

pub const PRESET_NAMES: &[&str] = &["fig1-desk", "fig2-desk", "table2-desk", "table3-desk"];

/// Desk-scale experiment presets; `paper_scale` switches to the original
/// problem sizes and trial counts (hours of compute, not minutes).
pub fn preset(name: &str, paper_scale: bool) -> Option<SweepSpec> {
    let cs_solvers = vec![
        SolverChoice::Nhtp,
        SolverChoice::Iht { eta: 0.5 },
        SolverChoice::Htp { eta: 0.9 },
    ];
    let spec = match name {
        "fig1-desk" => SweepSpec {
            kind: ProblemKind::GaussianCs,
            grid: (6..=36)
                .step_by(2)
                .map(|s| GridCell { n: 256, m: 64, s, theta: None })
                .collect(),
            trials: if paper_scale { 500 } else { 100 },
            solvers: cs_solvers,
            base_seed: 1,
            parallelism: 0,
            retain_trials: false,
            record_timing: true,
            baseline_max_iters: 3000,
        },
        "fig2-desk" => SweepSpec {
            kind: ProblemKind::GaussianCs,
            grid: (0..=10)
                .map(|i| {
                    let r = 0.10 + 0.02 * i as f64;
                    GridCell {
                        n: 256,
                        m: (r * 256.0).ceil() as usize,
                        s: 13,
                        theta: None,
                    }
                })
                .collect(),
            trials: if paper_scale { 500 } else { 100 },
            solvers: cs_solvers,
            base_seed: 2,
            parallelism: 0,
            retain_trials: false,
            record_timing: true,
            baseline_max_iters: 3000,
        },
        "table2-desk" => {
            let grid = if paper_scale {
                [5000usize, 10000, 15000, 20000, 25000]
                    .iter()
                    .flat_map(|&n| {
                        [(n + 99) / 100, (n + 19) / 20].map(|s| GridCell {
                            n,
                            m: n.div_ceil(4),
                            s,
                            theta: None,
                        })
                    })
                    .collect()
            } else {
                vec![GridCell { n: 2048, m: 512, s: 20, theta: None }]
            };
            SweepSpec {
                kind: ProblemKind::DctCs,
                grid,
                trials: if paper_scale { 50 } else { 10 },
                solvers: cs_solvers,
                base_seed: 3,
                parallelism: 0,
                retain_trials: false,
                record_timing: true,
                baseline_max_iters: 3000,
            }
        }
        "table3-desk" => {
            let grid = if paper_scale {
                [10000usize, 20000, 30000, 40000]
                    .iter()
                    .map(|&n| GridCell {
                        n,
                        m: n.div_ceil(5),
                        s: (n + 19) / 20,
                        theta: None,
                    })
                    .collect()
            } else {
                vec![GridCell { n: 1000, m: 200, s: 50, theta: None }]
            };
            SweepSpec {
                kind: ProblemKind::LogisticIndep,
                grid,
                trials: if paper_scale { 50 } else { 10 },
                solvers: vec![SolverChoice::Nhtp, SolverChoice::Iht { eta: 0.5 }],
                base_seed: 4,
                parallelism: 0,
                retain_trials: false,
                record_timing: true,
                baseline_max_iters: 3000,
            }
        }
        _ => return None,
    };
    Some(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> SweepSpec {
        SweepSpec {
            kind: ProblemKind::GaussianCs,
            grid: vec![
                GridCell { n: 64, m: 24, s: 3, theta: None },
                GridCell { n: 64, m: 24, s: 5, theta: None },
            ],
            trials: 4,
            solvers: vec![SolverChoice::Nhtp, SolverChoice::Iht { eta: 0.5 }],
            base_seed: 9,
            parallelism: 1,
            retain_trials: true,
            record_timing: false,
            baseline_max_iters: 500,
        }
    }

    #[test]
    fn sweep_is_deterministic_across_worker_counts() {
        let mut spec = tiny_spec();
        let serial = run_sweep(&spec).unwrap();
        spec.parallelism = 8;
        let parallel = run_sweep(&spec).unwrap();
        assert_eq!(serial, parallel);
        let again = run_sweep(&spec).unwrap();
        assert_eq!(parallel, again);
    }

    #[test]
    fn success_rates_are_exact_ratios() {
        let result = run_sweep(&tiny_spec()).unwrap();
        for c in &result.cells {
            let rate = c.success_rate.unwrap();
            assert!((0.0..=1.0).contains(&rate));
            assert_eq!((rate * 4.0).fract(), 0.0, "rate must be a quarter multiple");
        }
    }

    #[test]
    fn mock_solver_returning_truth_scores_zero_error() {
        let spec = tiny_spec();
        let result = run_sweep_inner(&spec, &|inst, _, _| {
            let GeneratedInstance::Cs(i) = inst else { panic!() };
            TrialOutcome {
                x: i.x_star.clone(),
                iters: 0,
                status: SolveStatus::Stationary,
                certificate: StationarityCertificate {
                    grad_on_support_norm: 0.0,
                    offsupport_violation: 0.0,
                    eta_used: 1.0,
                    passed: true,
                },
            }
        })
        .unwrap();
        for c in &result.cells {
            assert_eq!(c.mean_abs_error, Some(0.0));
            assert_eq!(c.success_rate, Some(1.0));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = tiny_spec();
        spec.trials = 0;
        assert!(run_sweep(&spec).is_err());
        let mut spec = tiny_spec();
        spec.kind = ProblemKind::LogisticIndep;
        spec.solvers = vec![SolverChoice::Htp { eta: 0.5 }];
        assert!(run_sweep(&spec).is_err());
        let mut spec = tiny_spec();
        spec.kind = ProblemKind::LogisticIndep;
        assert!(run_error_table(&spec).is_err());
    }

    fn synthetic_trace(residuals: &[f64]) -> Vec<IterationRecord> {
        residuals
            .iter()
            .enumerate()
            .map(|(k, &r)| IterationRecord {
                k,
                direction_kind: None,
                alpha: None,
                f_val: 0.0,
                residual_norm: r,
                tol_value: r,
                support_changed: false,
            })
            .collect()
    }

    #[test]
    fn rate_fit_detects_quadratic_decay() {
        // r_{k+1} = 100 r_k^2 from 10^-2.5 walks the exponents 2.5, 3, 4, 6, 10
        let mut rs = vec![10f64.powf(-2.5)];
        for _ in 0..4 {
            let last = *rs.last().unwrap();
            rs.push(100.0 * last * last);
        }
        let fit = analyze_rate(&synthetic_trace(&rs));
        assert_eq!(fit.classification, RateClass::Quadratic);
        assert!((fit.exponent - 2.0).abs() < 0.15, "p = {}", fit.exponent);
        assert!((fit.constant - 100.0).abs() / 100.0 < 0.2);
    }

    #[test]
    fn rate_fit_detects_linear_decay() {
        let rs: Vec<f64> = (0..20).map(|k| 5e-3 * 0.5f64.powi(k)).collect();
        let fit = analyze_rate(&synthetic_trace(&rs));
        assert_eq!(fit.classification, RateClass::Linear);
        assert!((fit.exponent - 1.0).abs() < 0.15, "p = {}", fit.exponent);
    }

    #[test]
    fn rate_fit_needs_enough_points() {
        let fit = analyze_rate(&synthetic_trace(&[1e-3, 1e-6, 1e-12]));
        assert_eq!(fit.classification, RateClass::Inconclusive);
    }

    #[test]
    fn export_round_trips_through_json() {
        let result = run_sweep(&tiny_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        export(&result, ExportFormat::Json, &path).unwrap();
        let back: SweepResult =
            serde_json::from_reader(File::open(&path).unwrap()).unwrap();
        assert_eq!(result, back);
    }

    #[test]
    fn export_csv_schema() {
        let result = run_sweep(&tiny_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        export(&result, ExportFormat::Csv, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "kind,n,m,s,solver,trials,success_rate,mean_error,mean_time,mean_iters"
        );
        // cells x solvers data rows plus the header
        assert_eq!(lines.len(), 2 * 2 + 1);
        let plot = std::fs::read_to_string(dir.path().join("out.plot.csv")).unwrap();
        assert!(plot.starts_with("s,NHTP,IHT"));
        // empty result still produces a header-only file
        let empty = SweepResult { cells: vec![], trials: None };
        let epath = dir.path().join("empty.csv");
        export(&empty, ExportFormat::Csv, &epath).unwrap();
        let etext = std::fs::read_to_string(&epath).unwrap();
        assert_eq!(etext.lines().count(), 1);
    }

    #[test]
    fn presets_exist_and_validate() {
        for name in PRESET_NAMES {
            let spec = preset(name, false).unwrap();
            validate(&spec).unwrap();
        }
        assert!(preset("nope", false).is_none());
        let fig1 = preset("fig1-desk", false).unwrap();
        assert_eq!(fig1.grid.len(), 16);
        assert_eq!(fig1.grid[0].s, 6);
        assert_eq!(fig1.grid[15].s, 36);
        assert_eq!(preset("fig1-desk", true).unwrap().trials, 500);
    }
}
