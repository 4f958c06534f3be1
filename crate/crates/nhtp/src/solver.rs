//! Newton hard-thresholding pursuit.
//!
//! Each iteration selects the best-s support of `x - eta * grad f(x)`, solves
//! the restricted Newton system on that support (falling back to the
//! restricted gradient direction when the Newton solve fails or is not a good
//! descent direction), then takes an Armijo-damped step that keeps the iterate
//! supported inside the selected set. Stationarity is measured by the residual
//! of the nonlinear system `F_eta(x; T) = [grad_T f(x); x_{T^c}] = 0` plus the
//! off-support gradient-bound violation.

use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::objective::{Objective, RegularityEstimate};
use crate::sparse::{best_s_support, sth_largest_abs, support_diff, SupportSet};
use crate::DenseVector;

/// Solver parameters. `SolverConfig::new(s)` fills in the defaults used by
/// all experiments; every field can be overridden, including from a flat
/// key-value (TOML) document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Sparsity level s.
    pub s: usize,
    /// Armijo sufficient-decrease factor, in (0, 1/2).
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Backtracking shrink factor, in (0, 1).
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Descent-test curvature weight when the iterate sits inside the
    /// working support.
    #[serde(default = "default_gamma_small")]
    pub gamma_small: f64,
    /// Descent-test curvature weight otherwise.
    #[serde(default = "default_gamma_large")]
    pub gamma_large: f64,
    /// Initial step scale; `None` selects `10 (1 + s/n) / min(10, ln n)`.
    #[serde(default)]
    pub eta0: Option<f64>,
    /// Whether eta is nudged every tenth iteration based on the residual.
    #[serde(default = "default_true")]
    pub eta_adaptive: bool,
    /// Stationarity tolerance on `||F_eta|| + violation`.
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Relative objective-change stall tolerance; 0 disables the test.
    #[serde(default = "default_tol")]
    pub f_change_tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Maximum backtracking halvings per line search.
    #[serde(default = "default_max_backtracks")]
    pub max_backtracks: usize,
    /// Bound on retained trace rows (oldest dropped first); `None` keeps all.
    #[serde(default)]
    pub trace_capacity: Option<usize>,
    /// Optional warm start; defaults to the gradient-based initial point rule.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

fn default_sigma() -> f64 {
    1e-4 / 2.0
}
fn default_beta() -> f64 {
    0.5
}
fn default_gamma_small() -> f64 {
    1e-10
}
fn default_gamma_large() -> f64 {
    1e-4
}
fn default_tol() -> f64 {
    1e-6
}
fn default_max_iters() -> usize {
    2000
}
fn default_max_backtracks() -> usize {
    50
}
fn default_true() -> bool {
    true
}

impl SolverConfig {
    pub fn new(s: usize) -> Self {
        SolverConfig {
            s,
            sigma: default_sigma(),
            beta: default_beta(),
            gamma_small: default_gamma_small(),
            gamma_large: default_gamma_large(),
            eta0: None,
            eta_adaptive: true,
            tol: default_tol(),
            f_change_tol: default_tol(),
            max_iters: default_max_iters(),
            max_backtracks: default_max_backtracks(),
            trace_capacity: None,
            x0: None,
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), ConfigError> {
        if self.s == 0 {
            return Err(ConfigError::new("sparsity level s must be at least 1"));
        }
        if self.s > n {
            return Err(ConfigError::new("sparsity level s exceeds the dimension"));
        }
        if !(self.sigma > 0.0 && self.sigma < 0.5) {
            return Err(ConfigError::new("sigma must lie in (0, 1/2)"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(ConfigError::new("beta must lie in (0, 1)"));
        }
        if !(self.tol > 0.0) {
            return Err(ConfigError::new("tol must be positive"));
        }
        if self.f_change_tol < 0.0 {
            return Err(ConfigError::new("f_change_tol must be non-negative"));
        }
        if let Some(eta) = self.eta0 {
            if !(eta > 0.0) {
                return Err(ConfigError::new("eta0 must be positive"));
            }
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != n {
                return Err(ConfigError::new("x0 length does not match the dimension"));
            }
            if x0.iter().any(|v| !v.is_finite()) {
                return Err(ConfigError::new("x0 contains non-finite entries"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
#[error("invalid solver configuration: {0}")]
pub struct ConfigError(String);

impl ConfigError {
    fn new(msg: &str) -> Self {
        ConfigError(msg.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DirectionKind {
    Newton,
    Gradient,
}

/// A search direction restricted to the working support: off the support it
/// always equals `-x`, so a unit step lands inside the support.
#[derive(Debug, Clone)]
pub struct Direction {
    pub kind: DirectionKind,
    /// Full-length direction vector.
    pub d: DenseVector,
    /// The entries of `d` on the working support, aligned with it.
    pub d_on_support: Vec<f64>,
    /// `<grad f(x), d>`; never positive for a direction the solver steps along.
    pub descent_value: f64,
}

/// The Newton solve could not produce a usable direction; the caller falls
/// back to the restricted gradient direction.
#[derive(Debug, Error)]
pub enum NewtonFailure {
    #[error("restricted Hessian block is not positive definite")]
    NotPositiveDefinite,
    #[error("linear-solve residual {residual:.3e} exceeds {bound:.3e}")]
    ResidualCheck { residual: f64, bound: f64 },
    #[error("direction contains non-finite entries")]
    NonFinite,
}

#[derive(Debug, Error)]
#[error("line search exhausted {0} backtracks without sufficient decrease")]
pub struct LineSearchFailure(pub usize);

/// One row of the per-iteration trace. The residual, tolerance and objective
/// value describe the iterate at the start of iteration `k`; `direction_kind`
/// and `alpha` describe the step taken from it (`None` on the terminal row).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub direction_kind: Option<DirectionKind>,
    pub alpha: Option<f64>,
    pub f_val: f64,
    pub residual_norm: f64,
    pub tol_value: f64,
    pub support_changed: bool,
}

/// Eta-stationarity check: the gradient must vanish on the (zero-padded)
/// best-s support of `x` and stay below `x_(s)/eta` in magnitude off it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationarityCertificate {
    pub grad_on_support_norm: f64,
    pub offsupport_violation: f64,
    pub eta_used: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    /// Stationarity tolerance met and the certificate passed.
    Stationary,
    /// Objective change fell below the relative stall tolerance.
    FChangeStalled,
    /// Iteration cap reached (also reported when a line search fails).
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x_final: DenseVector,
    pub certificate: StationarityCertificate,
    pub trace: Vec<IterationRecord>,
    pub status: SolveStatus,
    pub wall_time: Duration,
    pub iterations: usize,
    pub final_value: f64,
    pub final_residual: f64,
    pub final_tol: f64,
    pub newton_steps: usize,
    pub gradient_steps: usize,
}

/// Snapshot handed to a solve observer after each accepted step.
pub struct StepObservation<'a> {
    pub k: usize,
    pub support: &'a SupportSet,
    pub direction: &'a Direction,
    pub alpha: f64,
    pub x_prev: &'a DenseVector,
    pub x_next: &'a DenseVector,
    pub f_prev: f64,
    pub f_next: f64,
}

// ---------------------------------------------------------------------------
// Parameter schedules
// ---------------------------------------------------------------------------

/// Zero when the gradient there is nonzero, otherwise all ones.
pub fn initial_point(obj: &dyn Objective) -> DenseVector {
    let zero = DenseVector::zeros(obj.dim());
    let g0 = obj.gradient(&zero);
    if g0.iter().any(|v| v.abs() > 1e-15) {
        zero
    } else {
        DenseVector::from_elem(obj.dim(), 1.0)
    }
}

/// Dimension-based initial step scale `10 (1 + s/n) / min(10, ln n)`.
pub fn eta_initial(n: usize, s: usize) -> f64 {
    assert!(n >= 2, "eta schedule needs dimension at least 2");
    10.0 * (1.0 + s as f64 / n as f64) / f64::min(10.0, (n as f64).ln())
}

/// Every tenth iteration, shrink eta while the stationarity residual is still
/// above `k^-2` and grow it once the residual drops below. The rule stays
/// silent at k = 0 where `k^-2` is undefined.
pub fn update_eta(k: usize, eta: f64, residual: f64) -> f64 {
    if k == 0 || k % 10 != 0 {
        return eta;
    }
    let target = 1.0 / ((k * k) as f64);
    if residual > target {
        eta / 1.05
    } else {
        1.05 * eta
    }
}

/// Small curvature weight when the iterate already lives inside the working
/// support (so the Newton test is easy to pass), larger otherwise.
pub fn update_gamma(x: &DenseVector, t: &SupportSet, config: &SolverConfig) -> f64 {
    let off_max = (0..x.len())
        .filter(|&i| !t.contains(i))
        .map(|i| x[i].abs())
        .fold(0.0, f64::max);
    if off_max <= 1e-15 {
        config.gamma_small
    } else {
        config.gamma_large
    }
}

// ---------------------------------------------------------------------------
// Directions
// ---------------------------------------------------------------------------

/// Solves the restricted Newton system
/// `H_T d_T = H_{T,J} x_J - grad_T f(x)`, with `d = -x` off the support.
///
/// `j` must cover every nonzero of `x` outside `t` (the previous working
/// support minus the current one does). The solve is validated against a
/// relative residual bound of `1e-10 (1 + ||rhs||)`.
pub fn newton_direction(
    obj: &dyn Objective,
    x: &DenseVector,
    grad: &DenseVector,
    t: &SupportSet,
    j: &SupportSet,
) -> Result<Direction, NewtonFailure> {
    let h = obj.hessian_block(x, t, t).matrix;
    let mut rhs = DenseVector::from_iter(t.iter().map(|i| -grad[i]));
    let xj: Vec<f64> = j.iter().map(|i| x[i]).collect();
    if xj.iter().any(|&v| v != 0.0) {
        let g = obj.hessian_block(x, t, j).matrix;
        for p in 0..t.len() {
            let mut acc = 0.0;
            for (q, &v) in xj.iter().enumerate() {
                acc += g[[p, q]] * v;
            }
            rhs[p] += acc;
        }
    }
    let l = linalg::cholesky(&h).ok_or(NewtonFailure::NotPositiveDefinite)?;
    let d_t = linalg::cholesky_solve(&l, &rhs);

    let rhs_norm = rhs.dot(&rhs).sqrt();
    let mut res2 = 0.0;
    for p in 0..t.len() {
        let mut acc = -rhs[p];
        for q in 0..t.len() {
            acc += h[[p, q]] * d_t[q];
        }
        res2 += acc * acc;
    }
    let bound = 1e-10 * (1.0 + rhs_norm);
    if res2.sqrt() > bound {
        return Err(NewtonFailure::ResidualCheck {
            residual: res2.sqrt(),
            bound,
        });
    }

    let mut d = x.mapv(|v| -v);
    for (p, i) in t.iter().enumerate() {
        d[i] = d_t[p];
    }
    let descent_value = grad.dot(&d);
    if !descent_value.is_finite() || d.iter().any(|v| !v.is_finite()) {
        return Err(NewtonFailure::NonFinite);
    }
    Ok(Direction {
        kind: DirectionKind::Newton,
        d,
        d_on_support: d_t.to_vec(),
        descent_value,
    })
}

/// The restricted gradient direction: `d_T = -grad_T f(x)`, `d = -x` off `t`.
pub fn gradient_direction(x: &DenseVector, grad: &DenseVector, t: &SupportSet) -> Direction {
    let mut d = x.mapv(|v| -v);
    let mut d_on_support = Vec::with_capacity(t.len());
    for i in t.iter() {
        d[i] = -grad[i];
        d_on_support.push(-grad[i]);
    }
    let descent_value = grad.dot(&d);
    Direction {
        kind: DirectionKind::Gradient,
        d,
        d_on_support,
        descent_value,
    }
}

/// Accepts the Newton direction only if
/// `<grad_T f, d_T> <= -gamma ||d||^2 + ||x_{T^c}||^2 / (4 eta)`.
pub fn check_descent_condition(
    direction: &Direction,
    x: &DenseVector,
    grad: &DenseVector,
    t: &SupportSet,
    gamma: f64,
    eta: f64,
) -> bool {
    let lhs: f64 = t
        .iter()
        .zip(direction.d_on_support.iter())
        .map(|(i, &di)| grad[i] * di)
        .sum();
    let d_norm2 = direction.d.dot(&direction.d);
    let off_norm2: f64 = (0..x.len())
        .filter(|&i| !t.contains(i))
        .map(|i| x[i] * x[i])
        .sum();
    lhs <= -gamma * d_norm2 + off_norm2 / (4.0 * eta)
}

// ---------------------------------------------------------------------------
// Line search and iterate update
// ---------------------------------------------------------------------------

/// The candidate iterate `x(alpha)`: `x_T + alpha d_T` on the support, zero
/// elsewhere, so the new support is always contained in `t`.
fn step_candidate(x: &DenseVector, t: &SupportSet, d_on_support: &[f64], alpha: f64) -> DenseVector {
    let mut next = DenseVector::zeros(x.len());
    for (p, i) in t.iter().enumerate() {
        next[i] = x[i] + alpha * d_on_support[p];
    }
    next
}

/// Armijo backtracking: the smallest `l >= 0` with
/// `f(x(beta^l)) <= f(x) + sigma beta^l <grad f, d>`.
pub fn armijo_search(
    obj: &dyn Objective,
    x: &DenseVector,
    f_val: f64,
    t: &SupportSet,
    direction: &Direction,
    config: &SolverConfig,
) -> Result<(f64, DenseVector, f64), LineSearchFailure> {
    let slope = direction.descent_value;
    if slope > 0.0 {
        return Err(LineSearchFailure(0));
    }
    let mut alpha = 1.0;
    for _ in 0..=config.max_backtracks {
        let candidate = step_candidate(x, t, &direction.d_on_support, alpha);
        let f_next = obj.value(&candidate);
        if f_next <= f_val + config.sigma * alpha * slope {
            return Ok((alpha, candidate, f_next));
        }
        alpha *= config.beta;
    }
    Err(LineSearchFailure(config.max_backtracks))
}

// ---------------------------------------------------------------------------
// Stationarity measures
// ---------------------------------------------------------------------------

fn tolerance_parts(
    x: &DenseVector,
    grad: &DenseVector,
    t: &SupportSet,
    eta: f64,
) -> (f64, f64) {
    let mut on2 = 0.0;
    for i in t.iter() {
        on2 += grad[i] * grad[i];
    }
    let mut off2 = 0.0;
    let mut viol: f64 = 0.0;
    let xs = sth_largest_abs(x, t.len());
    let bound = xs / eta;
    for i in 0..x.len() {
        if !t.contains(i) {
            off2 += x[i] * x[i];
            viol = viol.max(grad[i].abs() - bound);
        }
    }
    let residual = (on2 + off2).sqrt();
    (residual + viol.max(0.0), residual)
}

/// Stationarity tolerance at `x` for the working support `t`:
/// `||F_eta(x; T)||` plus the largest off-support excess of `|grad_i f|`
/// over `x_(s)/eta`. Returns `(tol_value, residual_norm)`.
pub fn tolerance(
    obj: &dyn Objective,
    x: &DenseVector,
    t: &SupportSet,
    eta: f64,
) -> (f64, f64) {
    let grad = obj.gradient(x);
    tolerance_parts(x, &grad, t, eta)
}

/// Certifies eta-stationarity of an s-sparse point: gradient norm on the
/// zero-padded best-s support of `x`, and the worst off-support violation of
/// `|grad_i f| <= x_(s)/eta`. Both must be at most `tol` to pass.
pub fn certify_stationarity(
    obj: &dyn Objective,
    x: &DenseVector,
    s: usize,
    eta: f64,
    tol: f64,
) -> StationarityCertificate {
    let grad = obj.gradient(x);
    let gamma_set = best_s_support(x, s);
    let xs = sth_largest_abs(x, s);
    let mut on2 = 0.0;
    for i in gamma_set.iter() {
        on2 += grad[i] * grad[i];
    }
    let bound = xs / eta;
    let mut viol: f64 = 0.0;
    for i in 0..x.len() {
        if !gamma_set.contains(i) {
            viol = viol.max(grad[i].abs() - bound);
        }
    }
    let grad_on_support_norm = on2.sqrt();
    let offsupport_violation = viol.max(0.0);
    StationarityCertificate {
        grad_on_support_norm,
        offsupport_violation,
        eta_used: eta,
        passed: grad_on_support_norm <= tol && offsupport_violation <= tol,
    }
}

// ---------------------------------------------------------------------------
// Main loop
// ---------------------------------------------------------------------------

struct TraceBuf {
    rows: VecDeque<IterationRecord>,
    cap: Option<usize>,
}

impl TraceBuf {
    fn new(cap: Option<usize>) -> Self {
        TraceBuf {
            rows: VecDeque::new(),
            cap,
        }
    }

    fn push(&mut self, row: IterationRecord) {
        if let Some(cap) = self.cap {
            while self.rows.len() >= cap.max(1) {
                self.rows.pop_front();
            }
        }
        self.rows.push_back(row);
    }

    fn into_vec(self) -> Vec<IterationRecord> {
        self.rows.into()
    }
}

pub fn solve(obj: &dyn Objective, config: &SolverConfig) -> Result<SolveReport, ConfigError> {
    solve_with_observer(obj, config, |_: &StepObservation| {})
}

/// Runs the solver, calling `observer` after every accepted step. The
/// observer sees the working support, the direction, the step length and both
/// iterates, which is what the invariant checks and the equivalence tests
/// need.
pub fn solve_with_observer<F>(
    obj: &dyn Objective,
    config: &SolverConfig,
    mut observer: F,
) -> Result<SolveReport, ConfigError>
where
    F: FnMut(&StepObservation),
{
    let n = obj.dim();
    config.validate(n)?;
    let start = Instant::now();

    let mut x = match &config.x0 {
        Some(v) => DenseVector::from_iter(v.iter().copied()),
        None => initial_point(obj),
    };
    let mut eta = config.eta0.unwrap_or_else(|| eta_initial(n, config.s));
    let mut grad = obj.gradient(&x);
    let mut f_val = obj.value(&x);
    let mut last_f: Option<f64> = None;
    // sentinel previous support covering any starting point's support
    let mut t_prev = SupportSet::full(n);
    let mut have_prev = false;

    let mut trace = TraceBuf::new(config.trace_capacity);
    let mut newton_steps = 0usize;
    let mut gradient_steps = 0usize;

    let mut k = 0usize;
    let (status, final_residual, final_tol) = loop {
        let u = DenseVector::from_iter(x.iter().zip(grad.iter()).map(|(xi, gi)| xi - eta * gi));
        let t = best_s_support(&u, config.s);
        let support_changed = !have_prev || t != t_prev;
        let (tol_value, residual) = tolerance_parts(&x, &grad, &t, eta);

        let mut stop: Option<SolveStatus> = None;
        if tol_value <= config.tol {
            stop = Some(SolveStatus::Stationary);
        } else if let Some(pf) = last_f {
            if config.f_change_tol > 0.0
                && (f_val - pf).abs() < config.f_change_tol * (1.0 + pf.abs())
            {
                stop = Some(SolveStatus::FChangeStalled);
            }
        }
        if stop.is_none() && k >= config.max_iters {
            stop = Some(SolveStatus::MaxIters);
        }
        if let Some(status) = stop {
            trace.push(IterationRecord {
                k,
                direction_kind: None,
                alpha: None,
                f_val,
                residual_norm: residual,
                tol_value,
                support_changed,
            });
            break (status, residual, tol_value);
        }

        let gamma = update_gamma(&x, &t, config);
        let j = support_diff(&t_prev, &t);
        let direction = match newton_direction(obj, &x, &grad, &t, &j) {
            Ok(dir)
                if dir.descent_value < 0.0
                    && check_descent_condition(&dir, &x, &grad, &t, gamma, eta) =>
            {
                dir
            }
            _ => gradient_direction(&x, &grad, &t),
        };

        match armijo_search(obj, &x, f_val, &t, &direction, config) {
            Ok((alpha, x_next, f_next)) => {
                match direction.kind {
                    DirectionKind::Newton => newton_steps += 1,
                    DirectionKind::Gradient => gradient_steps += 1,
                }
                observer(&StepObservation {
                    k,
                    support: &t,
                    direction: &direction,
                    alpha,
                    x_prev: &x,
                    x_next: &x_next,
                    f_prev: f_val,
                    f_next,
                });
                debug_assert!(f_next <= f_val);
                debug_assert!((0..n).all(|i| x_next[i] == 0.0 || t.contains(i)));
                trace.push(IterationRecord {
                    k,
                    direction_kind: Some(direction.kind),
                    alpha: Some(alpha),
                    f_val,
                    residual_norm: residual,
                    tol_value,
                    support_changed,
                });
                if config.eta_adaptive {
                    eta = update_eta(k, eta, residual);
                }
                last_f = Some(f_val);
                grad = obj.gradient(&x_next);
                x = x_next;
                f_val = f_next;
                t_prev = t;
                have_prev = true;
                k += 1;
            }
            Err(_) => {
                // a dead line search makes no further progress; report the
                // iterate with iteration-cap semantics
                trace.push(IterationRecord {
                    k,
                    direction_kind: Some(direction.kind),
                    alpha: None,
                    f_val,
                    residual_norm: residual,
                    tol_value,
                    support_changed,
                });
                break (SolveStatus::MaxIters, residual, tol_value);
            }
        }
    };

    let certificate = certify_stationarity(obj, &x, config.s, eta, config.tol);
    // a passed tolerance with a failed certificate can only happen on
    // degenerate ties; report it as a stall rather than as stationary
    let status = if status == SolveStatus::Stationary && !certificate.passed {
        SolveStatus::FChangeStalled
    } else {
        status
    };

    Ok(SolveReport {
        final_value: f_val,
        x_final: x,
        certificate,
        trace: trace.into_vec(),
        status,
        wall_time: start.elapsed(),
        iterations: k,
        final_residual,
        final_tol,
        newton_steps,
        gradient_steps,
    })
}

// ---------------------------------------------------------------------------
// Theory-side diagnostics
// ---------------------------------------------------------------------------

/// Constants from the step-size and descent analysis, computed from sampled
/// regularity moduli. Diagnostic only; the adaptive schedule above is what
/// actually runs.
#[derive(Debug, Clone, Copy)]
pub struct DiagnosticConstants {
    pub m2s: f64,
    pub big_m2s: f64,
    /// Restricted condition number `M_2s / m_2s`.
    pub mu2s: f64,
    /// Restricted isometry gap `max(M_2s - 1, 1 - m_2s)`.
    pub delta2s: f64,
    /// Guaranteed acceptable step fraction.
    pub alpha_bar: f64,
    /// Step-scale bound under which the guarantees hold.
    pub eta_bar: f64,
    gamma: f64,
}

impl DiagnosticConstants {
    pub fn new(est: &RegularityEstimate, gamma: f64, sigma: f64, beta: f64) -> Self {
        let m = est.m2s;
        let big = est.big_m2s;
        let alpha_bar = ((1.0 - 2.0 * sigma) / (big / gamma - sigma)).min(1.0);
        let eta_bar = (gamma * alpha_bar * beta / (big * big))
            .min(alpha_bar * beta)
            .min(1.0 / (4.0 * big));
        DiagnosticConstants {
            m2s: m,
            big_m2s: big,
            mu2s: big / m,
            delta2s: (big - 1.0).max(1.0 - m),
            alpha_bar,
            eta_bar,
            gamma,
        }
    }

    /// Full-space descent coefficient for a given step scale.
    pub fn rho(&self, eta: f64) -> f64 {
        ((2.0 * self.gamma - eta * self.big_m2s * self.big_m2s) / 2.0).min((2.0 - eta) / 2.0)
    }
}

// ---------------------------------------------------------------------------
// Trace serialization
// ---------------------------------------------------------------------------

/// Writes the trace as CSV rows `k,kind,alpha,f,residual,tol`.
pub fn write_trace_csv<W: Write>(mut w: W, trace: &[IterationRecord]) -> std::io::Result<()> {
    writeln!(w, "k,kind,alpha,f,residual,tol")?;
    for r in trace {
        let kind = match r.direction_kind {
            Some(DirectionKind::Newton) => "newton",
            Some(DirectionKind::Gradient) => "gradient",
            None => "",
        };
        let alpha = r.alpha.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.k, kind, alpha, r.f_val, r.residual_norm, r.tol_value
        )?;
    }
    Ok(())
}

/// Reads a trace written by [`write_trace_csv`].
pub fn read_trace_csv<R: BufRead>(r: R) -> std::io::Result<Vec<IterationRecord>> {
    let mut rows = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("malformed trace row {}", lineno + 1),
            )
        };
        if fields.len() != 6 {
            return Err(bad());
        }
        let kind = match fields[1] {
            "newton" => Some(DirectionKind::Newton),
            "gradient" => Some(DirectionKind::Gradient),
            "" => None,
            _ => return Err(bad()),
        };
        rows.push(IterationRecord {
            k: fields[0].parse().map_err(|_| bad())?,
            direction_kind: kind,
            alpha: if fields[2].is_empty() {
                None
            } else {
                Some(fields[2].parse().map_err(|_| bad())?)
            },
            f_val: fields[3].parse().map_err(|_| bad())?,
            residual_norm: fields[4].parse().map_err(|_| bad())?,
            tol_value: fields[5].parse().map_err(|_| bad())?,
            support_changed: false,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{CsObjective, FeatureMatrix, LogisticObjective};
    use crate::sparse::support_of;
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng) -> f64 {
        crate::objective::standard_normal(rng)
    }

    #[test]
    fn eta_initial_matches_formula() {
        // large n saturates the log term at 10
        let big = 22_027; // just above e^10
        assert_relative_eq!(eta_initial(big, 5), 1.0 + 5.0 / big as f64, epsilon = 1e-12);
        let expected = 10.0 * (1.0 + 13.0 / 256.0) / (256f64).ln();
        assert_relative_eq!(eta_initial(256, 13), expected);
        assert!((expected - 1.895).abs() < 1e-3);
        assert_relative_eq!(eta_initial(64, 64), 20.0 / f64::min(10.0, 64f64.ln()));
    }

    #[test]
    fn eta_update_schedule() {
        assert_eq!(update_eta(7, 2.0, 10.0), 2.0);
        assert_relative_eq!(update_eta(10, 2.0, 0.02), 2.0 / 1.05);
        assert_relative_eq!(update_eta(20, 2.0, 1e-5), 2.0 * 1.05);
        assert_eq!(update_eta(0, 2.0, 10.0), 2.0);
    }

    #[test]
    fn gamma_rule_branches() {
        let config = SolverConfig::new(1);
        let t = SupportSet::new(vec![0]);
        assert_eq!(update_gamma(&array![1.0, 0.0], &t, &config), 1e-10);
        assert_eq!(update_gamma(&array![1.0, 0.3], &t, &config), 1e-4);
        assert_eq!(update_gamma(&array![0.0, 0.0], &t, &config), 1e-10);
    }

    #[test]
    fn initial_point_rule() {
        let obj = CsObjective::new(array![[1.0, 0.0], [0.0, 1.0]], array![1.0, 0.0]);
        assert_eq!(initial_point(&obj), array![0.0, 0.0]);
        let obj0 = CsObjective::new(array![[1.0, 0.0], [0.0, 1.0]], array![0.0, 0.0]);
        assert_eq!(initial_point(&obj0), array![1.0, 1.0]);
    }

    #[test]
    fn initial_point_logistic_numeric() {
        let a = array![[1.0, -2.0], [0.5, 0.7]];
        let obj = LogisticObjective::new(FeatureMatrix::Dense(a), vec![1.0, 0.0]);
        // generic data has a nonzero zero-score gradient
        assert_eq!(initial_point(&obj), array![0.0, 0.0]);
    }

    #[test]
    fn newton_direction_zero_at_stationary_state() {
        let a = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let x = array![2.0, 0.0, 0.0];
        let b = a.dot(&x);
        let obj = CsObjective::new(a, b);
        let grad = obj.gradient(&x);
        let t = SupportSet::new(vec![0]);
        let j = SupportSet::empty();
        let dir = newton_direction(&obj, &x, &grad, &t, &j).unwrap();
        assert!(dir.d.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn newton_full_step_is_restricted_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = Array2::from_shape_fn((12, 8), |_| randn(&mut rng));
        let b = ndarray::Array1::from_shape_fn(12, |_| randn(&mut rng));
        let obj = CsObjective::new(a, b);
        let mut x = DenseVector::zeros(8);
        x[1] = 0.4;
        x[6] = -1.2;
        let grad = obj.gradient(&x);
        let t = SupportSet::new(vec![0, 2, 6]);
        let j = SupportSet::new(vec![1]); // covers supp(x) \ t
        let dir = newton_direction(&obj, &x, &grad, &t, &j).unwrap();
        let full = obj.restricted_minimize(&t).unwrap();
        for (p, i) in t.iter().enumerate() {
            assert_relative_eq!(x[i] + dir.d_on_support[p], full[i], epsilon = 1e-10);
        }
        // off the support the direction cancels the iterate
        assert_relative_eq!(dir.d[1], -0.4, epsilon = 1e-14);
    }

    #[test]
    fn newton_failsback_on_indefinite_hessian() {
        // f(x) = 0.5 x' D x with a negative curvature coordinate
        struct Saddle;
        impl Objective for Saddle {
            fn dim(&self) -> usize {
                2
            }
            fn value(&self, x: &DenseVector) -> f64 {
                0.5 * (x[0] * x[0] - x[1] * x[1])
            }
            fn gradient(&self, x: &DenseVector) -> DenseVector {
                array![x[0], -x[1]]
            }
            fn hessian_block(
                &self,
                _x: &DenseVector,
                rows: &SupportSet,
                cols: &SupportSet,
            ) -> crate::objective::HessianBlock {
                let d = [1.0, -1.0];
                let mut m = Array2::zeros((rows.len(), cols.len()));
                for (p, i) in rows.iter().enumerate() {
                    for (q, j) in cols.iter().enumerate() {
                        if i == j {
                            m[[p, q]] = d[i];
                        }
                    }
                }
                crate::objective::HessianBlock {
                    rows: rows.clone(),
                    cols: cols.clone(),
                    matrix: m,
                }
            }
        }
        let obj = Saddle;
        let x = array![0.0, 1.0];
        let grad = obj.gradient(&x);
        let t = SupportSet::new(vec![1]);
        assert!(matches!(
            newton_direction(&obj, &x, &grad, &t, &SupportSet::empty()),
            Err(NewtonFailure::NotPositiveDefinite)
        ));
    }

    #[test]
    fn gradient_direction_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = Array2::from_shape_fn((6, 5), |_| randn(&mut rng));
        let b = ndarray::Array1::from_shape_fn(6, |_| randn(&mut rng));
        let obj = CsObjective::new(a, b);
        let x = DenseVector::from_shape_fn(5, |_| randn(&mut rng));
        let grad = obj.gradient(&x);
        let t = SupportSet::new(vec![0, 3]);
        let dir = gradient_direction(&x, &grad, &t);
        let mut expect = 0.0;
        for i in t.iter() {
            expect -= grad[i] * grad[i];
        }
        for i in 0..5 {
            if !t.contains(i) {
                expect -= grad[i] * x[i];
            }
        }
        assert_relative_eq!(dir.descent_value, expect, epsilon = 1e-12);
        let d_t_norm: f64 = dir.d_on_support.iter().map(|v| v * v).sum::<f64>().sqrt();
        let g_t_norm: f64 = t.iter().map(|i| grad[i] * grad[i]).sum::<f64>().sqrt();
        assert_eq!(d_t_norm, g_t_norm);
    }

    #[test]
    fn descent_condition_trivial_equality() {
        let dir = Direction {
            kind: DirectionKind::Newton,
            d: DenseVector::zeros(3),
            d_on_support: vec![0.0],
            descent_value: 0.0,
        };
        let x = DenseVector::zeros(3);
        let grad = array![0.0, 1.0, 1.0];
        let t = SupportSet::new(vec![0]);
        assert!(check_descent_condition(&dir, &x, &grad, &t, 1e-4, 1.0));
    }

    #[test]
    fn descent_condition_rejects_tiny_curvature() {
        // quadratic with curvature well below gamma: the Newton step is huge
        // and the inequality fails
        struct Flat;
        impl Objective for Flat {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, x: &DenseVector) -> f64 {
                0.5 * 1e-6 * x[0] * x[0] - x[0]
            }
            fn gradient(&self, x: &DenseVector) -> DenseVector {
                array![1e-6 * x[0] - 1.0]
            }
            fn hessian_block(
                &self,
                _x: &DenseVector,
                rows: &SupportSet,
                cols: &SupportSet,
            ) -> crate::objective::HessianBlock {
                crate::objective::HessianBlock {
                    rows: rows.clone(),
                    cols: cols.clone(),
                    matrix: Array2::from_elem((1, 1), 1e-6),
                }
            }
        }
        let obj = Flat;
        let x = array![0.0];
        let grad = obj.gradient(&x);
        let t = SupportSet::new(vec![0]);
        let dir = newton_direction(&obj, &x, &grad, &t, &SupportSet::empty()).unwrap();
        assert!(!check_descent_condition(&dir, &x, &grad, &t, 1e-4, 1.0));
    }

    #[test]
    fn armijo_accepts_unit_newton_step_on_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a = Array2::from_shape_fn((8, 4), |_| randn(&mut rng));
        let truth = DenseVector::from_shape_fn(4, |_| randn(&mut rng));
        let b = a.dot(&truth);
        let obj = CsObjective::new(a, b);
        let x = DenseVector::zeros(4);
        let grad = obj.gradient(&x);
        let t = SupportSet::full(4);
        let dir = newton_direction(&obj, &x, &grad, &t, &SupportSet::empty()).unwrap();
        let config = SolverConfig::new(4);
        let (alpha, x_next, _) = armijo_search(&obj, &x, obj.value(&x), &t, &dir, &config).unwrap();
        assert_eq!(alpha, 1.0);
        for i in 0..4 {
            assert_relative_eq!(x_next[i], truth[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn armijo_tiny_sigma_accepts_any_descent_direction() {
        let obj = CsObjective::new(array![[1.0, 0.0], [0.0, 1.0]], array![1.0, 1.0]);
        let x = DenseVector::zeros(2);
        let grad = obj.gradient(&x);
        let t = SupportSet::full(2);
        let dir = gradient_direction(&x, &grad, &t);
        let mut config = SolverConfig::new(2);
        config.sigma = 1e-12;
        let (alpha, _, _) = armijo_search(&obj, &x, obj.value(&x), &t, &dir, &config).unwrap();
        assert_eq!(alpha, 1.0);
    }

    #[test]
    fn tolerance_zero_at_stationary_point() {
        let a = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let x = array![0.0, 3.0, 0.0];
        let b = array![0.0, 3.0];
        let obj = CsObjective::new(a, b);
        let t = best_s_support(&x, 1);
        let (tol_value, residual) = tolerance(&obj, &x, &t, 1.0);
        assert_eq!(residual, 0.0);
        assert_eq!(tol_value, 0.0);
    }

    #[test]
    fn tolerance_at_origin_uses_gradient_only() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let b = array![2.0, 1.0];
        let obj = CsObjective::new(a, b);
        let x = DenseVector::zeros(2);
        let grad = obj.gradient(&x); // (-2, -1)
        let t = SupportSet::new(vec![0]);
        let (tol_value, residual) = tolerance(&obj, &x, &t, 0.5);
        assert_relative_eq!(residual, grad[0].abs());
        // x_(s) = 0, so the whole off-support gradient magnitude violates
        assert_relative_eq!(tol_value, grad[0].abs() + grad[1].abs());
    }

    #[test]
    fn certificate_fails_at_origin_with_nonzero_gradient() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let obj = CsObjective::new(a, array![1.0, 1.0]);
        let cert = certify_stationarity(&obj, &DenseVector::zeros(2), 1, 1.0, 1e-6);
        assert!(!cert.passed);
        assert!(cert.offsupport_violation > 0.0);
    }

    #[test]
    fn solve_recovers_planted_signal() {
        let inst = crate::problems::gen_gaussian_cs(256, 64, 10, 7);
        let config = SolverConfig::new(10);
        let report = solve(&inst.objective, &config).unwrap();
        assert_eq!(report.status, SolveStatus::Stationary);
        assert!(report.certificate.passed);
        let err = (&report.x_final - &inst.x_star)
            .mapv(|v| v * v)
            .sum()
            .sqrt();
        let scale = inst.x_star.mapv(|v| v * v).sum().sqrt();
        assert!(err < 0.01 * scale, "recovery error {err}");
        assert!(report.final_tol <= 1e-6);
    }

    #[test]
    fn solve_exits_immediately_from_stationary_start() {
        let inst = crate::problems::gen_gaussian_cs(40, 20, 3, 5);
        let mut config = SolverConfig::new(3);
        config.x0 = Some(inst.x_star.to_vec());
        let report = solve(&inst.objective, &config).unwrap();
        assert_eq!(report.iterations, 0);
        assert_eq!(report.status, SolveStatus::Stationary);
        assert!(report.certificate.passed);
    }

    #[test]
    fn solve_honors_iteration_cap() {
        let inst = crate::problems::gen_gaussian_cs(64, 16, 4, 2);
        let mut config = SolverConfig::new(4);
        config.max_iters = 1;
        config.f_change_tol = 0.0;
        let report = solve(&inst.objective, &config).unwrap();
        assert_eq!(report.status, SolveStatus::MaxIters);
        assert_eq!(report.iterations, 1);
    }

    #[test]
    fn solve_rejects_bad_config() {
        let inst = crate::problems::gen_gaussian_cs(16, 8, 2, 1);
        let mut config = SolverConfig::new(0);
        assert!(solve(&inst.objective, &config).is_err());
        config.s = 2;
        config.sigma = 0.7;
        assert!(solve(&inst.objective, &config).is_err());
    }

    #[test]
    fn per_step_invariants_hold_on_random_instances() {
        for seed in 0..5 {
            let inst = crate::problems::gen_gaussian_cs(128, 48, 8, seed);
            let config = SolverConfig::new(8);
            let mut prev_f = f64::INFINITY;
            let report = solve_with_observer(&inst.objective, &config, |obs| {
                // iterate stays inside the working support
                for i in support_of(obs.x_next).iter() {
                    assert!(obs.support.contains(i));
                }
                // monotone decrease with the sufficient-decrease margin
                assert!(obs.f_next <= obs.f_prev + 1e-15);
                assert!(obs.f_prev <= prev_f + 1e-15);
                prev_f = obs.f_prev;
                // step never exceeds the direction length
                let step: f64 = obs
                    .x_next
                    .iter()
                    .zip(obs.x_prev.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let dlen = obs.direction.d.dot(&obs.direction.d).sqrt();
                assert!(step <= dlen + 1e-12);
                assert!(obs.direction.descent_value <= 0.0);
            })
            .unwrap();
            assert_eq!(report.status, SolveStatus::Stationary, "seed {seed}");
        }
    }

    #[test]
    fn trace_f_values_non_increasing() {
        let inst = crate::problems::gen_gaussian_cs(96, 32, 6, 11);
        let report = solve(&inst.objective, &SolverConfig::new(6)).unwrap();
        for w in report.trace.windows(2) {
            assert!(w[1].f_val <= w[0].f_val + 1e-15);
        }
        assert_eq!(
            report.trace.last().unwrap().direction_kind,
            None,
            "terminal row marks the stop"
        );
    }

    #[test]
    fn trace_csv_round_trip() {
        let inst = crate::problems::gen_gaussian_cs(64, 24, 4, 3);
        let report = solve(&inst.objective, &SolverConfig::new(4)).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &report.trace).unwrap();
        let back = read_trace_csv(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(back.len(), report.trace.len());
        for (a, b) in back.iter().zip(report.trace.iter()) {
            assert_eq!(a.k, b.k);
            assert_eq!(a.direction_kind, b.direction_kind);
            assert_eq!(a.alpha, b.alpha);
            assert_eq!(a.residual_norm, b.residual_norm);
        }
    }

    #[test]
    fn trace_ring_buffer_bounds_memory() {
        let inst = crate::problems::gen_gaussian_cs(64, 24, 4, 3);
        let mut config = SolverConfig::new(4);
        config.trace_capacity = Some(3);
        let report = solve(&inst.objective, &config).unwrap();
        assert!(report.trace.len() <= 3);
    }

    #[test]
    fn diagnostic_constants_formulas() {
        let est = RegularityEstimate { m2s: 0.5, big_m2s: 2.0 };
        let d = DiagnosticConstants::new(&est, 0.5, 0.25, 0.5);
        assert_relative_eq!(d.mu2s, 4.0);
        assert_relative_eq!(d.delta2s, 1.0);
        let alpha_expected = (1.0 - 0.5) / (4.0 - 0.25);
        assert_relative_eq!(d.alpha_bar, alpha_expected);
        let eta_expected = (0.5 * alpha_expected * 0.5 / 4.0)
            .min(alpha_expected * 0.5)
            .min(1.0 / 8.0);
        assert_relative_eq!(d.eta_bar, eta_expected);
        assert!(d.rho(d.eta_bar) > 0.0);
    }
}
