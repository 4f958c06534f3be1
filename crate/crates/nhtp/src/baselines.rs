//! Reference comparators: plain iterative hard thresholding (IHT) and the
//! fixed-step hard-thresholding pursuit with exact debiasing (HTP).
//!
//! Both share the solve-report and trace schema of the main solver so the
//! benchmark harness treats all three interchangeably.

use std::collections::HashSet;
use std::time::Instant;

use crate::linalg::RankDeficientError;
use crate::objective::{CsObjective, Objective};
use crate::solver::{
    certify_stationarity, tolerance, DirectionKind, IterationRecord, SolveReport, SolveStatus,
    StationarityCertificate,
};
use crate::sparse::{best_s_support, hard_threshold, SupportSet};
use crate::DenseVector;

/// Configuration shared by the baseline solvers. The step size stays fixed
/// for the whole run.
#[derive(Debug, Clone)]
pub struct BaselineConfig {
    pub s: usize,
    pub eta: f64,
    pub max_iters: usize,
    /// IHT stops once the iterate moves less than this (Euclidean norm).
    pub tol: f64,
    /// Optional warm start; defaults to the zero vector.
    pub x0: Option<Vec<f64>>,
}

impl BaselineConfig {
    pub fn new(s: usize, eta: f64) -> Self {
        assert!(eta > 0.0, "step size must be positive");
        assert!(s >= 1, "sparsity level must be at least 1");
        BaselineConfig {
            s,
            eta,
            max_iters: 3000,
            tol: 1e-6,
            x0: None,
        }
    }
}

fn start_point(config: &BaselineConfig, n: usize) -> DenseVector {
    match &config.x0 {
        Some(v) => {
            assert_eq!(v.len(), n);
            DenseVector::from_iter(v.iter().copied())
        }
        None => DenseVector::zeros(n),
    }
}

fn finish(
    x: DenseVector,
    obj: &dyn Objective,
    config: &BaselineConfig,
    trace: Vec<IterationRecord>,
    iterations: usize,
    converged: bool,
    newton_steps: usize,
    start: Instant,
) -> SolveReport {
    let certificate: StationarityCertificate =
        certify_stationarity(obj, &x, config.s, config.eta, config.tol);
    let status = if converged && certificate.passed {
        SolveStatus::Stationary
    } else if converged {
        SolveStatus::FChangeStalled
    } else {
        SolveStatus::MaxIters
    };
    let (final_tol, final_residual) = {
        let t = best_s_support(&x, config.s);
        tolerance(obj, &x, &t, config.eta)
    };
    SolveReport {
        final_value: obj.value(&x),
        x_final: x,
        certificate,
        status,
        trace,
        wall_time: start.elapsed(),
        iterations,
        final_residual,
        final_tol,
        newton_steps,
        gradient_steps: iterations - newton_steps,
    }
}

/// Iterates the fixed-step hard-thresholding map
/// `x <- P_s(x - eta grad f(x))` until the step norm drops below `tol`.
pub fn iht_solve(obj: &dyn Objective, config: &BaselineConfig) -> SolveReport {
    let start = Instant::now();
    let n = obj.dim();
    let mut x = start_point(config, n);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut k = 0;
    while k < config.max_iters {
        let grad = obj.gradient(&x);
        let u = DenseVector::from_iter(x.iter().zip(grad.iter()).map(|(xi, gi)| xi - config.eta * gi));
        let thresh = hard_threshold(&u, config.s);
        let t = thresh.support.clone();
        let (tol_value, residual) = tolerance(obj, &x, &t, config.eta);
        let step: f64 = x
            .iter()
            .zip(thresh.vector.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let f_val = obj.value(&x);
        let moved = step >= config.tol;
        trace.push(IterationRecord {
            k,
            direction_kind: moved.then_some(DirectionKind::Gradient),
            alpha: moved.then_some(1.0),
            f_val,
            residual_norm: residual,
            tol_value,
            support_changed: t != best_s_support(&x, config.s),
        });
        if !moved {
            converged = true;
            break;
        }
        debug_assert!(crate::sparse::support_of(&thresh.vector).len() <= config.s);
        x = thresh.vector;
        k += 1;
    }
    finish(x, obj, config, trace, k, converged, 0, start)
}

/// Hard-thresholding pursuit with exact debiasing: alternate the best-s
/// support of `x - eta grad f(x)` with the least-squares minimizer on that
/// support. Terminates when the support repeats; a revisited support from an
/// earlier iteration is logged as a cycle but does not abort the run.
pub fn htp_solve(
    obj: &CsObjective,
    config: &BaselineConfig,
) -> Result<SolveReport, RankDeficientError> {
    assert!(
        config.s <= obj.rows(),
        "restricted least squares needs s <= m"
    );
    let start = Instant::now();
    let n = obj.dim();
    let mut x = start_point(config, n);
    let mut trace = Vec::new();
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut t_prev: Option<SupportSet> = None;
    let mut converged = false;
    let mut warned = false;
    let mut k = 0;
    while k < config.max_iters {
        let grad = obj.gradient(&x);
        let u = DenseVector::from_iter(x.iter().zip(grad.iter()).map(|(xi, gi)| xi - config.eta * gi));
        let t = best_s_support(&u, config.s);
        let (tol_value, residual) = tolerance(obj, &x, &t, config.eta);
        let repeated = t_prev.as_ref() == Some(&t);
        trace.push(IterationRecord {
            k,
            direction_kind: (!repeated).then_some(DirectionKind::Newton),
            alpha: (!repeated).then_some(1.0),
            f_val: obj.value(&x),
            residual_norm: residual,
            tol_value,
            support_changed: !repeated,
        });
        if repeated {
            converged = true;
            break;
        }
        if !seen.insert(t.as_slice().to_vec()) && !warned {
            log::warn!("support cycle detected at iteration {k}");
            warned = true;
        }
        x = obj.restricted_minimize(&t)?;
        t_prev = Some(t);
        k += 1;
    }
    Ok(finish(x, obj, config, trace, k, converged, k, start))
}
