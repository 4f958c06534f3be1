//! Runtime property suite behind the `check` subcommand: derivative
//! cross-checks against finite differences, the hard-thresholding operator
//! against exhaustive enumeration, the Newton step against the closed-form
//! restricted minimizer, and end-to-end stationarity certificates.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::objective::{fd, standard_normal, Objective};
use crate::problems::{gen_gaussian_cs, gen_logistic_independent};
use crate::solver::{self, SolverConfig};
use crate::sparse::{hard_threshold, SupportSet};
use crate::DenseVector;

/// Result of one named property check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckOutcome { name, passed, detail }
    }
}

/// Runs every property check. `quick` shrinks the case counts so the whole
/// suite finishes in a few seconds.
pub fn run(quick: bool) -> Vec<CheckOutcome> {
    let threshold_cases = if quick { 60 } else { 200 };
    let fd_cases = if quick { 8 } else { 20 };
    vec![
        hard_threshold_vs_enumeration(threshold_cases),
        gradient_fd_cs(fd_cases),
        gradient_fd_logistic(fd_cases),
        hessian_fd_cs(fd_cases.min(10)),
        hessian_fd_logistic(fd_cases.min(10)),
        newton_step_vs_closed_form(if quick { 3 } else { 10 }),
        stationarity_certificates(if quick { 2 } else { 5 }),
        armijo_unit_step_on_quadratic(),
    ]
}

/// Minimum distance from `x` to any s-sparse vector, by enumerating every
/// size-s support. Exponential in n; callers keep n at or below 10.
fn enumeration_best_distance(x: &DenseVector, s: usize) -> f64 {
    let n = x.len();
    let mut best = f64::INFINITY;
    let mut stack: Vec<(usize, usize, f64)> = vec![(0, 0, x.iter().map(|v| v * v).sum())];
    // depth-first over supports; third field tracks the off-support energy
    while let Some((start, chosen, off2)) = stack.pop() {
        if chosen == s.min(n) {
            best = best.min(off2.max(0.0).sqrt());
            continue;
        }
        for i in start..n {
            stack.push((i + 1, chosen + 1, off2 - x[i] * x[i]));
        }
    }
    best
}

fn hard_threshold_vs_enumeration(cases: usize) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7451);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let n = 2 + case % 9;
        let s = 1 + case % n.min(5);
        let x = DenseVector::from_shape_fn(n, |_| {
            // quantized values provoke exact ties
            (rng.random_range(-6..=6) as f64) / 2.0
        });
        let r = hard_threshold(&x, s);
        let achieved = (&x - &r.vector).mapv(|v| v * v).sum().sqrt();
        let oracle = enumeration_best_distance(&x, s);
        worst = worst.max((achieved - oracle).abs());
    }
    CheckOutcome::new(
        "hard-threshold vs exhaustive enumeration",
        worst <= 1e-12,
        format!("{cases} cases, worst distance gap {worst:.2e}"),
    )
}

/// Largest relative gradient error against central differences over sampled
/// points. Public so tests can aim it at deliberately broken objectives.
pub fn max_gradient_fd_error(obj: &dyn Objective, cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let x = DenseVector::from_shape_fn(obj.dim(), |_| 0.5 * standard_normal(&mut rng));
        worst = worst.max(fd::max_gradient_error(obj, &x, 1e-6));
    }
    worst
}

fn gradient_fd_cs(cases: usize) -> CheckOutcome {
    let inst = gen_gaussian_cs(12, 8, 3, 0xC5);
    let worst = max_gradient_fd_error(&inst.objective, cases, 0xC5C5);
    CheckOutcome::new(
        "CS gradient vs finite differences",
        worst < 1e-5,
        format!("{cases} points, worst relative error {worst:.2e}"),
    )
}

fn gradient_fd_logistic(cases: usize) -> CheckOutcome {
    let inst = gen_logistic_independent(10, 16, 0x109);
    let worst = max_gradient_fd_error(&inst.objective, cases, 0x109109);
    CheckOutcome::new(
        "logistic gradient vs finite differences",
        worst < 1e-5,
        format!("{cases} points, worst relative error {worst:.2e}"),
    )
}

fn max_hessian_fd_error(obj: &dyn Objective, cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = obj.dim();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let x = DenseVector::from_shape_fn(n, |_| 0.4 * standard_normal(&mut rng));
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let rows = SupportSet::new(idx[..n / 2].to_vec());
        let cols = SupportSet::new(idx[n / 2..].to_vec());
        let analytic = obj.hessian_block(&x, &rows, &cols).matrix;
        let numeric = fd::hessian_block(obj, &x, &rows, &cols, 1e-5);
        let scale = 1.0 + analytic.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in analytic.iter().zip(numeric.iter()) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    worst
}

fn hessian_fd_cs(cases: usize) -> CheckOutcome {
    let inst = gen_gaussian_cs(10, 7, 2, 0x4E55);
    let worst = max_hessian_fd_error(&inst.objective, cases, 0x4E);
    CheckOutcome::new(
        "CS Hessian blocks vs finite differences",
        worst < 1e-4,
        format!("{cases} blocks, worst relative error {worst:.2e}"),
    )
}

fn hessian_fd_logistic(cases: usize) -> CheckOutcome {
    let inst = gen_logistic_independent(8, 14, 0x77);
    let worst = max_hessian_fd_error(&inst.objective, cases, 0x7777);
    CheckOutcome::new(
        "logistic Hessian blocks vs finite differences",
        worst < 1e-4,
        format!("{cases} blocks, worst relative error {worst:.2e}"),
    )
}

fn newton_step_vs_closed_form(cases: usize) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for seed in 0..cases as u64 {
        let inst = gen_gaussian_cs(48, 24, 4, 0xAA00 + seed);
        let obj = &inst.objective;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // an iterate supported partly off the working support
        let mut x = DenseVector::zeros(48);
        let t = SupportSet::new(vec![1, 7, 20, 33]);
        let j = SupportSet::new(vec![3, 11]);
        for i in j.iter() {
            x[i] = standard_normal(&mut rng);
        }
        x[1] = standard_normal(&mut rng);
        let grad = obj.gradient(&x);
        let dir = match solver::newton_direction(obj, &x, &grad, &t, &j) {
            Ok(d) => d,
            Err(e) => {
                return CheckOutcome::new(
                    "Newton step vs closed-form restricted minimizer",
                    false,
                    format!("Newton solve failed: {e}"),
                )
            }
        };
        let closed = obj.restricted_minimize(&t).expect("full-rank block");
        for (p, i) in t.iter().enumerate() {
            worst = worst.max((x[i] + dir.d_on_support[p] - closed[i]).abs());
        }
    }
    CheckOutcome::new(
        "Newton step vs closed-form restricted minimizer",
        worst <= 1e-8,
        format!("{cases} instances, worst coordinate gap {worst:.2e}"),
    )
}

fn stationarity_certificates(cases: usize) -> CheckOutcome {
    let mut all = true;
    let mut detail = String::new();
    for seed in 0..cases as u64 {
        let inst = gen_gaussian_cs(128, 48, 6, 0xBEEF + seed);
        let report = solver::solve(&inst.objective, &SolverConfig::new(6)).expect("valid config");
        let cert = solver::certify_stationarity(
            &inst.objective,
            &report.x_final,
            6,
            report.certificate.eta_used,
            1e-5,
        );
        if !cert.passed {
            all = false;
            detail = format!(
                "seed {seed}: grad norm {:.2e}, violation {:.2e}",
                cert.grad_on_support_norm, cert.offsupport_violation
            );
        }
    }
    if all {
        detail = format!("{cases} converged runs certified at 1e-5");
    }
    CheckOutcome::new("stationarity certificates on converged runs", all, detail)
}

fn armijo_unit_step_on_quadratic() -> CheckOutcome {
    let inst = gen_gaussian_cs(32, 16, 4, 0xF00D);
    let obj = &inst.objective;
    let x = DenseVector::zeros(32);
    let grad = obj.gradient(&x);
    let t = SupportSet::new(vec![0, 5, 9, 17]);
    let config = SolverConfig::new(4);
    let outcome = solver::newton_direction(obj, &x, &grad, &t, &SupportSet::empty())
        .ok()
        .and_then(|dir| {
            solver::armijo_search(obj, &x, obj.value(&x), &t, &dir, &config).ok()
        });
    match outcome {
        Some((alpha, _, _)) => CheckOutcome::new(
            "unit Newton step accepted on a strictly convex quadratic",
            alpha == 1.0,
            format!("accepted alpha = {alpha}"),
        ),
        None => CheckOutcome::new(
            "unit Newton step accepted on a strictly convex quadratic",
            false,
            "direction or line search failed".to_string(),
        ),
    }
}
