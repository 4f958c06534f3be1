//! Sparsity-constrained optimization by Newton hard-thresholding pursuit.
//!
//! Solves `min f(x)  s.t.  ||x||_0 <= s` for twice-differentiable `f` by
//! alternating best-s support selection with a restricted Newton step,
//! globalized by an Armijo line search. Ships two reference objectives
//! (compressed-sensing least squares and l2-regularized logistic regression),
//! IHT/HTP baselines, seeded synthetic problem generators and a
//! reproducible benchmark harness.
//!
//! ```
//! use nhtp::problems::gen_gaussian_cs;
//! use nhtp::solver::{solve, SolverConfig, SolveStatus};
//!
//! let inst = gen_gaussian_cs(256, 64, 10, 7);
//! let report = solve(&inst.objective, &SolverConfig::new(10)).unwrap();
//! assert_eq!(report.status, SolveStatus::Stationary);
//! assert!(nhtp::problems::recovery_success(&report.x_final, &inst.x_star));
//! ```

pub mod baselines;
pub mod bench;
mod linalg;
pub mod objective;
pub mod problems;
pub mod selfcheck;
pub mod solver;
pub mod sparse;

/// Dense coordinate vector used throughout the crate.
pub type DenseVector = ndarray::Array1<f64>;

pub use linalg::RankDeficientError;
pub use objective::{CsObjective, HessianBlock, LogisticObjective, Objective};
pub use solver::{SolveReport, SolveStatus, SolverConfig};
pub use sparse::{best_s_support, hard_threshold, SupportSet, ThresholdResult};
