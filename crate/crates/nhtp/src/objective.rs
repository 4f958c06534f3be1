//! Objective-function interface and the two reference instances:
//! compressed-sensing least squares and l2-regularized logistic loss.
//!
//! Solvers only ever touch an objective through value, gradient and small
//! restricted Hessian blocks, which keeps each iteration at
//! `O(s^3 + m s^2 + m n)` regardless of the full Hessian size.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{self, RankDeficientError};
use crate::sparse::SupportSet;
use crate::DenseVector;

/// A dense submatrix of the Hessian, indexed by explicit row/column supports.
#[derive(Debug, Clone)]
pub struct HessianBlock {
    pub rows: SupportSet,
    pub cols: SupportSet,
    pub matrix: Array2<f64>,
}

/// Twice continuously differentiable objective evaluated through its value,
/// gradient and restricted Hessian blocks.
///
/// Implementations must be deterministic and produce finite outputs on finite
/// inputs; they are immutable after construction and safe to share across
/// threads.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &DenseVector) -> f64;

    fn gradient(&self, x: &DenseVector) -> DenseVector;

    /// The exact submatrix of the Hessian at `x` with the given rows/columns.
    fn hessian_block(&self, x: &DenseVector, rows: &SupportSet, cols: &SupportSet) -> HessianBlock;

    /// Whether the minimizer over a fixed support has a closed form
    /// (true for least squares, enabling the HTP-style debias step).
    fn has_closed_form_restricted_minimizer(&self) -> bool {
        false
    }
}

// ---------------------------------------------------------------------------
// Compressed sensing least squares: f(x) = 0.5 ||A x - b||^2
// ---------------------------------------------------------------------------

/// Least-squares objective `0.5 ||A x - b||^2` with a dense sensing matrix.
#[derive(Debug, Clone)]
pub struct CsObjective {
    /// m-by-n sensing matrix, stored column-major.
    a: Array2<f64>,
    b: Array1<f64>,
}

impl CsObjective {
    pub fn new(a: Array2<f64>, b: Array1<f64>) -> Self {
        assert_eq!(a.nrows(), b.len(), "row count of A must match length of b");
        CsObjective { a, b }
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn observation(&self) -> &Array1<f64> {
        &self.b
    }

    /// `A x`, skipping zero entries of `x` so s-sparse evaluations cost `O(m s)`.
    fn apply(&self, x: &DenseVector) -> Array1<f64> {
        let m = self.a.nrows();
        let mut out = Array1::<f64>::zeros(m);
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                let col = self.a.column(j);
                for i in 0..m {
                    out[i] += col[i] * xj;
                }
            }
        }
        out
    }

    fn residual(&self, x: &DenseVector) -> Array1<f64> {
        self.apply(x) - &self.b
    }

    /// Minimizer of `||b - A z||` over vectors supported on `t`.
    ///
    /// Solves the normal equations by Cholesky and falls back to
    /// column-pivoted QR when the Gram matrix is not numerically positive
    /// definite.
    pub fn restricted_minimize(&self, t: &SupportSet) -> Result<DenseVector, RankDeficientError> {
        let k = t.len();
        let m = self.a.nrows();
        assert!(k <= m, "restricted support larger than the number of rows");
        let mut gram = Array2::<f64>::zeros((k, k));
        let mut rhs = Array1::<f64>::zeros(k);
        for (p, i) in t.iter().enumerate() {
            let ci = self.a.column(i);
            rhs[p] = ci.dot(&self.b);
            for (q, j) in t.iter().enumerate().skip(p) {
                let v = ci.dot(&self.a.column(j));
                gram[[p, q]] = v;
                gram[[q, p]] = v;
            }
        }
        let max_diag = gram.diag().iter().cloned().fold(0.0, f64::max);
        let z = match linalg::cholesky(&gram) {
            Some(l) => {
                let z = linalg::cholesky_solve(&l, &rhs);
                // guard against a barely-positive-definite factorization
                let min_pivot = l.diag().iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
                if min_pivot < 1e-12 * max_diag {
                    return Err(RankDeficientError {
                        pivot: min_pivot,
                        threshold: 1e-12 * max_diag,
                    });
                }
                z
            }
            None => {
                let mut at = Array2::<f64>::zeros((m, k));
                for (p, i) in t.iter().enumerate() {
                    at.column_mut(p).assign(&self.a.column(i));
                }
                linalg::lstsq_pivoted_qr(&at, &self.b)?
            }
        };
        let mut x = DenseVector::zeros(self.a.ncols());
        for (p, i) in t.iter().enumerate() {
            x[i] = z[p];
        }
        Ok(x)
    }
}

impl Objective for CsObjective {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, x: &DenseVector) -> f64 {
        0.5 * self.residual(x).iter().map(|r| r * r).sum::<f64>()
    }

    fn gradient(&self, x: &DenseVector) -> DenseVector {
        let r = self.residual(x);
        let n = self.a.ncols();
        DenseVector::from_iter((0..n).map(|j| self.a.column(j).dot(&r)))
    }

    fn hessian_block(&self, _x: &DenseVector, rows: &SupportSet, cols: &SupportSet) -> HessianBlock {
        let mut matrix = Array2::<f64>::zeros((rows.len(), cols.len()));
        for (p, i) in rows.iter().enumerate() {
            let ci = self.a.column(i);
            for (q, j) in cols.iter().enumerate() {
                matrix[[p, q]] = ci.dot(&self.a.column(j));
            }
        }
        HessianBlock {
            rows: rows.clone(),
            cols: cols.clone(),
            matrix,
        }
    }

    fn has_closed_form_restricted_minimizer(&self) -> bool {
        true
    }
}

// ---------------------------------------------------------------------------
// l2-regularized logistic regression
// ---------------------------------------------------------------------------

/// Compressed sparse row matrix for text-format feature data.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub ncols: usize,
}

impl CsrMatrix {
    pub fn nrows(&self) -> usize {
        self.indptr.len() - 1
    }

    fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        (&self.indices[lo..hi], &self.values[lo..hi])
    }
}

/// Feature storage: dense rows for synthetic data, CSR for ingested files.
#[derive(Debug, Clone)]
pub enum FeatureMatrix {
    Dense(Array2<f64>),
    Sparse(CsrMatrix),
}

impl FeatureMatrix {
    pub fn nrows(&self) -> usize {
        match self {
            FeatureMatrix::Dense(a) => a.nrows(),
            FeatureMatrix::Sparse(c) => c.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            FeatureMatrix::Dense(a) => a.ncols(),
            FeatureMatrix::Sparse(c) => c.ncols,
        }
    }

    fn row_dot(&self, i: usize, x: &DenseVector) -> f64 {
        match self {
            FeatureMatrix::Dense(a) => a.row(i).dot(x),
            FeatureMatrix::Sparse(c) => {
                let (idx, val) = c.row(i);
                idx.iter().zip(val).map(|(&j, &v)| v * x[j]).sum()
            }
        }
    }

    /// `out += coef * a_i`
    fn row_axpy(&self, i: usize, coef: f64, out: &mut DenseVector) {
        match self {
            FeatureMatrix::Dense(a) => {
                let row = a.row(i);
                for j in 0..row.len() {
                    out[j] += coef * row[j];
                }
            }
            FeatureMatrix::Sparse(c) => {
                let (idx, val) = c.row(i);
                for (&j, &v) in idx.iter().zip(val) {
                    out[j] += coef * v;
                }
            }
        }
    }

    /// Entries of row `i` at the positions listed in `set`, aligned with `set`.
    fn row_gather(&self, i: usize, set: &SupportSet) -> Vec<f64> {
        match self {
            FeatureMatrix::Dense(a) => {
                let row = a.row(i);
                set.iter().map(|j| row[j]).collect()
            }
            FeatureMatrix::Sparse(c) => {
                let (idx, val) = c.row(i);
                let mut out = vec![0.0; set.len()];
                for (&j, &v) in idx.iter().zip(val) {
                    if let Some(p) = set.position(j) {
                        out[p] = v;
                    }
                }
                out
            }
        }
    }
}

/// Numerically stable `ln(1 + e^t)`.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss plus `mu ||x||^2`, with labels in {0, 1}.
///
/// The loss term is `(1/m) sum_i [softplus(<a_i, x>) - b_i <a_i, x>]`; the
/// softplus form never overflows for finite scores.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    features: FeatureMatrix,
    labels: Vec<f64>,
    mu: f64,
}

impl LogisticObjective {
    /// Builds the objective with the default regularizer `mu = 1e-6 / m`.
    pub fn new(features: FeatureMatrix, labels: Vec<f64>) -> Self {
        let m = features.nrows();
        assert_eq!(m, labels.len(), "feature rows must match label count");
        assert!(m > 0, "at least one sample required");
        debug_assert!(labels.iter().all(|&b| b == 0.0 || b == 1.0));
        LogisticObjective {
            features,
            labels,
            mu: 1e-6 / m as f64,
        }
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        assert!(mu > 0.0, "regularizer must be positive");
        self.mu = mu;
        self
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    /// The unregularized mean logistic loss, the figure of merit reported by
    /// the benchmark tables.
    pub fn loss(&self, x: &DenseVector) -> f64 {
        let m = self.samples() as f64;
        let mut acc = 0.0;
        for i in 0..self.samples() {
            let t = self.features.row_dot(i, x);
            acc += softplus(t) - self.labels[i] * t;
        }
        acc / m
    }
}

impl Objective for LogisticObjective {
    fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn value(&self, x: &DenseVector) -> f64 {
        self.loss(x) + self.mu * x.iter().map(|v| v * v).sum::<f64>()
    }

    fn gradient(&self, x: &DenseVector) -> DenseVector {
        let m = self.samples();
        let mut g = DenseVector::zeros(self.dim());
        for i in 0..m {
            let t = self.features.row_dot(i, x);
            let w = (sigmoid(t) - self.labels[i]) / m as f64;
            self.features.row_axpy(i, w, &mut g);
        }
        for j in 0..g.len() {
            g[j] += 2.0 * self.mu * x[j];
        }
        g
    }

    fn hessian_block(&self, x: &DenseVector, rows: &SupportSet, cols: &SupportSet) -> HessianBlock {
        let m = self.samples();
        let mut matrix = Array2::<f64>::zeros((rows.len(), cols.len()));
        for i in 0..m {
            let t = self.features.row_dot(i, x);
            let p = sigmoid(t);
            let w = p * (1.0 - p) / m as f64;
            if w == 0.0 {
                continue;
            }
            let ar = self.features.row_gather(i, rows);
            let ac = self.features.row_gather(i, cols);
            for (p_r, &vr) in ar.iter().enumerate() {
                if vr == 0.0 {
                    continue;
                }
                for (p_c, &vc) in ac.iter().enumerate() {
                    matrix[[p_r, p_c]] += w * vr * vc;
                }
            }
        }
        // the 2*mu*I term contributes wherever a row index equals a column index
        for (p_r, i) in rows.iter().enumerate() {
            if let Some(p_c) = cols.position(i) {
                matrix[[p_r, p_c]] += 2.0 * self.mu;
            }
        }
        HessianBlock {
            rows: rows.clone(),
            cols: cols.clone(),
            matrix,
        }
    }
}

// ---------------------------------------------------------------------------
// Finite-difference verification utilities
// ---------------------------------------------------------------------------

/// Central finite differences used to cross-check analytic derivatives.
pub mod fd {
    use super::*;

    /// Central-difference gradient with the given step.
    pub fn gradient(obj: &dyn Objective, x: &DenseVector, step: f64) -> DenseVector {
        let n = obj.dim();
        let mut g = DenseVector::zeros(n);
        let mut xp = x.clone();
        for j in 0..n {
            let orig = xp[j];
            xp[j] = orig + step;
            let fp = obj.value(&xp);
            xp[j] = orig - step;
            let fm = obj.value(&xp);
            xp[j] = orig;
            g[j] = (fp - fm) / (2.0 * step);
        }
        g
    }

    /// Central-difference Hessian block: differentiates the analytic gradient.
    pub fn hessian_block(
        obj: &dyn Objective,
        x: &DenseVector,
        rows: &SupportSet,
        cols: &SupportSet,
        step: f64,
    ) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((rows.len(), cols.len()));
        let mut xp = x.clone();
        for (q, j) in cols.iter().enumerate() {
            let orig = xp[j];
            xp[j] = orig + step;
            let gp = obj.gradient(&xp);
            xp[j] = orig - step;
            let gm = obj.gradient(&xp);
            xp[j] = orig;
            for (p, i) in rows.iter().enumerate() {
                out[[p, q]] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        out
    }

    /// Largest relative per-coordinate disagreement between the analytic and
    /// finite-difference gradients at `x`.
    pub fn max_gradient_error(obj: &dyn Objective, x: &DenseVector, step: f64) -> f64 {
        let g = obj.gradient(x);
        let gfd = gradient(obj, x, step);
        let scale = 1.0 + g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        g.iter()
            .zip(gfd.iter())
            .map(|(a, b)| (a - b).abs() / scale)
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Restricted regularity estimation
// ---------------------------------------------------------------------------

/// Sampled bounds on the restricted Hessian Rayleigh quotients.
///
/// These are Monte-Carlo estimates over random 2s-sparse subspaces, not
/// certified constants; exact restricted-isometry computation is NP-hard.
#[derive(Debug, Clone, Copy)]
pub struct RegularityEstimate {
    /// Sampled lower bound (restricted strong convexity modulus).
    pub m2s: f64,
    /// Sampled upper bound (restricted smoothness modulus).
    pub big_m2s: f64,
}

/// Samples `trials` random supports of size `min(2s, n)` and takes the
/// extreme eigenvalues of each Gram block `A_S^T A_S`.
pub fn estimate_regularity(
    obj: &CsObjective,
    s: usize,
    trials: usize,
    seed: u64,
) -> RegularityEstimate {
    assert!(trials >= 1);
    let n = obj.dim();
    let k = (2 * s).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut pool: Vec<usize> = (0..n).collect();
    let x0 = DenseVector::zeros(n);
    for _ in 0..trials {
        pool.shuffle(&mut rng);
        let support = SupportSet::new(pool[..k].to_vec());
        let block = obj.hessian_block(&x0, &support, &support);
        let eigs = linalg::sym_eigenvalues(&block.matrix);
        lo = lo.min(eigs[0]);
        hi = hi.max(eigs[eigs.len() - 1]);
    }
    RegularityEstimate { m2s: lo, big_m2s: hi }
}

/// Standard normal sample, reused by generators and tests.
pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}
