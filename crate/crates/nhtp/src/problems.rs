//! Synthetic problem generators, LIBSVM-format ingestion and the recovery
//! success criterion.
//!
//! Every generator is a pure function of its dimensions and a 64-bit seed:
//! the same inputs produce bit-identical instances on any platform, and
//! independent purpose-tagged streams keep parallel trial generation
//! order-independent.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ShapeBuilder};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::objective::{standard_normal, CsObjective, CsrMatrix, FeatureMatrix, LogisticObjective};
use crate::DenseVector;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("label {value} at line {line} is outside {{-1, 0, 1}}")]
    Label { line: usize, value: f64 },
}

/// A seeded, purpose-tagged random stream. Identical specs yield identical
/// streams bit for bit; distinct purpose tags never collide.
#[derive(Debug, Clone)]
pub struct RngSpec {
    pub seed: u64,
    pub stream: &'static str,
}

impl RngSpec {
    /// The counter-based generator backing all instance generation.
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64, stream: &'static str) -> Self {
        RngSpec { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.seed ^ fnv1a(self.stream.as_bytes());
        for chunk in key.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub(crate) fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives an independent per-trial seed from a base seed, a grid-cell index
/// and a trial index. Commutes with any execution order.
pub fn trial_seed(base: u64, cell: u64, trial: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ cell) ^ trial.wrapping_mul(0x9e3779b97f4a7c15))
}

/// Compressed sensing instance in the exact-recovery regime `b = A x*`.
#[derive(Debug, Clone)]
pub struct CsInstance {
    pub objective: CsObjective,
    pub x_star: DenseVector,
    pub seed: u64,
}

/// Logistic regression instance; `x_star` is present only when the labels
/// were sampled from a planted parameter.
#[derive(Debug, Clone)]
pub struct LogisticInstance {
    pub objective: LogisticObjective,
    pub x_star: Option<DenseVector>,
    pub seed: u64,
}

/// Planted s-sparse signal: support from a seeded permutation, values
/// standard normal with exact zeros resampled.
fn planted_signal(n: usize, s: usize, seed: u64) -> DenseVector {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut RngSpec::new(seed, "plant-support").rng());
    let mut values = RngSpec::new(seed, "plant-values").rng();
    let mut x = DenseVector::zeros(n);
    for &i in &perm[..s] {
        let mut v = standard_normal(&mut values);
        while v == 0.0 {
            v = standard_normal(&mut values);
        }
        x[i] = v;
    }
    x
}

fn normalize_columns(a: &mut Array2<f64>) {
    let (m, n) = a.dim();
    for j in 0..n {
        let norm: f64 = a.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 0.0, "zero column cannot be normalized");
        for i in 0..m {
            a[[i, j]] /= norm;
        }
    }
}

/// Gaussian sensing matrix with unit-norm columns and a planted s-sparse
/// signal; `b = A x*` exactly.
pub fn gen_gaussian_cs(n: usize, m: usize, s: usize, seed: u64) -> CsInstance {
    assert!(s <= m && m <= n, "need s <= m <= n");
    let mut rng = RngSpec::new(seed, "cs-gaussian").rng();
    // fill column by column so the layout never affects the stream
    let mut data = Vec::with_capacity(m * n);
    for _ in 0..(m * n) {
        data.push(standard_normal(&mut rng));
    }
    let mut a = Array2::from_shape_vec((m, n).f(), data).unwrap();
    normalize_columns(&mut a);
    let x_star = planted_signal(n, s, seed);
    let b = a.dot(&x_star);
    CsInstance {
        objective: CsObjective::new(a, b),
        x_star,
        seed,
    }
}

/// Partial discrete-cosine sensing matrix: `A_ij = cos(2 pi j psi_i)` with
/// `psi_i` uniform on [0, 1) and zero-based `j`, then column-normalized.
pub fn gen_dct_cs(n: usize, m: usize, s: usize, seed: u64) -> CsInstance {
    assert!(s <= m && m <= n, "need s <= m <= n");
    let mut rng = RngSpec::new(seed, "cs-dct").rng();
    let psi: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
    let mut a = Array2::zeros((m, n).f());
    for j in 0..n {
        for i in 0..m {
            a[[i, j]] = (2.0 * std::f64::consts::PI * j as f64 * psi[i]).cos();
        }
    }
    normalize_columns(&mut a);
    let x_star = planted_signal(n, s, seed);
    let b = a.dot(&x_star);
    CsInstance {
        objective: CsObjective::new(a, b),
        x_star,
        seed,
    }
}

/// Two-cluster logistic data: labels from a random half split, features
/// `a_i = y_i v_i 1 + w_i` with `y_i = -1` on the zero-label half and `+1`
/// on the other, `v_i` scalar standard normal and `w_i` standard normal.
pub fn gen_logistic_independent(n: usize, m: usize, seed: u64) -> LogisticInstance {
    assert!(m >= 2, "need at least two samples");
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut RngSpec::new(seed, "log-split").rng());
    let mut labels = vec![0.0; m];
    for &i in order.iter().skip(m / 2) {
        labels[i] = 1.0;
    }
    let mut vrng = RngSpec::new(seed, "log-scale").rng();
    let mut wrng = RngSpec::new(seed, "log-noise").rng();
    let mut a = Array2::zeros((m, n));
    for i in 0..m {
        let y = if labels[i] == 0.0 { -1.0 } else { 1.0 };
        let v = standard_normal(&mut vrng);
        for j in 0..n {
            a[[i, j]] = y * v + standard_normal(&mut wrng);
        }
    }
    LogisticInstance {
        objective: LogisticObjective::new(FeatureMatrix::Dense(a), labels),
        x_star: None,
        seed,
    }
}

/// Autoregressive logistic data with correlation `theta`: rows follow
/// `a_{i,j+1} = theta a_{ij} + sqrt(1 - theta^2) v_{ij}` and labels are
/// Bernoulli with `Pr(b_i = 1 | a_i) = sigmoid(<a_i, x*>)` for a planted
/// s-sparse `x*`.
pub fn gen_logistic_correlated(
    n: usize,
    m: usize,
    s: usize,
    theta: f64,
    seed: u64,
) -> LogisticInstance {
    assert!((0.0..=1.0).contains(&theta), "theta must lie in [0, 1]");
    assert!(s <= n);
    let x_star = planted_signal(n, s, seed);
    let mut rows = RngSpec::new(seed, "ar-rows").rng();
    let decay = (1.0 - theta * theta).sqrt();
    let mut a = Array2::zeros((m, n));
    for i in 0..m {
        a[[i, 0]] = standard_normal(&mut rows);
        for j in 1..n {
            a[[i, j]] = theta * a[[i, j - 1]] + decay * standard_normal(&mut rows);
        }
    }
    let mut lrng = RngSpec::new(seed, "ar-labels").rng();
    let labels: Vec<f64> = (0..m)
        .map(|i| {
            let score: f64 = a.row(i).dot(&x_star);
            let p_one = 1.0 - 1.0 / (1.0 + score.exp().min(f64::MAX));
            if lrng.random::<f64>() < p_one {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    LogisticInstance {
        objective: LogisticObjective::new(FeatureMatrix::Dense(a), labels),
        x_star: Some(x_star),
        seed,
    }
}

/// Loads a LIBSVM-format text file: one sample per line,
/// `label index:value ...` with 1-based indices. Labels in {-1, 0, 1};
/// -1 maps to 0. The dimension is the largest index seen.
pub fn load_libsvm(path: &Path) -> Result<LogisticInstance, ProblemError> {
    let io_err = |source| ProblemError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let reader = BufReader::new(file);
    let mut labels = Vec::new();
    let mut row_entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut ncols = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().unwrap();
        let label: f64 = label_tok.parse().map_err(|_| ProblemError::Parse {
            line: lineno,
            msg: format!("bad label token '{label_tok}'"),
        })?;
        let label = match label {
            l if l == -1.0 => 0.0,
            l if l == 0.0 || l == 1.0 => l,
            other => return Err(ProblemError::Label { line: lineno, value: other }),
        };
        let mut entries = Vec::new();
        for tok in tokens {
            let (idx_str, val_str) = tok.split_once(':').ok_or_else(|| ProblemError::Parse {
                line: lineno,
                msg: format!("expected index:value, got '{tok}'"),
            })?;
            let idx: usize = idx_str.parse().map_err(|_| ProblemError::Parse {
                line: lineno,
                msg: format!("bad feature index '{idx_str}'"),
            })?;
            if idx == 0 {
                return Err(ProblemError::Parse {
                    line: lineno,
                    msg: "feature indices are 1-based".to_string(),
                });
            }
            let val: f64 = val_str.parse().map_err(|_| ProblemError::Parse {
                line: lineno,
                msg: format!("bad feature value '{val_str}'"),
            })?;
            ncols = ncols.max(idx);
            entries.push((idx - 1, val));
        }
        entries.sort_by_key(|e| e.0);
        labels.push(label);
        row_entries.push(entries);
    }
    if labels.is_empty() {
        return Err(ProblemError::Parse {
            line: 0,
            msg: "file contains no samples".to_string(),
        });
    }
    let mut indptr = Vec::with_capacity(labels.len() + 1);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    indptr.push(0);
    for entries in &row_entries {
        for &(j, v) in entries {
            indices.push(j);
            values.push(v);
        }
        indptr.push(indices.len());
    }
    let csr = CsrMatrix {
        indptr,
        indices,
        values,
        ncols,
    };
    Ok(LogisticInstance {
        objective: LogisticObjective::new(FeatureMatrix::Sparse(csr), labels),
        x_star: None,
        seed: 0,
    })
}

/// Writes feature rows and labels in LIBSVM format (1-based indices, zeros
/// omitted, full-precision values).
pub fn write_libsvm(path: &Path, instance: &LogisticInstance) -> Result<(), ProblemError> {
    let io_err = |source| ProblemError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let features = instance.objective.features();
    let labels = instance.objective.labels();
    let n = features.ncols();
    for i in 0..features.nrows() {
        write!(w, "{}", labels[i] as i64).map_err(io_err)?;
        match features {
            FeatureMatrix::Dense(a) => {
                for j in 0..n {
                    let v = a[[i, j]];
                    if v != 0.0 {
                        write!(w, " {}:{}", j + 1, v).map_err(io_err)?;
                    }
                }
            }
            FeatureMatrix::Sparse(c) => {
                let lo = c.indptr[i];
                let hi = c.indptr[i + 1];
                for p in lo..hi {
                    write!(w, " {}:{}", c.indices[p] + 1, c.values[p]).map_err(io_err)?;
                }
            }
        }
        writeln!(w).map_err(io_err)?;
    }
    Ok(())
}

/// Recovery is successful when `||x - x*|| < 0.01 ||x*||`.
pub fn recovery_success(x: &DenseVector, x_star: &DenseVector) -> bool {
    let scale: f64 = x_star.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(scale > 0.0, "success criterion is undefined for x* = 0");
    let err: f64 = x
        .iter()
        .zip(x_star.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    err < 0.01 * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::objective::Objective;

    #[test]
    fn gaussian_columns_are_unit_norm() {
        let inst = gen_gaussian_cs(32, 16, 4, 9);
        let a = inst.objective.matrix();
        for j in 0..32 {
            let norm: f64 = a.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_relative_eq!(norm, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let a = gen_gaussian_cs(24, 12, 3, 42);
        let b = gen_gaussian_cs(24, 12, 3, 42);
        assert_eq!(a.objective.matrix(), b.objective.matrix());
        assert_eq!(a.x_star, b.x_star);
        assert_eq!(a.objective.observation(), b.objective.observation());
        let c = gen_logistic_correlated(10, 8, 2, 0.5, 42);
        let d = gen_logistic_correlated(10, 8, 2, 0.5, 42);
        assert_eq!(c.objective.labels(), d.objective.labels());
        assert_eq!(c.x_star, d.x_star);
    }

    #[test]
    fn gaussian_column_means_are_small() {
        // normalized column entries behave like N(0, 1/m)
        for seed in 0..20 {
            let inst = gen_gaussian_cs(16, 25, 2, seed);
            let a = inst.objective.matrix();
            for j in 0..16 {
                let mean: f64 = a.column(j).iter().sum::<f64>() / 25.0;
                assert!(mean.abs() < 4.0 / 5.0, "seed {seed} col {j} mean {mean}");
            }
        }
    }

    #[test]
    fn planted_system_is_exactly_consistent() {
        let inst = gen_dct_cs(40, 20, 5, 3);
        let r = inst.objective.matrix().dot(&inst.x_star) - inst.objective.observation();
        assert!(r.iter().all(|v| v.abs() == 0.0));
        assert_eq!(
            crate::sparse::support_of(&inst.x_star).len(),
            5,
            "planted values contain no zeros"
        );
    }

    #[test]
    fn dct_first_column_is_constant_before_normalization() {
        let inst = gen_dct_cs(16, 9, 2, 8);
        let a = inst.objective.matrix();
        let expected = 1.0 / 3.0; // cos(0) = 1 normalized by sqrt(m)
        for i in 0..9 {
            assert_relative_eq!(a[[i, 0]], expected, epsilon = 1e-12);
        }
        // all other raw entries are cosines, so magnitudes stay bounded by
        // the inverse column norm
        for j in 1..16 {
            let norm: f64 = a.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_relative_eq!(norm, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn independent_labels_split_evenly() {
        for m in [7usize, 8, 9] {
            let inst = gen_logistic_independent(5, m, 1);
            let ones: usize = inst.objective.labels().iter().map(|&b| b as usize).sum();
            let zeros = m - ones;
            assert!(ones.abs_diff(zeros) <= 1);
        }
    }

    #[test]
    fn ar_theta_limits() {
        let iid = gen_logistic_correlated(6, 4, 2, 0.0, 5);
        // theta = 1 keeps every row constant
        let flat = gen_logistic_correlated(6, 4, 2, 1.0, 5);
        let (FeatureMatrix::Dense(ai), FeatureMatrix::Dense(af)) =
            (iid.objective.features(), flat.objective.features())
        else {
            panic!("dense expected")
        };
        for i in 0..4 {
            for j in 1..6 {
                assert_relative_eq!(af[[i, j]], af[[i, 0]], epsilon = 1e-12);
            }
        }
        // theta = 0 rows are iid draws, so consecutive entries differ
        assert!((ai[[0, 1]] - ai[[0, 0]]).abs() > 1e-12);
    }

    #[test]
    fn ar_lag_one_autocorrelation_matches_theta() {
        let theta = 0.6;
        let inst = gen_logistic_correlated(2000, 8, 3, theta, 12);
        let FeatureMatrix::Dense(a) = inst.objective.features() else {
            panic!("dense expected")
        };
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..8 {
            for j in 1..2000 {
                num += a[[i, j]] * a[[i, j - 1]];
                den += a[[i, j - 1]] * a[[i, j - 1]];
            }
        }
        let rho = num / den;
        assert!((rho - theta).abs() < 0.05, "lag-1 correlation {rho}");
    }

    #[test]
    fn libsvm_walkthrough() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.libsvm");
        std::fs::write(&path, "1 1:0.5 3:-2\n0 2:1\n").unwrap();
        let inst = load_libsvm(&path).unwrap();
        assert_eq!(inst.objective.samples(), 2);
        assert_eq!(inst.objective.dim(), 3);
        assert_eq!(inst.objective.labels(), &[1.0, 0.0]);
        let x = DenseVector::from_vec(vec![1.0, 1.0, 1.0]);
        // rows (0.5, 0, -2) and (0, 1, 0)
        let g = inst.objective.gradient(&DenseVector::zeros(3));
        assert!(g.iter().all(|v| v.is_finite()));
        assert_relative_eq!(
            inst.objective.loss(&x),
            0.5 * ((crate::objective::softplus(-1.5) + 1.5) + crate::objective::softplus(1.0)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn libsvm_rejects_empty_and_bad_labels() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.libsvm");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(
            load_libsvm(&empty),
            Err(ProblemError::Parse { .. })
        ));
        let bad = dir.path().join("bad.libsvm");
        std::fs::write(&bad, "2 1:0.5\n").unwrap();
        assert!(matches!(load_libsvm(&bad), Err(ProblemError::Label { .. })));
        let mangled = dir.path().join("mangled.libsvm");
        std::fs::write(&mangled, "1 1:0.5\n0 oops\n").unwrap();
        match load_libsvm(&mangled) {
            Err(ProblemError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let minus = dir.path().join("minus.libsvm");
        std::fs::write(&minus, "-1 1:2\n1 1:-2\n").unwrap();
        let inst = load_libsvm(&minus).unwrap();
        assert_eq!(inst.objective.labels(), &[0.0, 1.0]);
    }

    #[test]
    fn libsvm_round_trip_preserves_features() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("round.libsvm");
        let inst = gen_logistic_independent(6, 9, 77);
        write_libsvm(&path, &inst).unwrap();
        let back = load_libsvm(&path).unwrap();
        assert_eq!(back.objective.samples(), 9);
        assert_eq!(back.objective.labels(), inst.objective.labels());
        let x = DenseVector::from_vec(vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]);
        assert_relative_eq!(
            back.objective.loss(&x),
            inst.objective.loss(&x),
            epsilon = 1e-12
        );
    }

    #[test]
    fn recovery_criterion() {
        let x_star = DenseVector::from_vec(vec![0.6, 0.8]);
        assert!(recovery_success(&x_star, &x_star));
        assert!(!recovery_success(&DenseVector::zeros(2), &x_star));
        let near = x_star.mapv(|v| 1.005 * v);
        assert!(recovery_success(&near, &x_star));
    }

    #[test]
    #[should_panic(expected = "undefined")]
    fn recovery_rejects_zero_truth() {
        let zero = DenseVector::zeros(2);
        recovery_success(&zero, &zero);
    }

    #[test]
    fn trial_seeds_are_spread_out() {
        let mut seen = std::collections::HashSet::new();
        for cell in 0..10 {
            for trial in 0..50 {
                assert!(seen.insert(trial_seed(7, cell, trial)));
            }
        }
    }
}
