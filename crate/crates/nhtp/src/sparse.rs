//! Hard-thresholding operator, best-s support selection and support-set algebra.
//!
//! The operator `P_s` maps a vector to its closest s-sparse vector in the
//! Euclidean distance, obtained by retaining the s entries of largest
//! magnitude. Ties make `P_s` set-valued; everything here resolves ties with
//! one canonical rule (magnitude descending, then index ascending) so that
//! repeated runs are bit-for-bit reproducible.

use crate::DenseVector;

/// An ordered set of coordinate indices, strictly increasing, no duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SupportSet {
    indices: Vec<usize>,
}

impl SupportSet {
    /// Builds a support set from arbitrary indices; sorts and rejects duplicates.
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        SupportSet { indices }
    }

    /// Builds from indices already sorted in strictly increasing order.
    pub fn from_sorted(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        SupportSet { indices }
    }

    pub fn empty() -> Self {
        SupportSet { indices: Vec::new() }
    }

    /// The full index set `{0, .., n-1}`.
    pub fn full(n: usize) -> Self {
        SupportSet { indices: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Position of index `i` within the set, if present.
    pub fn position(&self, i: usize) -> Option<usize> {
        self.indices.binary_search(&i).ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    /// Set difference `self \ other`.
    pub fn difference(&self, other: &SupportSet) -> SupportSet {
        SupportSet {
            indices: self.iter().filter(|&i| !other.contains(i)).collect(),
        }
    }

    /// Complement within `{0, .., n-1}`.
    pub fn complement(&self, n: usize) -> SupportSet {
        SupportSet {
            indices: (0..n).filter(|&i| !self.contains(i)).collect(),
        }
    }
}

impl FromIterator<usize> for SupportSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        SupportSet::new(iter.into_iter().collect())
    }
}

/// Result of applying the hard-thresholding operator.
#[derive(Debug, Clone)]
pub struct ThresholdResult {
    /// The canonical member of `P_s(x)`: agrees with the input on `support`,
    /// zero elsewhere.
    pub vector: DenseVector,
    /// Exactly `min(s, n)` indices, padded with the lowest-index zero
    /// positions when the input has fewer than `s` nonzeros.
    pub support: SupportSet,
    /// The s-th largest absolute value `x_(s)` (the smallest retained magnitude).
    pub sth_abs: f64,
}

/// Indices of `x` ordered by magnitude descending, lowest index first on ties.
fn ranked_indices(x: &DenseVector) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| {
        x[b].abs()
            .total_cmp(&x[a].abs())
            .then_with(|| a.cmp(&b))
    });
    order
}

/// Applies the hard-thresholding operator `P_s`, keeping the `s` largest
/// entries in magnitude and zeroing the rest.
///
/// Ties are broken canonically: magnitude descending, then index ascending.
/// With `s >= x.len()` the input is returned unchanged.
pub fn hard_threshold(x: &DenseVector, s: usize) -> ThresholdResult {
    assert!(s >= 1, "sparsity level s must be at least 1");
    debug_assert!(x.iter().all(|v| v.is_finite()), "non-finite entry in input");
    let n = x.len();
    let keep = s.min(n);
    let order = ranked_indices(x);
    let mut support: Vec<usize> = order[..keep].to_vec();
    support.sort_unstable();
    let mut vector = DenseVector::zeros(n);
    let mut sth_abs = f64::INFINITY;
    for &i in &support {
        vector[i] = x[i];
        sth_abs = sth_abs.min(x[i].abs());
    }
    if !sth_abs.is_finite() {
        sth_abs = 0.0;
    }
    ThresholdResult {
        vector,
        support: SupportSet::from_sorted(support),
        sth_abs,
    }
}

/// The canonical best-s support of `u`: the index set of the `s` largest
/// absolute values, tie-broken as in [`hard_threshold`].
pub fn best_s_support(u: &DenseVector, s: usize) -> SupportSet {
    hard_threshold(u, s).support
}

/// Set difference `prev \ cur`, the indices dropped when the working support
/// moves from `prev` to `cur`.
pub fn support_diff(prev: &SupportSet, cur: &SupportSet) -> SupportSet {
    prev.difference(cur)
}

/// Distance from `x` to the canonical member of `P_s(u)`.
///
/// When `P_s(u)` is single-valued this equals the distance from `x` to the
/// set `P_s(u)`; a distance of zero certifies the fixed-point relation
/// `x = P_s(u)`.
pub fn dist_to_projection(x: &DenseVector, u: &DenseVector, s: usize) -> f64 {
    let p = hard_threshold(u, s);
    debug_assert_eq!(x.len(), u.len());
    x.iter()
        .zip(p.vector.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// The s-th largest absolute value among the entries of `x` (zero when `x`
/// has fewer than `s` entries of any size, matching the padded support).
pub fn sth_largest_abs(x: &DenseVector, s: usize) -> f64 {
    hard_threshold(x, s).sth_abs
}

/// Indices of the nonzero entries of `x`.
pub fn support_of(x: &DenseVector) -> SupportSet {
    SupportSet::from_sorted((0..x.len()).filter(|&i| x[i] != 0.0).collect())
}
