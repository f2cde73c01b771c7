//! Conformal prediction over scalar non-conformity scores.
//!
//! Three threshold rules share one sorted score multiset:
//!
//! * inductive (ICP): the `ceil((n+1)(1-delta))`-th smallest score;
//! * robust (RCP): the `ceil((n+1)(1-delta+epsilon))`-th smallest score,
//!   valid under an `epsilon`-bounded total-variation shift and requiring a
//!   minimum calibration size;
//! * adaptive (ACP): the `ceil(n(1-delta_t))`-th smallest score, where the
//!   significance level `delta_t` is re-estimated online from the miscoverage
//!   indicator stream.
//!
//! The module also carries the distribution diagnostics used in evaluations:
//! a histogram total-variation estimate and a Gaussian-KDE log-likelihood.

use serde::{Deserialize, Serialize};

/// Sorted multiset of non-conformity scores.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NcsSet {
    scores: Vec<f64>,
}

impl NcsSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_scores(mut scores: Vec<f64>) -> Self {
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Self { scores }
    }

    pub fn insert(&mut self, score: f64) {
        debug_assert!(score.is_finite(), "non-conformity scores must be finite");
        let idx = self.scores.partition_point(|&s| s < score);
        self.scores.insert(idx, score);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Scores in ascending order.
    pub fn sorted(&self) -> &[f64] {
        &self.scores
    }

    /// 1-based order statistic.
    fn kth_smallest(&self, k: usize) -> f64 {
        self.scores[k - 1]
    }
}

/// One-sided prediction-region threshold `C_t`.
///
/// `+inf` encodes a maximally conservative region (requested quantile index
/// beyond the score count), `-inf` a degenerate empty one (index below 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionThreshold(pub f64);

impl RegionThreshold {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConformalError {
    #[error("calibration score set is empty")]
    EmptySet,
    #[error("delta must lie in (0,1), got {0}")]
    BadDelta(f64),
    #[error("epsilon must satisfy 0 <= epsilon < delta, got epsilon={epsilon}, delta={delta}")]
    BadEpsilon { epsilon: f64, delta: f64 },
    #[error(
        "calibration set too small for robust threshold: need index {index} but only {n} scores"
    )]
    CalibrationTooSmall { index: usize, n: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

/// Quantile index `ceil(x)` with a snap tolerance for products like
/// `20 * 0.95` that are integers up to float rounding.
fn ceil_index(x: f64) -> i64 {
    let nearest = x.round();
    if (x - nearest).abs() < 1e-9 {
        nearest as i64
    } else {
        x.ceil() as i64
    }
}

/// Inductive conformal threshold: the `ceil((n+1)(1-delta))`-th smallest
/// score, or `+inf` when that index exceeds `n`.
pub fn icp_threshold(ncs: &NcsSet, delta: f64) -> Result<RegionThreshold, ConformalError> {
    if !(0.0 < delta && delta < 1.0) {
        return Err(ConformalError::BadDelta(delta));
    }
    if ncs.is_empty() {
        return Err(ConformalError::EmptySet);
    }
    let n = ncs.len();
    let idx = ceil_index((n as f64 + 1.0) * (1.0 - delta));
    if idx > n as i64 {
        Ok(RegionThreshold(f64::INFINITY))
    } else {
        Ok(RegionThreshold(ncs.kth_smallest(idx.max(1) as usize)))
    }
}

/// Robust conformal threshold: the `ceil((n+1)(1-delta+epsilon))`-th smallest
/// score. Errors when the calibration set is too small to supply that index,
/// surfacing the minimum-size requirement to the caller.
pub fn rcp_threshold(
    ncs: &NcsSet,
    delta: f64,
    epsilon: f64,
) -> Result<RegionThreshold, ConformalError> {
    if !(0.0 < delta && delta < 1.0) {
        return Err(ConformalError::BadDelta(delta));
    }
    if !(0.0..1.0).contains(&epsilon) || epsilon >= delta {
        return Err(ConformalError::BadEpsilon { epsilon, delta });
    }
    if ncs.is_empty() {
        return Err(ConformalError::EmptySet);
    }
    let n = ncs.len();
    let idx = ceil_index((n as f64 + 1.0) * (1.0 - delta + epsilon));
    if idx > n as i64 {
        return Err(ConformalError::CalibrationTooSmall {
            index: idx as usize,
            n,
        });
    }
    Ok(RegionThreshold(ncs.kth_smallest(idx.max(1) as usize)))
}

/// Adaptive significance-level state: `delta_t` plus its update history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcpState {
    delta_target: f64,
    delta_t: f64,
    gamma: f64,
    step_count: usize,
    error_history: Vec<u8>,
}

impl AcpState {
    /// Starts with `delta_t = delta_target`.
    pub fn new(delta_target: f64, gamma: f64) -> Self {
        assert!(
            0.0 < delta_target && delta_target < 1.0,
            "delta must lie in (0,1)"
        );
        assert!(gamma > 0.0, "gamma must be positive");
        Self {
            delta_target,
            delta_t: delta_target,
            gamma,
            step_count: 0,
            error_history: Vec::new(),
        }
    }

    pub fn delta_target(&self) -> f64 {
        self.delta_target
    }

    /// Current significance level; deliberately unclamped and may leave (0,1).
    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn error_history(&self) -> &[u8] {
        &self.error_history
    }

    /// `delta_{t+1} = delta_t + gamma (delta - e_t)`.
    pub fn update(&mut self, e_t: u8) {
        debug_assert!(e_t <= 1);
        self.delta_t += self.gamma * (self.delta_target - e_t as f64);
        self.error_history.push(e_t);
        self.step_count += 1;
    }
}

/// Adaptive conformal threshold: the `ceil(n(1-delta_t))`-th smallest score.
///
/// Out-of-range significance levels map to infinite thresholds: `delta_t <= 0`
/// gives `+inf` (alarm always), `delta_t >= 1` gives `-inf` (alarm never).
pub fn acp_threshold(state: &AcpState, ncs: &NcsSet) -> Result<RegionThreshold, ConformalError> {
    if ncs.is_empty() {
        return Err(ConformalError::EmptySet);
    }
    let n = ncs.len();
    let idx = ceil_index(n as f64 * (1.0 - state.delta_t()));
    if idx < 1 {
        Ok(RegionThreshold(f64::NEG_INFINITY))
    } else if idx > n as i64 {
        Ok(RegionThreshold(f64::INFINITY))
    } else {
        Ok(RegionThreshold(ncs.kth_smallest(idx as usize)))
    }
}

/// Envelope constants: `p1 = (delta+gamma)/(T gamma)`,
/// `p2 = ((1-delta)+gamma)/(T gamma)`, and the deterministic coverage-error
/// bound `(max(delta_1, 1-delta_1)+gamma)/(T gamma)`.
pub fn coverage_bounds(t_total: usize, delta: f64, gamma: f64, delta_1: f64) -> (f64, f64, f64) {
    let t = t_total as f64;
    let p1 = (delta + gamma) / (t * gamma);
    let p2 = ((1.0 - delta) + gamma) / (t * gamma);
    let prop1 = (delta_1.max(1.0 - delta_1) + gamma) / (t * gamma);
    (p1, p2, prop1)
}

/// `1 - mean(e_t)`: fraction of steps whose score fell inside the region.
pub fn empirical_coverage(errors: &[u8]) -> Result<f64, ConformalError> {
    if errors.is_empty() {
        return Err(ConformalError::EmptyInput("errors"));
    }
    let mean = errors.iter().map(|&e| e as f64).sum::<f64>() / errors.len() as f64;
    Ok(1.0 - mean)
}

/// Histogram estimate of the total variation distance between two samples.
///
/// Both samples are binned with `bins` equal-width bins over their common
/// range; the estimate is half the L1 distance between the bin mass vectors,
/// always in [0, 1].
pub fn tv_distance_estimate(a: &[f64], b: &[f64], bins: usize) -> Result<f64, ConformalError> {
    if a.is_empty() {
        return Err(ConformalError::EmptyInput("first sample"));
    }
    if b.is_empty() {
        return Err(ConformalError::EmptyInput("second sample"));
    }
    assert!(bins >= 2, "need at least 2 bins");
    let lo = a
        .iter()
        .chain(b)
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = a
        .iter()
        .chain(b)
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        // All mass in one point: identical distributions under this estimator.
        return Ok(0.0);
    }
    let width = (hi - lo) / bins as f64;
    let bin_of = |x: f64| -> usize {
        let i = ((x - lo) / width) as usize;
        i.min(bins - 1)
    };
    let mut pa = vec![0.0; bins];
    let mut pb = vec![0.0; bins];
    for &x in a {
        pa[bin_of(x)] += 1.0 / a.len() as f64;
    }
    for &x in b {
        pb[bin_of(x)] += 1.0 / b.len() as f64;
    }
    let l1: f64 = pa.iter().zip(&pb).map(|(p, q)| (p - q).abs()).sum();
    Ok((0.5 * l1).clamp(0.0, 1.0))
}

/// Scott's bandwidth factor `n^(-1/(d+4))` for normalized data.
pub fn scott_bandwidth(n: usize, d: usize) -> f64 {
    (n as f64).powf(-1.0 / (d as f64 + 4.0))
}

/// Log-likelihood of `query` under an isotropic Gaussian KDE fit to
/// `reference`.
///
/// Data are z-score normalized per dimension with statistics from the
/// reference sample; dimensions with variance below 1e-12 are centered but
/// not rescaled.
pub fn kde_log_likelihood(
    reference: &[Vec<f64>],
    query: &[f64],
    bandwidth: f64,
) -> Result<f64, ConformalError> {
    if reference.is_empty() {
        return Err(ConformalError::EmptyInput("reference sample"));
    }
    assert!(bandwidth > 0.0, "bandwidth must be positive");
    let d = query.len();
    let n = reference.len();
    let mut mean = vec![0.0; d];
    for v in reference {
        assert_eq!(v.len(), d, "reference/query dimension mismatch");
        for (m, &x) in mean.iter_mut().zip(v) {
            *m += x / n as f64;
        }
    }
    let mut std = vec![0.0; d];
    for v in reference {
        for j in 0..d {
            std[j] += (v[j] - mean[j]).powi(2) / n as f64;
        }
    }
    for s in std.iter_mut() {
        *s = if *s < 1e-12 { 1.0 } else { s.sqrt() };
    }

    let norm = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(j, &x)| (x - mean[j]) / std[j])
            .collect()
    };
    let q = norm(query);
    let h2 = bandwidth * bandwidth;
    let log_norm_const = -(d as f64 / 2.0) * (2.0 * std::f64::consts::PI * h2).ln();

    // log mean of kernels via log-sum-exp
    let mut exponents = Vec::with_capacity(n);
    for v in reference {
        let x = norm(v);
        let sq: f64 = q.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum();
        exponents.push(-sq / (2.0 * h2));
    }
    let max_e = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = exponents.iter().map(|e| (e - max_e).exp()).sum();
    Ok(log_norm_const + max_e + (sum / n as f64).ln())
}
