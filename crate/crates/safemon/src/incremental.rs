//! Incremental learning for trajectory predictors: cluster high-error windows
//! into distribution prototypes, fine-tune a predictor per admitted cluster,
//! and select among (prototype, predictor) pairs at runtime by history
//! likelihood.

use crate::predictor::{MlpPredictor, Normalizer, PredictorError, TrainConfig, Window};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum IncrementalError {
    #[error("k-means needs at least {k} points, got {points}")]
    InsufficientPoints { k: usize, points: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("empty candidate range for k")]
    EmptyKRange,
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

/// K-means via Lloyd's iteration with farthest-point seeding.
///
/// Runs to an assignment fixed-point or 100 iterations; empty clusters are
/// re-seeded from the point farthest from its assigned center.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<usize>), IncrementalError> {
    if k == 0 {
        return Err(IncrementalError::ZeroK);
    }
    if points.len() < k {
        return Err(IncrementalError::InsufficientPoints {
            k,
            points: points.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())].clone());
    while centers.len() < k {
        // farthest-point seeding
        let (best, _) = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d = centers
                    .iter()
                    .map(|c| sq_dist(p, c))
                    .fold(f64::INFINITY, f64::min);
                (i, d)
            })
            .fold((0, f64::NEG_INFINITY), |acc, cur| {
                if cur.1 > acc.1 {
                    cur
                } else {
                    acc
                }
            });
        centers.push(points[best].clone());
    }

    let mut assignments = vec![0usize; points.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = nearest_center(p, &centers);
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        // recompute centers
        let d = points[0].len();
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, &x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed from the globally farthest point
                let (far, _) = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, sq_dist(p, &centers[assignments[i]])))
                    .fold((0, f64::NEG_INFINITY), |acc, cur| {
                        if cur.1 > acc.1 {
                            cur
                        } else {
                            acc
                        }
                    });
                centers[c] = points[far].clone();
            } else {
                for (j, s) in sums[c].iter().enumerate() {
                    centers[c][j] = s / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok((centers, assignments))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest_center(p: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Sum of squared distances from each point to its assigned center.
pub fn inertia(points: &[Vec<f64>], centers: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centers[a]))
        .sum()
}

/// Geometric elbow: the candidate `k` whose `(k, inertia)` point lies
/// farthest (perpendicularly) from the chord joining the first and last
/// candidates. Ties and degenerate chords resolve to the smallest `k`.
pub fn elbow_select_k(
    points: &[Vec<f64>],
    k_range: &[usize],
    seed: u64,
) -> Result<usize, IncrementalError> {
    if k_range.is_empty() {
        return Err(IncrementalError::EmptyKRange);
    }
    if k_range.len() == 1 {
        return Ok(k_range[0]);
    }
    let inertias: Vec<f64> = k_range
        .iter()
        .map(|&k| {
            let (centers, assignments) = kmeans(points, k, seed)?;
            Ok(inertia(points, &centers, &assignments))
        })
        .collect::<Result<_, IncrementalError>>()?;
    Ok(elbow_from_inertias(k_range, &inertias))
}

/// Elbow selection on a precomputed inertia curve.
pub fn elbow_from_inertias(k_range: &[usize], inertias: &[f64]) -> usize {
    let (x0, y0) = (k_range[0] as f64, inertias[0]);
    let (x1, y1) = (
        *k_range.last().unwrap() as f64,
        *inertias.last().unwrap(),
    );
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len = dx.hypot(dy);
    let mut best_k = k_range[0];
    let mut best_dist = f64::NEG_INFINITY;
    for (&k, &inr) in k_range.iter().zip(inertias) {
        let dist = if len < 1e-12 {
            0.0
        } else {
            (dx * (inr - y0) - dy * (k as f64 - x0)).abs() / len
        };
        if dist > best_dist + 1e-12 {
            best_dist = dist;
            best_k = k;
        }
    }
    best_k
}

/// Clusters whose fraction of points flagged as coming from the high-error
/// set `W` reaches `ratio_threshold`.
pub fn admit_clusters(
    assignments: &[usize],
    from_w: &[bool],
    n_clusters: usize,
    ratio_threshold: f64,
) -> Vec<usize> {
    let mut total = vec![0usize; n_clusters];
    let mut w_count = vec![0usize; n_clusters];
    for (&a, &w) in assignments.iter().zip(from_w) {
        total[a] += 1;
        if w {
            w_count[a] += 1;
        }
    }
    (0..n_clusters)
        .filter(|&c| {
            total[c] > 0 && (w_count[c] as f64 / total[c] as f64) >= ratio_threshold
        })
        .collect()
}

/// Cluster prototype: center and per-dimension scale of a flattened
/// (h+H)-step window in normalized space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub center: Vec<f64>,
    /// Per-dimension standard deviation, floored at 1e-6.
    pub scale: Vec<f64>,
    pub member_count: usize,
    pub label: String,
}

impl Prototype {
    /// Fits center and scale over pre-normalized flattened windows.
    pub fn fit(points: &[Vec<f64>], label: impl Into<String>) -> Self {
        let n = points.len();
        let d = points[0].len();
        let mut center = vec![0.0; d];
        for p in points {
            for (c, &x) in center.iter_mut().zip(p) {
                *c += x / n as f64;
            }
        }
        let mut scale = vec![0.0; d];
        for p in points {
            for j in 0..d {
                scale[j] += (p[j] - center[j]).powi(2) / n as f64;
            }
        }
        for s in scale.iter_mut() {
            *s = s.sqrt().max(1e-6);
        }
        Self {
            center,
            scale,
            member_count: n,
            label: label.into(),
        }
    }

    /// Diagonal-Gaussian log-likelihood of a point against the first
    /// `point.len()` dimensions of the prototype.
    pub fn log_likelihood(&self, point: &[f64]) -> f64 {
        let mut ll = 0.0;
        for (j, &x) in point.iter().enumerate() {
            let s = self.scale[j];
            let z = (x - self.center[j]) / s;
            ll += -0.5 * z * z - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        }
        ll
    }
}

/// Ordered list of (prototype, predictor) pairs; entry 0 is the base
/// in-distribution pair. Selection normalizes raw histories with the shared
/// normalizer before scoring prototypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionPredictorSet {
    pub norm: Normalizer,
    pub pairs: Vec<(Prototype, MlpPredictor)>,
}

/// Configuration for one incremental update pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IncrementalConfig {
    /// Candidate cluster counts for the elbow method.
    pub k_candidates: Vec<usize>,
    /// Minimum fraction of high-error points for a cluster to be admitted.
    pub ratio_threshold: f64,
    pub seed: u64,
    pub fine_tune: TrainConfig,
}

impl Default for IncrementalConfig {
    fn default() -> Self {
        Self {
            k_candidates: vec![1, 2, 3, 4],
            ratio_threshold: 0.7,
            seed: 0,
            fine_tune: TrainConfig::default(),
        }
    }
}

/// Outcome of [`incremental_update`]: the extended set plus a flag noting
/// whether any cluster survived admission.
#[derive(Debug)]
pub struct IncrementalOutcome {
    pub dp: DistributionPredictorSet,
    pub clusters_admitted: usize,
    pub selected_k: usize,
}

impl DistributionPredictorSet {
    /// Base set: the prototype is fitted on the training split so the base
    /// predictor competes in selection on equal terms.
    pub fn base(train_windows: &[Window], base: MlpPredictor) -> Self {
        let norm = Normalizer::fit(train_windows);
        let flat: Vec<Vec<f64>> = train_windows
            .iter()
            .map(|w| {
                let mut v = norm.normalize_rows(&w.history);
                v.extend(norm.normalize_rows(&w.horizon));
                v
            })
            .collect();
        let proto = Prototype::fit(&flat, "base");
        Self {
            norm,
            pairs: vec![(proto, base)],
        }
    }

    /// Scores each prototype by the diagonal-Gaussian log-likelihood of the
    /// normalized, flattened history against the history-dimension prefix of
    /// the prototype; ties go to the lowest index (base first).
    pub fn select_predictor(&self, history: &[Vec<f64>]) -> (&MlpPredictor, &str) {
        let flat = self.norm.normalize_rows(history);
        let mut best = 0usize;
        let mut best_ll = f64::NEG_INFINITY;
        for (i, (proto, _)) in self.pairs.iter().enumerate() {
            let ll = proto.log_likelihood(&flat);
            if ll > best_ll + 1e-12 {
                best_ll = ll;
                best = i;
            }
        }
        let (proto, pred) = &self.pairs[best];
        (pred, &proto.label)
    }
}

/// One pass of the incremental-learning update: cluster the high-error
/// windows `w_set` (optionally against in-distribution reference windows for
/// the admission ratio), fine-tune the base predictor per admitted cluster,
/// and append the new (prototype, predictor) pairs. Existing pairs are never
/// mutated or removed.
pub fn incremental_update(
    dp: &DistributionPredictorSet,
    w_set: &[Window],
    reference: &[Window],
    base: &MlpPredictor,
    cfg: &IncrementalConfig,
) -> Result<IncrementalOutcome, IncrementalError> {
    assert!(!w_set.is_empty(), "high-error window set must be nonempty");
    let flatten = |w: &Window| -> Vec<f64> {
        let mut v = dp.norm.normalize_rows(&w.history);
        v.extend(dp.norm.normalize_rows(&w.horizon));
        v
    };
    let mut points: Vec<Vec<f64>> = w_set.iter().map(flatten).collect();
    let mut from_w = vec![true; points.len()];
    points.extend(reference.iter().map(flatten));
    from_w.extend(std::iter::repeat(false).take(reference.len()));

    let k_candidates: Vec<usize> = cfg
        .k_candidates
        .iter()
        .copied()
        .filter(|&k| k <= points.len())
        .collect();
    if k_candidates.is_empty() {
        return Err(IncrementalError::InsufficientPoints {
            k: *cfg.k_candidates.first().unwrap_or(&1),
            points: points.len(),
        });
    }
    let k = elbow_select_k(&points, &k_candidates, cfg.seed)?;
    let (_, assignments) = kmeans(&points, k, cfg.seed)?;
    let admitted = admit_clusters(&assignments, &from_w, k, cfg.ratio_threshold);

    let mut dp_out = dp.clone();
    let mut appended = 0usize;
    for &cluster in &admitted {
        let member_idx: Vec<usize> = (0..w_set.len())
            .filter(|&i| assignments[i] == cluster)
            .collect();
        if member_idx.is_empty() {
            continue;
        }
        let members: Vec<Window> = member_idx.iter().map(|&i| w_set[i].clone()).collect();
        let crash = vec![false; members.len()];
        let predictor = base.fine_tune(&members, &crash, &cfg.fine_tune)?;
        let member_points: Vec<Vec<f64>> =
            member_idx.iter().map(|&i| points[i].clone()).collect();
        let label = format!("ood-{}", dp_out.pairs.len());
        let proto = Prototype::fit(&member_points, label);
        dp_out.pairs.push((proto, predictor));
        appended += 1;
    }
    Ok(IncrementalOutcome {
        dp: dp_out,
        clusters_admitted: appended,
        selected_k: k,
    })
}
