//! Small MLP trajectory predictors: map an h-step state history to an H-step
//! state forecast.
//!
//! Training minimizes the weighted MAE loss
//! `L = beta * L_S + (1 - beta) * L_C`, where `L_S` and `L_C` are the mean
//! absolute errors over windows from non-crash and crash episodes
//! respectively, using seeded mini-batch gradient descent with weight decay.
//! Predictors output absolute states; an optional constant-velocity baseline
//! lets the network learn only a residual for multi-agent states.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One history-horizon pair cut from a source trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    /// h x d states observed before the forecast.
    pub history: Vec<Vec<f64>>,
    /// H x d states to be predicted.
    pub horizon: Vec<Vec<f64>>,
    pub episode_id: usize,
    pub start_time: usize,
}

impl Window {
    pub fn h(&self) -> usize {
        self.history.len()
    }

    pub fn horizon_len(&self) -> usize {
        self.horizon.len()
    }

    pub fn dim(&self) -> usize {
        self.history[0].len()
    }

    /// History followed by horizon, flattened row-major to (h+H)*d values.
    pub fn flatten(&self) -> Vec<f64> {
        self.history
            .iter()
            .chain(&self.horizon)
            .flatten()
            .copied()
            .collect()
    }
}

/// Per-state-dimension z-score statistics, frozen from a training split and
/// applied identically at inference and fine-tuning time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits per-dimension statistics over every state in every window
    /// (history and horizon rows alike). Near-constant dimensions keep a unit
    /// scale.
    pub fn fit(windows: &[Window]) -> Self {
        let d = windows[0].dim();
        let mut mean = vec![0.0; d];
        let mut count = 0usize;
        for w in windows {
            for row in w.history.iter().chain(&w.horizon) {
                for j in 0..d {
                    mean[j] += row[j];
                }
                count += 1;
            }
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        let mut var = vec![0.0; d];
        for w in windows {
            for row in w.history.iter().chain(&w.horizon) {
                for j in 0..d {
                    var[j] += (row[j] - mean[j]).powi(2);
                }
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let v = v / count as f64;
                if v < 1e-12 {
                    1.0
                } else {
                    v.sqrt()
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn normalize_state(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .enumerate()
            .map(|(j, &x)| (x - self.mean[j]) / self.std[j])
            .collect()
    }

    /// Flattens and normalizes a stack of states row-major.
    pub fn normalize_rows(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().flat_map(|r| self.normalize_state(r)).collect()
    }
}

/// Constant-velocity baseline for multi-agent states: the listed `(x, y)`
/// dimension pairs are linearly extrapolated from the last two history
/// states, all other dimensions are held at their last value. The network
/// then predicts a residual on top of this baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvBaseline {
    pub agents: Vec<(usize, usize)>,
}

impl CvBaseline {
    /// H x d baseline forecast from the history.
    pub fn forecast(&self, history: &[Vec<f64>], horizon_len: usize) -> Vec<Vec<f64>> {
        let last = history.last().expect("history must be nonempty");
        let prev = if history.len() >= 2 {
            &history[history.len() - 2]
        } else {
            last
        };
        let d = last.len();
        let mut vel = vec![0.0; d];
        for &(ix, iy) in &self.agents {
            vel[ix] = last[ix] - prev[ix];
            vel[iy] = last[iy] - prev[iy];
        }
        (1..=horizon_len)
            .map(|k| {
                (0..d)
                    .map(|j| last[j] + k as f64 * vel[j])
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    /// Row-major out_dim x in_dim weights.
    w: Vec<f64>,
    b: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl Layer {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.b.clone();
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            *out_v += row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
        out
    }
}

/// Feedforward trajectory predictor with rectifier hidden layers and a linear
/// output, plus frozen input normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpPredictor {
    pub format_version: u32,
    pub history_len: usize,
    pub horizon_len: usize,
    pub state_dim: usize,
    layers: Vec<Layer>,
    pub norm: Normalizer,
    pub cv_baseline: Option<CvBaseline>,
    pub seed: u64,
    pub epochs_trained: usize,
    pub final_loss: f64,
    pub loss_curve: Vec<f64>,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Loss mix: weight of the non-crash MAE term (crash term gets 1-beta).
    pub beta: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 5e-4,
            weight_decay: 1e-4,
            beta: 0.5,
            batch_size: 32,
            seed: 0,
            hidden: vec![200, 200],
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PredictorError {
    #[error("history shape {got_h}x{got_d} does not match predictor input {want_h}x{want_d}")]
    ShapeMismatch {
        got_h: usize,
        got_d: usize,
        want_h: usize,
        want_d: usize,
    },
    #[error("training data is empty")]
    NoData,
    #[error("crash label count {labels} does not match window count {windows}")]
    LabelMismatch { labels: usize, windows: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NanLoss { epoch: usize },
    #[error("learning rate must be positive")]
    BadLearningRate,
}

impl MlpPredictor {
    /// Freshly initialized network (no training). Exposed for tests and for
    /// hand-constructed predictors.
    pub fn with_weights(
        history_len: usize,
        horizon_len: usize,
        state_dim: usize,
        layer_weights: Vec<(Vec<f64>, Vec<f64>)>,
        norm: Normalizer,
    ) -> Self {
        let mut layers = Vec::new();
        let mut in_dim = history_len * state_dim;
        for (w, b) in layer_weights {
            let out_dim = b.len();
            assert_eq!(w.len(), out_dim * in_dim, "weight matrix shape mismatch");
            layers.push(Layer {
                w,
                b,
                in_dim,
                out_dim,
            });
            in_dim = out_dim;
        }
        assert_eq!(
            layers.last().map(|l| l.out_dim),
            Some(horizon_len * state_dim),
            "output layer must produce horizon_len * state_dim values"
        );
        Self {
            format_version: 1,
            history_len,
            horizon_len,
            state_dim,
            layers,
            norm,
            cv_baseline: None,
            seed: 0,
            epochs_trained: 0,
            final_loss: f64::NAN,
            loss_curve: Vec::new(),
        }
    }

    fn init(h: usize, horizon: usize, d: usize, cfg: &TrainConfig, norm: Normalizer) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut sizes = vec![h * d];
        sizes.extend(&cfg.hidden);
        sizes.push(horizon * d);
        let mut layers = Vec::new();
        for win in sizes.windows(2) {
            let (in_dim, out_dim) = (win[0], win[1]);
            let scale = (2.0 / in_dim as f64).sqrt();
            let w = (0..in_dim * out_dim)
                .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale)
                .collect();
            layers.push(Layer {
                w,
                b: vec![0.0; out_dim],
                in_dim,
                out_dim,
            });
        }
        Self {
            format_version: 1,
            history_len: h,
            horizon_len: horizon,
            state_dim: d,
            layers,
            norm,
            cv_baseline: None,
            seed: cfg.seed,
            epochs_trained: 0,
            final_loss: f64::NAN,
            loss_curve: Vec::new(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Deterministic forward pass; output is the H x d forecast of absolute
    /// states.
    pub fn predict(&self, history: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, PredictorError> {
        if history.len() != self.history_len || history[0].len() != self.state_dim {
            return Err(PredictorError::ShapeMismatch {
                got_h: history.len(),
                got_d: history[0].len(),
                want_h: self.history_len,
                want_d: self.state_dim,
            });
        }
        let x = self.norm.normalize_rows(history);
        let (out, _) = self.forward(&x);
        let mut forecast: Vec<Vec<f64>> = out
            .chunks(self.state_dim)
            .map(|c| c.to_vec())
            .collect();
        if let Some(cv) = &self.cv_baseline {
            let baseline = cv.forecast(history, self.horizon_len);
            for (f, b) in forecast.iter_mut().zip(&baseline) {
                for (fv, bv) in f.iter_mut().zip(b) {
                    *fv += bv;
                }
            }
        }
        Ok(forecast)
    }

    /// Forward pass over normalized input; returns the output and the
    /// per-layer pre-activations needed for backprop.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&cur);
            activations.push(cur);
            if li + 1 < self.layers.len() {
                for v in z.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            cur = z;
        }
        (cur, activations)
    }

    /// Trains a fresh predictor on the given windows.
    pub fn train(
        data: &[Window],
        crash_labels: &[bool],
        cfg: &TrainConfig,
    ) -> Result<Self, PredictorError> {
        Self::train_with_baseline(data, crash_labels, cfg, None)
    }

    pub fn train_with_baseline(
        data: &[Window],
        crash_labels: &[bool],
        cfg: &TrainConfig,
        cv_baseline: Option<CvBaseline>,
    ) -> Result<Self, PredictorError> {
        if data.is_empty() {
            return Err(PredictorError::NoData);
        }
        let norm = Normalizer::fit(data);
        let mut p = Self::init(data[0].h(), data[0].horizon_len(), data[0].dim(), cfg, norm);
        p.cv_baseline = cv_baseline;
        p.optimize(data, crash_labels, cfg)?;
        Ok(p)
    }

    /// Continues optimization from the current weights, returning a new
    /// predictor; `self` is untouched. `epochs = 0` yields an exact copy.
    pub fn fine_tune(
        &self,
        data: &[Window],
        crash_labels: &[bool],
        cfg: &TrainConfig,
    ) -> Result<Self, PredictorError> {
        if data.is_empty() {
            return Err(PredictorError::NoData);
        }
        let mut p = self.clone();
        p.optimize(data, crash_labels, cfg)?;
        Ok(p)
    }

    fn optimize(
        &mut self,
        data: &[Window],
        crash_labels: &[bool],
        cfg: &TrainConfig,
    ) -> Result<(), PredictorError> {
        if crash_labels.len() != data.len() {
            return Err(PredictorError::LabelMismatch {
                labels: crash_labels.len(),
                windows: data.len(),
            });
        }
        if cfg.learning_rate <= 0.0 {
            return Err(PredictorError::BadLearningRate);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let inputs: Vec<Vec<f64>> = data.iter().map(|w| self.norm.normalize_rows(&w.history)).collect();
        let targets: Vec<Vec<f64>> = data
            .iter()
            .map(|w| {
                let mut t: Vec<f64> = w.horizon.iter().flatten().copied().collect();
                if let Some(cv) = &self.cv_baseline {
                    let baseline = cv.forecast(&w.history, self.horizon_len);
                    for (tv, bv) in t.iter_mut().zip(baseline.iter().flatten()) {
                        *tv -= bv;
                    }
                }
                t
            })
            .collect();

        let mut order: Vec<usize> = (0..data.len()).collect();
        for epoch in 0..cfg.epochs {
            // Fisher-Yates with the seeded stream keeps runs reproducible.
            for i in (1..order.len()).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for batch in order.chunks(cfg.batch_size.max(1)) {
                let loss = self.batch_step(batch, &inputs, &targets, crash_labels, cfg)?;
                epoch_loss += loss;
                batches += 1;
            }
            let loss = epoch_loss / batches as f64;
            if !loss.is_finite() {
                return Err(PredictorError::NanLoss { epoch });
            }
            self.loss_curve.push(loss);
            self.epochs_trained += 1;
            self.final_loss = loss;
        }
        Ok(())
    }

    fn batch_step(
        &mut self,
        batch: &[usize],
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        crash_labels: &[bool],
        cfg: &TrainConfig,
    ) -> Result<f64, PredictorError> {
        let n_safe = batch.iter().filter(|&&i| !crash_labels[i]).count();
        let n_crash = batch.len() - n_safe;
        let out_dim = self.horizon_len * self.state_dim;

        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
            .collect();
        let mut loss = 0.0;
        for &i in batch {
            let (out, acts) = self.forward(&inputs[i]);
            // Class weight: beta on the non-crash MAE, (1-beta) on the crash
            // MAE, each averaged within its class; empty class contributes 0.
            let class_n = if crash_labels[i] { n_crash } else { n_safe };
            let class_w = if crash_labels[i] {
                1.0 - cfg.beta
            } else {
                cfg.beta
            };
            let scale = class_w / (class_n as f64 * out_dim as f64);
            let mut delta: Vec<f64> = Vec::with_capacity(out_dim);
            for (o, t) in out.iter().zip(&targets[i]) {
                let r = o - t;
                loss += scale * r.abs();
                // MAE subgradient, defined 0 at the kink
                delta.push(scale * r.signum() * if r == 0.0 { 0.0 } else { 1.0 });
            }
            self.backprop(&delta, &acts, &mut grads);
        }
        // parameter update with L2 weight decay on weights only
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(&grads) {
            for (w, g) in layer.w.iter_mut().zip(gw) {
                *w -= cfg.learning_rate * (g + cfg.weight_decay * *w);
            }
            for (b, g) in layer.b.iter_mut().zip(gb) {
                *b -= cfg.learning_rate * g;
            }
        }
        Ok(loss)
    }

    fn backprop(&self, delta_out: &[f64], acts: &[Vec<f64>], grads: &mut [(Vec<f64>, Vec<f64>)]) {
        let mut delta = delta_out.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &acts[li];
            let (gw, gb) = &mut grads[li];
            for o in 0..layer.out_dim {
                let d = delta[o];
                if d != 0.0 {
                    let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (g, x) in row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
                gb[o] += d;
            }
            if li > 0 {
                let mut prev = vec![0.0; layer.in_dim];
                for o in 0..layer.out_dim {
                    let d = delta[o];
                    if d != 0.0 {
                        let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += d * w;
                        }
                    }
                }
                // ReLU gate: the stored activation is already rectified, so a
                // zero activation means a clamped unit.
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    /// Weighted-MAE loss of the current weights over a dataset (no updates).
    pub fn loss(&self, data: &[Window], crash_labels: &[bool], beta: f64) -> f64 {
        let mut safe_sum = 0.0;
        let mut safe_n = 0usize;
        let mut crash_sum = 0.0;
        let mut crash_n = 0usize;
        for (w, &crash) in data.iter().zip(crash_labels) {
            let pred = self.predict(&w.history).expect("shape checked by caller");
            let mae: f64 = pred
                .iter()
                .flatten()
                .zip(w.horizon.iter().flatten())
                .map(|(p, t)| (p - t).abs())
                .sum::<f64>()
                / (self.horizon_len * self.state_dim) as f64;
            if crash {
                crash_sum += mae;
                crash_n += 1;
            } else {
                safe_sum += mae;
                safe_n += 1;
            }
        }
        let l_s = if safe_n > 0 { safe_sum / safe_n as f64 } else { 0.0 };
        let l_c = if crash_n > 0 { crash_sum / crash_n as f64 } else { 0.0 };
        beta * l_s + (1.0 - beta) * l_c
    }

    /// Plain MAE (unweighted) over a dataset.
    pub fn mae(&self, data: &[Window]) -> f64 {
        let labels = vec![false; data.len()];
        self.loss(data, &labels, 1.0)
    }
}

/// Average displacement error: mean Euclidean distance between predicted and
/// true positions over the horizon, with positions read from the two indexed
/// state dimensions.
pub fn ade(
    predicted: &[Vec<f64>],
    truth: &[Vec<f64>],
    position_dims: (usize, usize),
) -> Result<f64, PredictorError> {
    if predicted.len() != truth.len()
        || predicted.is_empty()
        || predicted[0].len() != truth[0].len()
    {
        return Err(PredictorError::ShapeMismatch {
            got_h: predicted.len(),
            got_d: predicted.first().map_or(0, |r| r.len()),
            want_h: truth.len(),
            want_d: truth.first().map_or(0, |r| r.len()),
        });
    }
    let (ix, iy) = position_dims;
    let sum: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p[ix] - t[ix]).hypot(p[iy] - t[iy]))
        .sum();
    Ok(sum / predicted.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_window(val: f64) -> Window {
        Window {
            history: vec![vec![val, val]; 3],
            horizon: vec![vec![val, val]; 2],
            episode_id: 0,
            start_time: 0,
        }
    }

    /// Windows cut from noiseless constant-velocity 2-d motion.
    fn linear_windows(n: usize) -> (Vec<Window>, Vec<bool>) {
        let mut windows = Vec::new();
        for i in 0..n {
            let x0 = i as f64 * 0.1;
            let v = 0.5 + (i % 7) as f64 * 0.1;
            let row = |k: usize| vec![x0 + v * k as f64, 1.0 - (x0 + v * k as f64) * 0.5];
            windows.push(Window {
                history: (0..3).map(row).collect(),
                horizon: (3..5).map(row).collect(),
                episode_id: i,
                start_time: 0,
            });
        }
        let labels = vec![false; windows.len()];
        (windows, labels)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpPredictor::with_weights(
            2,
            2,
            1,
            vec![(vec![0.0; 2 * 2], vec![0.0; 2])],
            Normalizer::identity(1),
        );
        let out = p.predict(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(out, vec![vec![0.0], vec![0.0]]);
    }

    #[test]
    fn identity_copy_network_repeats_last_state() {
        // input (h=2, d=2) flattened [s0x s0y s1x s1y]; copy dims 2,3 twice
        let mut w = vec![0.0; 4 * 4];
        w[0 * 4 + 2] = 1.0;
        w[1 * 4 + 3] = 1.0;
        w[2 * 4 + 2] = 1.0;
        w[3 * 4 + 3] = 1.0;
        let p = MlpPredictor::with_weights(2, 2, 2, vec![(w, vec![0.0; 4])], Normalizer::identity(2));
        let out = p
            .predict(&[vec![1.0, 2.0], vec![5.0, 6.0]])
            .unwrap();
        assert_eq!(out, vec![vec![5.0, 6.0], vec![5.0, 6.0]]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = MlpPredictor::with_weights(
            2,
            1,
            1,
            vec![(vec![0.0; 2], vec![0.0])],
            Normalizer::identity(1),
        );
        assert!(matches!(
            p.predict(&[vec![1.0]]),
            Err(PredictorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn overfits_a_single_repeated_window() {
        let data = vec![constant_window(0.7); 8];
        let labels = vec![false; 8];
        let cfg = TrainConfig {
            epochs: 800,
            learning_rate: 2e-2,
            weight_decay: 0.0,
            beta: 0.5,
            batch_size: 8,
            seed: 7,
            hidden: vec![16],
        };
        let p = MlpPredictor::train(&data, &labels, &cfg).unwrap();
        // polish at a lower step size: the MAE plateau scales with the rate
        let p = p
            .fine_tune(
                &data,
                &labels,
                &TrainConfig {
                    epochs: 400,
                    learning_rate: 1e-3,
                    ..cfg
                },
            )
            .unwrap();
        assert!(p.mae(&data) < 1e-3, "final MAE {}", p.mae(&data));
    }

    #[test]
    fn beta_one_ignores_crash_windows() {
        // With beta = 1 the crash window contributes nothing: training on a
        // conflicting crash target must still fit the safe target exactly.
        let safe = constant_window(1.0);
        let mut crash = constant_window(1.0);
        crash.horizon = vec![vec![100.0, 100.0]; 2];
        let data = vec![safe.clone(), crash];
        let labels = vec![false, true];
        let cfg = TrainConfig {
            epochs: 600,
            learning_rate: 2e-2,
            weight_decay: 0.0,
            beta: 1.0,
            batch_size: 2,
            seed: 3,
            hidden: vec![8],
        };
        let p = MlpPredictor::train(&data, &labels, &cfg).unwrap();
        let safe_mae = p.mae(&[safe]);
        assert!(safe_mae < 1e-2, "safe MAE {safe_mae}");
        assert_eq!(p.loss(&data, &labels, 1.0), safe_mae);
    }

    #[test]
    fn learns_constant_velocity_extrapolation() {
        let (data, labels) = linear_windows(60);
        let cfg = TrainConfig {
            epochs: 1500,
            learning_rate: 1e-2,
            weight_decay: 0.0,
            beta: 1.0,
            batch_size: 16,
            seed: 11,
            hidden: vec![32],
        };
        let p = MlpPredictor::train(&data, &labels, &cfg).unwrap();
        let (test, _) = linear_windows(9);
        for w in &test {
            let pred = p.predict(&w.history).unwrap();
            for (pr, tr) in pred.iter().zip(&w.horizon) {
                for (a, b) in pr.iter().zip(tr) {
                    assert!((a - b).abs() < 0.05, "pred {a} truth {b}");
                }
            }
        }
    }

    #[test]
    fn fine_tune_zero_epochs_is_identity() {
        let (data, labels) = linear_windows(10);
        let cfg = TrainConfig {
            epochs: 5,
            hidden: vec![8],
            ..Default::default()
        };
        let p = MlpPredictor::train(&data, &labels, &cfg).unwrap();
        let q = p
            .fine_tune(&data, &labels, &TrainConfig { epochs: 0, ..cfg })
            .unwrap();
        assert_eq!(p.layers, q.layers);
    }

    #[test]
    fn fine_tune_reduces_error_on_shifted_data() {
        let (data, labels) = linear_windows(40);
        let cfg = TrainConfig {
            epochs: 400,
            learning_rate: 5e-3,
            weight_decay: 0.0,
            beta: 1.0,
            batch_size: 16,
            seed: 5,
            hidden: vec![16],
        };
        let p = MlpPredictor::train(&data, &labels, &cfg).unwrap();
        // shifted dynamics: every horizon offset by a constant
        let shifted: Vec<Window> = data
            .iter()
            .map(|w| {
                let mut w = w.clone();
                for row in w.horizon.iter_mut() {
                    row[0] += 2.0;
                }
                w
            })
            .collect();
        let before = p.mae(&shifted);
        let ft = p
            .fine_tune(
                &shifted,
                &labels,
                &TrainConfig {
                    epochs: 300,
                    learning_rate: 5e-3,
                    ..cfg
                },
            )
            .unwrap();
        let after = ft.mae(&shifted);
        assert!(after < before, "fine-tune {after} vs {before}");
    }

    #[test]
    fn reproducible_training() {
        let (data, labels) = linear_windows(20);
        let cfg = TrainConfig {
            epochs: 30,
            hidden: vec![12],
            seed: 42,
            ..Default::default()
        };
        let a = MlpPredictor::train(&data, &labels, &cfg).unwrap();
        let b = MlpPredictor::train(&data, &labels, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn serialization_round_trip_is_bit_exact() {
        let (data, labels) = linear_windows(12);
        let cfg = TrainConfig {
            epochs: 10,
            hidden: vec![6],
            ..Default::default()
        };
        let p = MlpPredictor::train(&data, &labels, &cfg).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        let q: MlpPredictor = serde_json::from_str(&json).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // 3-ish parameter toy net: 1x1 input, one hidden unit, 1x1 output.
        let data = vec![Window {
            history: vec![vec![0.8]],
            horizon: vec![vec![1.7]],
            episode_id: 0,
            start_time: 0,
        }];
        let labels = vec![false];
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 1e-6,
            weight_decay: 0.0,
            beta: 1.0,
            batch_size: 1,
            seed: 2,
            hidden: vec![2],
        };
        let base = {
            let norm = Normalizer::identity(1);
            let mut p = MlpPredictor::init(1, 1, 1, &cfg, norm);
            p.layers[0].w = vec![0.9, -0.4];
            p.layers[0].b = vec![0.3, 0.2];
            p.layers[1].w = vec![0.7, 0.5];
            p.layers[1].b = vec![-0.1];
            p
        };

        // analytic gradient via one vanishing-lr step
        let loss_of = |p: &MlpPredictor| p.loss(&data, &labels, 1.0);
        let mut stepped = base.clone();
        stepped.optimize(&data, &labels, &cfg).unwrap();
        let eps = 1e-6;
        for li in 0..base.layers.len() {
            for wi in 0..base.layers[li].w.len() {
                let analytic =
                    (base.layers[li].w[wi] - stepped.layers[li].w[wi]) / cfg.learning_rate;
                let mut plus = base.clone();
                plus.layers[li].w[wi] += eps;
                let mut minus = base.clone();
                minus.layers[li].w[wi] -= eps;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
                let denom = numeric.abs().max(1e-3);
                assert!(
                    (analytic - numeric).abs() / denom < 1e-4,
                    "layer {li} w{wi}: analytic {analytic} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn ade_values() {
        let a = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        assert_eq!(ade(&a, &a, (0, 1)).unwrap(), 0.0);
        let b: Vec<Vec<f64>> = a
            .iter()
            .map(|r| vec![r[0] + 0.3, r[1] + 0.4])
            .collect();
        assert!((ade(&b, &a, (0, 1)).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cv_baseline_extrapolates_positions() {
        let cv = CvBaseline {
            agents: vec![(0, 1)],
        };
        let history = vec![vec![0.0, 0.0, 9.0], vec![1.0, 2.0, 9.0]];
        let f = cv.forecast(&history, 3);
        assert_eq!(f[0], vec![2.0, 4.0, 9.0]);
        assert_eq!(f[2], vec![4.0, 8.0, 9.0]);
    }
}
