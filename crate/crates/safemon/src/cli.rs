//! Experiment orchestration: dataset generation, predictor training and
//! calibration, monitoring campaigns over the mode × incremental-learning
//! grid, report emission, and the cartpole parameter sweep.
//!
//! Every artifact is written atomically and stamped with the configuration
//! hash and trial seed; `report` refuses to aggregate artifacts whose hash
//! does not match the configuration it was given.

use crate::config::{
    parse_provenance, provenance_line, write_atomic, ConfigError, ExperimentConfig, Study,
};
use crate::conformal::{tv_distance_estimate, NcsSet};
use crate::envs::{self, filter_min_length, Episode, OodScenario};
use crate::incremental::{
    incremental_update, DistributionPredictorSet, IncrementalConfig,
};
use crate::metrics::{
    aggregate, coverage_envelope_series, envelope_to_csv, error_sequence, AlarmRule,
    EpisodeOutcome, MetricsSummary,
};
use crate::monitor::{
    build_offline_calibration, records_to_csv, run_episode, MonitorConfig, UqMode,
};
use crate::predictor::{ade, CvBaseline, MlpPredictor, Window};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("{0}")]
    Runtime(String),
}

impl PipelineError {
    fn artifact(path: &Path, message: impl ToString) -> Self {
        Self::Artifact {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Runtime(e.to_string())
    }
}

/// Stable per-task seed derived from the trial seed and a task tag.
pub fn derive_seed(trial: u64, tag: &str, idx: u64) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(format!("{trial}/{tag}/{idx}").as_bytes());
    let d = hasher.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

fn simulate_episode(
    study: Study,
    scenario: &OodScenario,
    seed: u64,
) -> Result<Episode, PipelineError> {
    match study {
        Study::Hallway => {
            let world = envs::hallway::HallwayWorld::default();
            envs::hallway::simulate(&world, &envs::hallway::WallFollower::tuned(), scenario, seed)
                .map_err(|e| PipelineError::Runtime(e.to_string()))
        }
        Study::Racetrack => {
            let world = envs::racetrack::RacetrackWorld::default();
            envs::racetrack::simulate(&world, scenario, seed).map_err(PipelineError::Runtime)
        }
        Study::Cartpole => Err(PipelineError::Runtime(
            "cartpole supports only the sweep-cartpole command".into(),
        )),
    }
}

/// Minimum episode length admitted into datasets.
pub const MIN_EPISODE_LEN: usize = 25;
/// Cap on stored in-distribution reference windows.
const MAX_REFERENCE_WINDOWS: usize = 300;
/// Random calibration windows drawn per validation trace; keeps the offline
/// score set comfortably larger than the conformal quantile index needs even
/// when the validation split holds only a couple of episodes.
const CALIBRATION_SAMPLES_PER_TRACE: usize = 40;

fn trial_dir(config: &ExperimentConfig, trial: u64) -> PathBuf {
    config.output_dir.join(format!("trial_{trial}"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::artifact(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::artifact(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    write_atomic(path, text.as_bytes()).map_err(|e| PipelineError::artifact(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioCounts {
    pub generated: usize,
    pub kept: usize,
    pub filtered_short: usize,
    pub violating: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config_hash: String,
    pub trial_seed: u64,
    pub counts: BTreeMap<String, ScenarioCounts>,
    /// Train/val/test episode indices of the in-distribution scenario.
    pub id_split: (Vec<usize>, Vec<usize>, Vec<usize>),
    pub warnings: Vec<String>,
}

/// Simulates every (scenario, episode) cell of the campaign and writes the
/// per-episode CSV + manifest files plus the dataset manifest.
pub fn cmd_generate(config: &ExperimentConfig) -> Result<Vec<DatasetManifest>, PipelineError> {
    config.validate()?;
    let hash = config.hash();
    let mut manifests = Vec::new();
    if config.seeds.is_empty() {
        eprintln!("warning: no trial seeds configured; nothing to generate");
    }
    for &trial in &config.seeds {
        let dir = trial_dir(config, trial).join("dataset");
        let mut counts = BTreeMap::new();
        let mut warnings = Vec::new();
        let mut id_kept = 0usize;
        if config.episodes_per_scenario == 0 {
            warnings.push("episodes_per_scenario is 0; dataset is empty".into());
        }
        for scenario in &config.scenarios {
            let tag = scenario.tag();
            let episodes: Vec<Episode> = (0..config.episodes_per_scenario)
                .map(|i| simulate_episode(config.study, scenario, derive_seed(trial, &tag, i as u64)))
                .collect::<Result<_, _>>()?;
            let generated = episodes.len();
            let (kept, filtered_short) = filter_min_length(episodes, MIN_EPISODE_LEN);
            if filtered_short > 0 {
                warnings.push(format!(
                    "{tag}: {filtered_short} episode(s) shorter than {MIN_EPISODE_LEN} steps excluded"
                ));
            }
            let violating = kept.iter().filter(|e| e.violating()).count();
            let sub = dir.join(&tag);
            for (i, e) in kept.iter().enumerate() {
                let csv = format!("{}\n{}", provenance_line(&hash, trial), e.to_csv());
                write_atomic(&sub.join(format!("ep_{i}.csv")), csv.as_bytes())?;
                let mut manifest = e.manifest();
                manifest["config_hash"] = serde_json::json!(hash);
                manifest["trial_seed"] = serde_json::json!(trial);
                write_json(&sub.join(format!("ep_{i}.json")), &manifest)?;
            }
            if matches!(scenario, OodScenario::None) {
                id_kept = kept.len();
            }
            counts.insert(
                tag,
                ScenarioCounts {
                    generated,
                    kept: kept.len(),
                    filtered_short,
                    violating,
                },
            );
        }
        let indices: Vec<usize> = (0..id_kept).collect();
        let n_train = (id_kept as f64 * config.split.train).floor() as usize;
        let n_val = (id_kept as f64 * config.split.val).floor() as usize;
        let id_split = (
            indices[..n_train.min(id_kept)].to_vec(),
            indices[n_train.min(id_kept)..(n_train + n_val).min(id_kept)].to_vec(),
            indices[(n_train + n_val).min(id_kept)..].to_vec(),
        );
        let manifest = DatasetManifest {
            config_hash: hash.clone(),
            trial_seed: trial,
            counts,
            id_split,
            warnings,
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        manifests.push(manifest);
    }
    Ok(manifests)
}

fn load_episodes(dir: &Path, tag: &str) -> Result<Vec<Episode>, PipelineError> {
    let sub = dir.join(tag);
    let mut episodes = Vec::new();
    for i in 0.. {
        let csv_path = sub.join(format!("ep_{i}.csv"));
        if !csv_path.exists() {
            break;
        }
        let csv = std::fs::read_to_string(&csv_path)
            .map_err(|e| PipelineError::artifact(&csv_path, e))?;
        let manifest: serde_json::Value = read_json(&sub.join(format!("ep_{i}.json")))?;
        episodes.push(
            Episode::from_csv(&csv, &manifest)
                .map_err(|e| PipelineError::artifact(&csv_path, e))?,
        );
    }
    Ok(episodes)
}

/// Sliding windows (with stride and cap) from a set of episodes, labeled by
/// whether the window's horizon overlaps the pre-violation span.
pub fn extract_windows(
    episodes: &[Episode],
    h: usize,
    horizon: usize,
    stride: usize,
    max_windows: usize,
) -> (Vec<Window>, Vec<bool>) {
    let mut windows = Vec::new();
    let mut labels = Vec::new();
    'outer: for (ep_idx, e) in episodes.iter().enumerate() {
        let states = e.trace.states();
        if states.len() < h + horizon {
            continue;
        }
        let mut start = 0;
        while start + h + horizon <= states.len() {
            let horizon_end = start + h + horizon - 1;
            let crash = e
                .violation_time
                .map_or(false, |v| horizon_end + horizon >= v);
            windows.push(Window {
                history: states[start..start + h].to_vec(),
                horizon: states[start + h..start + h + horizon].to_vec(),
                episode_id: ep_idx,
                start_time: start,
            });
            labels.push(crash);
            if windows.len() >= max_windows {
                break 'outer;
            }
            start += stride;
        }
    }
    (windows, labels)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMeta {
    pub config_hash: String,
    pub trial_seed: u64,
    pub train_windows: usize,
    pub calibration_scores: usize,
    pub final_loss: f64,
}

/// Trains the base predictor on the train split and builds the offline
/// calibration set from the validation split.
pub fn cmd_train(config: &ExperimentConfig) -> Result<Vec<TrainMeta>, PipelineError> {
    config.validate()?;
    let hash = config.hash();
    let mut metas = Vec::new();
    for &trial in &config.seeds {
        let dir = trial_dir(config, trial);
        let manifest: DatasetManifest = read_json(&dir.join("dataset/manifest.json"))?;
        check_hash(&manifest.config_hash, &hash, &dir.join("dataset/manifest.json"))?;
        let id = load_episodes(&dir.join("dataset"), &OodScenario::None.tag())?;
        let (train_eps, val_eps, _) = pick_split(&id, &manifest.id_split);
        let m = &config.monitor;
        let (windows, labels) = extract_windows(
            &train_eps,
            m.history_len,
            m.horizon_len,
            config.train.window_stride,
            config.train.max_windows,
        );
        if windows.is_empty() {
            return Err(PipelineError::Runtime(format!(
                "trial {trial}: no training windows; generate a larger dataset"
            )));
        }
        let mut train_cfg = config.train.config.clone();
        train_cfg.seed = derive_seed(trial, "train", 0);
        let baseline = cv_baseline_for(config.study);
        let base = MlpPredictor::train_with_baseline(&windows, &labels, &train_cfg, baseline)
            .map_err(|e| PipelineError::Runtime(e.to_string()))?;
        let final_loss = base.final_loss;
        let dp = DistributionPredictorSet::base(&windows, base);

        let mon_cfg = config
            .monitor
            .to_monitor_config(config.study.safety_spec(), UqMode::Acp);
        let val_traces: Vec<_> = val_eps.iter().map(|e| e.trace.clone()).collect();
        let calibration = build_offline_calibration(
            &val_traces,
            &dp,
            &mon_cfg,
            CALIBRATION_SAMPLES_PER_TRACE,
            derive_seed(trial, "calibration", 0),
        )
        .map_err(|e| PipelineError::Runtime(e.to_string()))?;

        let reference: Vec<Window> = windows
            .iter()
            .take(MAX_REFERENCE_WINDOWS)
            .cloned()
            .collect();
        write_json(&dir.join("train/dp.json"), &dp)?;
        write_json(
            &dir.join("train/calibration.json"),
            &serde_json::json!({
                "config_hash": hash,
                "trial_seed": trial,
                "scores": calibration.sorted(),
            }),
        )?;
        write_json(&dir.join("train/reference_windows.json"), &reference)?;
        let meta = TrainMeta {
            config_hash: hash.clone(),
            trial_seed: trial,
            train_windows: windows.len(),
            calibration_scores: calibration.len(),
            final_loss,
        };
        write_json(&dir.join("train/meta.json"), &meta)?;
        metas.push(meta);
    }
    Ok(metas)
}

fn cv_baseline_for(study: Study) -> Option<CvBaseline> {
    match study {
        Study::Racetrack => Some(CvBaseline {
            agents: (0..=envs::racetrack::MAX_OBSTACLES)
                .map(|i| if i == 0 { (0, 1) } else { (2 + 2 * i, 3 + 2 * i) })
                .collect(),
        }),
        Study::Hallway => Some(CvBaseline {
            agents: vec![(0, 1)],
        }),
        Study::Cartpole => None,
    }
}

fn pick_split(
    episodes: &[Episode],
    split: &(Vec<usize>, Vec<usize>, Vec<usize>),
) -> (Vec<Episode>, Vec<Episode>, Vec<Episode>) {
    let pick = |idx: &[usize]| idx.iter().map(|&i| episodes[i].clone()).collect::<Vec<_>>();
    (pick(&split.0), pick(&split.1), pick(&split.2))
}

fn check_hash(found: &str, expected: &str, path: &Path) -> Result<(), PipelineError> {
    if found != expected {
        return Err(PipelineError::artifact(
            path,
            format!("config hash {found} does not match current config {expected}"),
        ));
    }
    Ok(())
}

/// One (scenario, mode, incremental-learning) cell of a monitoring campaign.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub config_hash: String,
    pub trial_seed: u64,
    pub scenario: OodScenario,
    pub uq_mode: UqMode,
    pub il: bool,
    pub outcomes: Vec<EpisodeOutcome>,
    /// Per-episode online non-conformity scores, in step order.
    pub online_scores: Vec<Vec<f64>>,
    pub skipped_short: usize,
    pub mean_ade: Option<f64>,
    pub clusters_admitted: usize,
    pub predictor_labels: Vec<String>,
}

fn cell_dir(dir: &Path, scenario: &OodScenario, uq: UqMode, il: bool) -> PathBuf {
    let il_tag = if il { "il" } else { "plain" };
    dir.join("monitor")
        .join(scenario.tag())
        .join(format!("{uq}_{il_tag}"))
}

/// Mean average displacement error of the selected predictors over an
/// episode, sampled at horizon-stride spacing.
fn episode_ade(
    dp: &DistributionPredictorSet,
    episode: &Episode,
    h: usize,
    horizon: usize,
) -> Option<f64> {
    let states = episode.trace.states();
    let mut values = Vec::new();
    let mut t = h - 1;
    while t + horizon < states.len() {
        let history = &states[t + 1 - h..=t];
        let (pred, _) = dp.select_predictor(history);
        let forecast = pred.predict(history).ok()?;
        let truth = &states[t + 1..=t + horizon];
        values.push(ade(&forecast, truth, (0, 1)).ok()?);
        t += horizon;
    }
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Runs the full monitoring grid for every trial: a plain pass per
/// (scenario, mode), plus — when incremental learning is enabled — a
/// high-error-window collection pass, one incremental update per scenario,
/// and a second pass with the extended predictor set.
pub fn cmd_monitor(config: &ExperimentConfig) -> Result<(), PipelineError> {
    config.validate()?;
    let hash = config.hash();
    for &trial in &config.seeds {
        let dir = trial_dir(config, trial);
        let manifest: DatasetManifest = read_json(&dir.join("dataset/manifest.json"))?;
        check_hash(&manifest.config_hash, &hash, &dir.join("dataset/manifest.json"))?;
        let dp: DistributionPredictorSet = read_json(&dir.join("train/dp.json"))?;
        let calib: serde_json::Value = read_json(&dir.join("train/calibration.json"))?;
        check_hash(
            calib["config_hash"].as_str().unwrap_or(""),
            &hash,
            &dir.join("train/calibration.json"),
        )?;
        let offline = NcsSet::from_scores(
            calib["scores"]
                .as_array()
                .map(|a| a.iter().filter_map(|v| v.as_f64()).collect())
                .unwrap_or_default(),
        );
        let reference: Vec<Window> = read_json(&dir.join("train/reference_windows.json"))?;
        let id_all = load_episodes(&dir.join("dataset"), &OodScenario::None.tag())?;
        let spec = config.study.safety_spec();

        for scenario in &config.scenarios {
            let tag = scenario.tag();
            let eval: Vec<Episode> = if matches!(scenario, OodScenario::None) {
                pick_split(&id_all, &manifest.id_split).2
            } else {
                load_episodes(&dir.join("dataset"), &tag)?
            };

            // incremental update, once per scenario, driven by an ACP
            // collection pass over freshly simulated episodes
            let mut dp_il = None;
            let mut clusters_admitted = 0usize;
            if config.il {
                let collect_cfg = config.monitor.to_monitor_config(spec.clone(), UqMode::Acp);
                let mut w_set = Vec::new();
                for i in 0..config.episodes_per_scenario {
                    let seed = derive_seed(trial, &format!("collect_{tag}"), i as u64);
                    let e = simulate_episode(config.study, scenario, seed)?;
                    if e.len() < config.monitor.t0 + 1 {
                        continue;
                    }
                    let run = run_episode(&collect_cfg, &dp, &e.trace, None, i)
                        .map_err(|e| PipelineError::Runtime(e.to_string()))?;
                    w_set.extend(run.collected);
                }
                write_json(
                    &dir.join("monitor").join(&tag).join("w_windows.json"),
                    &serde_json::json!({
                        "config_hash": hash,
                        "trial_seed": trial,
                        "count": w_set.len(),
                        "windows": w_set,
                    }),
                )?;
                if !w_set.is_empty() {
                    let mut fine_tune = config.train.config.clone();
                    fine_tune.epochs = config.incremental.fine_tune_epochs;
                    fine_tune.learning_rate = config.incremental.fine_tune_learning_rate;
                    fine_tune.seed = derive_seed(trial, &format!("il_{tag}"), 0);
                    let il_cfg = IncrementalConfig {
                        k_candidates: config.incremental.k_candidates.clone(),
                        ratio_threshold: config.incremental.ratio_threshold,
                        seed: derive_seed(trial, &format!("il_{tag}"), 1),
                        fine_tune,
                    };
                    let outcome =
                        incremental_update(&dp, &w_set, &reference, &dp.pairs[0].1, &il_cfg)
                            .map_err(|e| PipelineError::Runtime(e.to_string()))?;
                    clusters_admitted = outcome.clusters_admitted;
                    dp_il = Some(outcome.dp);
                }
            }

            for &uq in &config.uq_modes {
                let mon_cfg = config.monitor.to_monitor_config(spec.clone(), uq);
                let mut variants: Vec<(bool, &DistributionPredictorSet)> = vec![(false, &dp)];
                if config.il {
                    variants.push((true, dp_il.as_ref().unwrap_or(&dp)));
                }
                for (il_flag, dpx) in variants {
                    let cell = run_cell(
                        &mon_cfg,
                        dpx,
                        &eval,
                        Some(&offline),
                        &hash,
                        trial,
                        scenario,
                        uq,
                        il_flag,
                        clusters_admitted,
                    )?;
                    let cdir = cell_dir(&dir, scenario, uq, il_flag);
                    for (i, o) in cell.outcomes.iter().enumerate() {
                        let csv = format!(
                            "{}\n{}",
                            provenance_line(&hash, trial),
                            records_to_csv(&o.records)
                        );
                        write_atomic(&cdir.join(format!("records_ep{i}.csv")), csv.as_bytes())?;
                    }
                    write_json(&cdir.join("cell.json"), &cell)?;
                }
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    mon_cfg: &MonitorConfig,
    dp: &DistributionPredictorSet,
    eval: &[Episode],
    offline: Option<&NcsSet>,
    hash: &str,
    trial: u64,
    scenario: &OodScenario,
    uq: UqMode,
    il: bool,
    clusters_admitted: usize,
) -> Result<CellResult, PipelineError> {
    let mut outcomes = Vec::new();
    let mut online_scores = Vec::new();
    let mut skipped_short = 0usize;
    let mut ades = Vec::new();
    let mut predictor_labels: Vec<String> = Vec::new();
    for (i, e) in eval.iter().enumerate() {
        if e.len() < mon_cfg.t0 + 1 {
            skipped_short += 1;
            continue;
        }
        let run = run_episode(mon_cfg, dp, &e.trace, offline, i)
            .map_err(|err| PipelineError::Runtime(err.to_string()))?;
        for r in &run.records {
            if let Some(l) = &r.selected_predictor {
                if !predictor_labels.iter().any(|x| x == l) {
                    predictor_labels.push(l.clone());
                }
            }
        }
        outcomes.push(EpisodeOutcome::new(i, e.violation_time, run.records));
        online_scores.push(run.online_scores);
        if let Some(a) = episode_ade(dp, e, mon_cfg.history_len, mon_cfg.horizon_len) {
            ades.push(a);
        }
    }
    Ok(CellResult {
        config_hash: hash.to_string(),
        trial_seed: trial,
        scenario: *scenario,
        uq_mode: uq,
        il,
        outcomes,
        online_scores,
        skipped_short,
        mean_ade: if ades.is_empty() {
            None
        } else {
            Some(ades.iter().sum::<f64>() / ades.len() as f64)
        },
        clusters_admitted,
        predictor_labels,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub scenario: OodScenario,
    pub uq_mode: UqMode,
    pub il: bool,
    pub windowed: MetricsSummary,
    pub any_time: MetricsSummary,
    pub empirical_coverage: Option<f64>,
    /// Histogram TV distance between offline calibration scores and the
    /// cell's pooled online scores.
    pub tv_to_calibration: Option<f64>,
    pub mean_ade: Option<f64>,
    pub clusters_admitted: usize,
    pub episodes: usize,
    pub skipped_short: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial_seed: u64,
    pub cells: Vec<CellReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub trials: Vec<TrialReport>,
    /// Mean ± std across trials keyed by `scenario/mode/il/metric`.
    pub across_trials: BTreeMap<String, (f64, f64)>,
}

/// Aggregates monitoring artifacts into one summary JSON plus envelope CSVs.
pub fn cmd_report(config: &ExperimentConfig) -> Result<Summary, PipelineError> {
    config.validate()?;
    let hash = config.hash();
    let mut trials = Vec::new();
    for &trial in &config.seeds {
        let dir = trial_dir(config, trial);
        if !dir.join("monitor").exists() {
            return Err(PipelineError::artifact(
                &dir.join("monitor"),
                "no monitoring records found; run the monitor command first",
            ));
        }
        let calib: serde_json::Value = read_json(&dir.join("train/calibration.json"))?;
        let offline_scores: Vec<f64> = calib["scores"]
            .as_array()
            .map(|a| a.iter().filter_map(|v| v.as_f64()).collect())
            .unwrap_or_default();
        let mut cells = Vec::new();
        for scenario in &config.scenarios {
            for &uq in &config.uq_modes {
                for il in [false, true] {
                    if il && !config.il {
                        continue;
                    }
                    let cdir = cell_dir(&dir, scenario, uq, il);
                    let path = cdir.join("cell.json");
                    if !path.exists() {
                        continue;
                    }
                    let cell: CellResult = read_json(&path)?;
                    check_hash(&cell.config_hash, &hash, &path)?;
                    let m = &config.monitor;
                    let windowed =
                        aggregate(&cell.outcomes, m.horizon_len, m.tau, AlarmRule::Windowed);
                    let any_time =
                        aggregate(&cell.outcomes, m.horizon_len, m.tau, AlarmRule::AnyTime);
                    let pooled: Vec<f64> =
                        cell.online_scores.iter().flatten().copied().collect();
                    let tv = if offline_scores.is_empty() || pooled.is_empty() {
                        None
                    } else {
                        tv_distance_estimate(&offline_scores, &pooled, 50).ok()
                    };
                    if uq == UqMode::Acp {
                        let errors = error_sequence(&cell.outcomes);
                        let series =
                            coverage_envelope_series(&errors, m.delta, m.gamma, m.delta);
                        let csv = format!(
                            "{}\n{}",
                            provenance_line(&hash, trial),
                            envelope_to_csv(&series)
                        );
                        let name = format!(
                            "envelope_{}_{}_{}.csv",
                            scenario.tag(),
                            uq,
                            if il { "il" } else { "plain" }
                        );
                        write_atomic(&dir.join("report").join(name), csv.as_bytes())?;
                    }
                    cells.push(CellReport {
                        scenario: *scenario,
                        uq_mode: uq,
                        il,
                        empirical_coverage: windowed.empirical_coverage,
                        windowed,
                        any_time,
                        tv_to_calibration: tv,
                        mean_ade: cell.mean_ade,
                        clusters_admitted: cell.clusters_admitted,
                        episodes: cell.outcomes.len(),
                        skipped_short: cell.skipped_short,
                    });
                }
            }
        }
        if cells.is_empty() {
            return Err(PipelineError::artifact(
                &dir.join("monitor"),
                "monitoring directory contains no cell results",
            ));
        }
        trials.push(TrialReport {
            trial_seed: trial,
            cells,
        });
    }

    let mut across_trials = BTreeMap::new();
    if let Some(first) = trials.first() {
        for (ci, cell) in first.cells.iter().enumerate() {
            let key = format!(
                "{}/{}/{}",
                cell.scenario.tag(),
                cell.uq_mode,
                if cell.il { "il" } else { "plain" }
            );
            let metric = |f: &dyn Fn(&CellReport) -> Option<f64>| {
                crate::metrics::trial_stats(trials.iter().map(|t| f(&t.cells[ci])))
            };
            let entries: [(&str, &dyn Fn(&CellReport) -> Option<f64>); 5] = [
                ("precision", &|c| c.windowed.precision),
                ("recall", &|c| c.windowed.recall),
                ("timeliness", &|c| c.windowed.mean_timeliness),
                ("coverage", &|c| c.empirical_coverage),
                ("ade", &|c| c.mean_ade),
            ];
            for (name, f) in entries {
                if let Some(stats) = metric(f) {
                    across_trials.insert(format!("{key}/{name}"), stats);
                }
            }
        }
    }
    let summary = Summary {
        config_hash: hash,
        trials,
        across_trials,
    };
    write_json(&config.output_dir.join("report/summary.json"), &summary)?;
    Ok(summary)
}

/// Runs the cartpole parameter sweep and writes the grid CSV.
pub fn cmd_sweep_cartpole(
    config: &ExperimentConfig,
    n_runs: usize,
) -> Result<Vec<envs::cartpole::SweepCell>, PipelineError> {
    config.validate()?;
    if config.study != Study::Cartpole {
        return Err(PipelineError::Config(ConfigError::Invalid {
            field: "study".into(),
            message: "sweep-cartpole requires the cartpole study".into(),
        }));
    }
    let hash = config.hash();
    let seed = config.seeds.first().copied().unwrap_or(0);
    let cells = envs::cartpole::cartpole_sweep(
        &envs::cartpole::default_grid(),
        &envs::cartpole::LinearController::tuned(),
        n_runs,
        seed,
    );
    let mut csv = format!(
        "{}\nparam_name,param_value,mean_reward,mean_robustness,mean_loglik\n",
        provenance_line(&hash, seed)
    );
    for c in &cells {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            c.param, c.value, c.mean_reward, c.mean_robustness, c.mean_log_likelihood
        ));
    }
    write_atomic(
        &config.output_dir.join("sweep/cartpole_sweep.csv"),
        csv.as_bytes(),
    )?;
    Ok(cells)
}

/// Reads the provenance line of a CSV artifact.
pub fn csv_provenance(path: &Path) -> Result<(String, u64), PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::artifact(path, e))?;
    text.lines()
        .next()
        .and_then(parse_provenance)
        .ok_or_else(|| PipelineError::artifact(path, "missing provenance line"))
}

#[derive(Parser)]
#[command(name = "safemon", about = "Predictive safety monitoring experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to an experiment configuration JSON document.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Build a default configuration for this study instead of loading one.
    #[arg(long, value_parser = parse_study)]
    study: Option<Study>,
    /// Override the output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override whether incremental learning runs.
    #[arg(long)]
    il: Option<bool>,
    /// Override the episode count per scenario.
    #[arg(long)]
    episodes: Option<usize>,
    /// Override the trial seeds (comma-separated).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

fn parse_study(s: &str) -> Result<Study, String> {
    match s {
        "cartpole" => Ok(Study::Cartpole),
        "hallway" => Ok(Study::Hallway),
        "racetrack" => Ok(Study::Racetrack),
        other => Err(format!("unknown study {other}")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate datasets for every scenario.
    Generate(CommonArgs),
    /// Train the base predictor and build the offline calibration set.
    Train(CommonArgs),
    /// Run the monitoring campaign over the mode and IL grid.
    Monitor(CommonArgs),
    /// Aggregate monitoring artifacts into a summary report.
    Report(CommonArgs),
    /// Run the cartpole parameter sweep.
    SweepCartpole {
        #[command(flatten)]
        common: CommonArgs,
        /// Rollouts per grid cell.
        #[arg(long, default_value_t = 100)]
        runs: usize,
    },
}

fn resolve_config(args: &CommonArgs) -> Result<ExperimentConfig, PipelineError> {
    let mut config = match (&args.config, args.study) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(study)) => {
            let root = std::env::var("SAFEMON_OUT").unwrap_or_else(|_| "safemon_out".into());
            ExperimentConfig::defaults_for(study, PathBuf::from(root))
        }
        (None, None) => {
            return Err(PipelineError::Config(ConfigError::Invalid {
                field: "config".into(),
                message: "pass --config <path> or --study <name>".into(),
            }))
        }
    };
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(il) = args.il {
        config.il = il;
    }
    if let Some(n) = args.episodes {
        config.episodes_per_scenario = n;
    }
    if let Some(seeds) = &args.seeds {
        config.seeds = seeds.clone();
    }
    config.validate()?;
    Ok(config)
}

fn dispatch(command: &Command) -> Result<(), PipelineError> {
    match command {
        Command::Generate(args) => {
            let manifests = cmd_generate(&resolve_config(args)?)?;
            for m in &manifests {
                for w in &m.warnings {
                    eprintln!("warning (trial {}): {w}", m.trial_seed);
                }
                println!(
                    "trial {}: {} scenario(s) generated",
                    m.trial_seed,
                    m.counts.len()
                );
            }
            Ok(())
        }
        Command::Train(args) => {
            let metas = cmd_train(&resolve_config(args)?)?;
            for m in &metas {
                println!(
                    "trial {}: {} windows, {} calibration scores",
                    m.trial_seed, m.train_windows, m.calibration_scores
                );
            }
            Ok(())
        }
        Command::Monitor(args) => cmd_monitor(&resolve_config(args)?),
        Command::Report(args) => {
            let summary = cmd_report(&resolve_config(args)?)?;
            println!(
                "{} trial(s), {} cell(s) per trial",
                summary.trials.len(),
                summary.trials.first().map_or(0, |t| t.cells.len())
            );
            Ok(())
        }
        Command::SweepCartpole { common, runs } => {
            let cells = cmd_sweep_cartpole(&resolve_config(common)?, *runs)?;
            println!("{} sweep cell(s) written", cells.len());
            Ok(())
        }
    }
}

/// CLI entry point; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Trace;

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults_for(Study::Hallway, dir.to_path_buf());
        c.scenarios = vec![OodScenario::None, OodScenario::DropRays { k: 3 }];
        c.uq_modes = vec![UqMode::Pp, UqMode::Acp];
        c.episodes_per_scenario = 8;
        c.train.config.epochs = 5;
        c.train.config.hidden = vec![8];
        c.train.window_stride = 10;
        c
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(0, "none", 1), derive_seed(0, "none", 1));
        assert_ne!(derive_seed(0, "none", 1), derive_seed(0, "none", 2));
        assert_ne!(derive_seed(0, "none", 1), derive_seed(1, "none", 1));
        assert_ne!(derive_seed(0, "none", 1), derive_seed(0, "drop", 1));
    }

    #[test]
    fn window_labels_mark_pre_violation_horizons() {
        let trace = Trace::new(vec![vec![0.0]; 30], 0.1).unwrap();
        let violating = Episode {
            trace: trace.clone(),
            violation_time: Some(29),
            scenario: OodScenario::None,
            seed: 0,
            observations: Vec::new(),
        };
        let (windows, labels) = extract_windows(&[violating], 5, 5, 1, 1000);
        assert_eq!(windows.len(), 21);
        // horizon_end + horizon >= 29  =>  start >= 29 - 5 - 9 = 15
        for (w, &l) in windows.iter().zip(&labels) {
            assert_eq!(l, w.start_time >= 15, "start {}", w.start_time);
        }
        let safe = Episode {
            trace,
            violation_time: None,
            scenario: OodScenario::None,
            seed: 0,
            observations: Vec::new(),
        };
        let (_, labels) = extract_windows(&[safe], 5, 5, 1, 1000);
        assert!(labels.iter().all(|&l| !l));
    }

    #[test]
    fn empty_seed_list_generates_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny_config(dir.path());
        c.seeds.clear();
        let manifests = cmd_generate(&c).unwrap();
        assert!(manifests.is_empty());
        assert!(!dir.path().join("trial_0").exists());
    }

    #[test]
    fn pipeline_end_to_end_and_rerun_identical() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny_config(dir.path());
        let manifests = cmd_generate(&c).unwrap();
        assert_eq!(manifests.len(), 1);
        assert!(manifests[0].counts.contains_key("none"));
        let ep0 = dir.path().join("trial_0/dataset/none/ep_0.csv");
        let first = std::fs::read(&ep0).unwrap();
        let (hash, seed) = csv_provenance(&ep0).unwrap();
        assert_eq!(hash, c.hash());
        assert_eq!(seed, 0);

        cmd_train(&c).unwrap();
        cmd_monitor(&c).unwrap();
        let summary = cmd_report(&c).unwrap();
        // 2 scenarios x 2 modes x {plain, il}
        assert_eq!(summary.trials[0].cells.len(), 8);
        assert!(summary
            .trials
            .iter()
            .all(|t| t.cells.iter().all(|cell| cell.episodes > 0)));
        assert!(dir
            .path()
            .join("trial_0/report/envelope_none_ACP_plain.csv")
            .exists());

        // rerun: every stage must reproduce its artifacts byte for byte
        let sum_bytes = std::fs::read(dir.path().join("report/summary.json")).unwrap();
        cmd_generate(&c).unwrap();
        cmd_train(&c).unwrap();
        cmd_monitor(&c).unwrap();
        cmd_report(&c).unwrap();
        assert_eq!(std::fs::read(&ep0).unwrap(), first);
        assert_eq!(
            std::fs::read(dir.path().join("report/summary.json")).unwrap(),
            sum_bytes
        );
    }

    #[test]
    fn report_refuses_mismatched_config_hash() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny_config(dir.path());
        cmd_generate(&c).unwrap();
        let mut altered = c.clone();
        altered.monitor.delta = 0.2;
        let err = cmd_train(&altered).unwrap_err();
        assert!(matches!(err, PipelineError::Artifact { .. }), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn sweep_requires_cartpole_study() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny_config(dir.path());
        let err = cmd_sweep_cartpole(&c, 2).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn sweep_writes_csv_with_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::defaults_for(Study::Cartpole, dir.path().to_path_buf());
        c.scenarios = vec![OodScenario::None];
        let cells = cmd_sweep_cartpole(&c, 3).unwrap();
        assert_eq!(cells.len(), 14);
        let path = dir.path().join("sweep/cartpole_sweep.csv");
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert!(parse_provenance(lines.next().unwrap()).is_some());
        assert_eq!(
            lines.next().unwrap(),
            "param_name,param_value,mean_reward,mean_robustness,mean_loglik"
        );
        assert_eq!(text.lines().count(), 2 + cells.len());
    }
}
