//! Experiment configuration: one JSON document describing a full campaign,
//! plus content hashing and atomic file writes so every artifact can be tied
//! back to the exact configuration and seed that produced it.

use crate::envs::OodScenario;
use crate::monitor::{MonitorConfig, SafetySpec, UqMode};
use crate::predictor::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    Cartpole,
    Hallway,
    Racetrack,
}

impl Study {
    /// Whether a scenario can be injected into this study.
    pub fn accepts(&self, scenario: &OodScenario) -> bool {
        match self {
            Study::Cartpole => matches!(
                scenario,
                OodScenario::None | OodScenario::CartpoleParams { .. }
            ),
            Study::Hallway => matches!(
                scenario,
                OodScenario::None | OodScenario::DropRays { .. } | OodScenario::LidarNoise { .. }
            ),
            Study::Racetrack => matches!(
                scenario,
                OodScenario::None | OodScenario::ExtraObstacles { .. }
            ),
        }
    }

    /// Safety property monitored in this study.
    pub fn safety_spec(&self) -> SafetySpec {
        match self {
            Study::Cartpole => SafetySpec::Formula(crate::envs::cartpole::safety_formula(20)),
            Study::Hallway => SafetySpec::CollisionSegments {
                segments: crate::envs::hallway::HallwayWorld::default().walls(),
                c: crate::envs::hallway::SAFETY_MARGIN,
            },
            Study::Racetrack => SafetySpec::CollisionDynamic {
                ego: (0, 1),
                obstacles: (0..crate::envs::racetrack::MAX_OBSTACLES)
                    .map(|i| (4 + 2 * i, 5 + 2 * i))
                    .collect(),
                c: crate::envs::racetrack::SAFETY_MARGIN,
            },
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Study::Cartpole => 4,
            Study::Hallway => 4,
            Study::Racetrack => 4 + 2 * crate::envs::racetrack::MAX_OBSTACLES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.65,
            val: 0.15,
            test: 0.20,
        }
    }
}

/// Monitor hyperparameters minus the study-derived safety property.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorParams {
    pub history_len: usize,
    pub horizon_len: usize,
    pub delta: f64,
    pub gamma: f64,
    pub tau: f64,
    pub t0: usize,
    pub epsilon: f64,
    pub threshold_before_append: bool,
}

impl Default for MonitorParams {
    fn default() -> Self {
        Self {
            history_len: 5,
            horizon_len: 5,
            delta: 0.1,
            gamma: 0.005,
            tau: 0.1,
            t0: 15,
            epsilon: 0.08,
            threshold_before_append: false,
        }
    }
}

impl MonitorParams {
    pub fn to_monitor_config(&self, spec: SafetySpec, uq_mode: UqMode) -> MonitorConfig {
        MonitorConfig {
            history_len: self.history_len,
            horizon_len: self.horizon_len,
            delta: self.delta,
            gamma: self.gamma,
            tau: self.tau,
            t0: self.t0,
            uq_mode,
            epsilon: self.epsilon,
            spec,
            threshold_before_append: self.threshold_before_append,
        }
    }
}

/// Training hyperparameters plus window extraction controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub config: TrainConfig,
    /// Stride between consecutive sliding-window start times.
    pub window_stride: usize,
    /// Cap on the number of training windows (deterministic prefix).
    pub max_windows: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            config: TrainConfig::default(),
            window_stride: 3,
            max_windows: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalParams {
    pub k_candidates: Vec<usize>,
    pub ratio_threshold: f64,
    pub fine_tune_epochs: usize,
    pub fine_tune_learning_rate: f64,
}

impl Default for IncrementalParams {
    fn default() -> Self {
        Self {
            k_candidates: vec![1, 2, 3, 4, 5],
            ratio_threshold: 0.7,
            fine_tune_epochs: 20,
            fine_tune_learning_rate: 5e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub study: Study,
    pub scenarios: Vec<OodScenario>,
    pub uq_modes: Vec<UqMode>,
    /// Run the incremental-learning variant alongside the plain monitor.
    pub il: bool,
    /// Trial seeds; each seed is an independent repetition of the campaign.
    pub seeds: Vec<u64>,
    pub episodes_per_scenario: usize,
    pub split: SplitFractions,
    pub monitor: MonitorParams,
    pub train: TrainParams,
    pub incremental: IncrementalParams,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn defaults_for(study: Study, output_dir: PathBuf) -> Self {
        let scenarios = match study {
            Study::Cartpole => vec![OodScenario::None],
            Study::Hallway => vec![
                OodScenario::None,
                OodScenario::DropRays { k: 3 },
                OodScenario::DropRays { k: 5 },
                OodScenario::LidarNoise { b: 0.9 },
                OodScenario::LidarNoise { b: 1.0 },
            ],
            Study::Racetrack => vec![
                OodScenario::None,
                OodScenario::ExtraObstacles { n: 2 },
                OodScenario::ExtraObstacles { n: 3 },
                OodScenario::ExtraObstacles { n: 4 },
                OodScenario::ExtraObstacles { n: 5 },
            ],
        };
        Self {
            study,
            scenarios,
            uq_modes: vec![UqMode::Pp, UqMode::Cp, UqMode::Rcp, UqMode::Acp],
            il: true,
            seeds: vec![0],
            episodes_per_scenario: 20,
            split: SplitFractions::default(),
            monitor: MonitorParams {
                tau: match study {
                    // scaled to each study's nominal non-conformity spread so
                    // window collection fires on shifted data, not in-distribution
                    Study::Cartpole => 0.5,
                    Study::Hallway => 0.5,
                    Study::Racetrack => 2.0,
                },
                ..MonitorParams::default()
            },
            train: TrainParams::default(),
            incremental: IncrementalParams::default(),
            output_dir,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = self.split;
        if (s.train + s.val + s.test - 1.0).abs() > 1e-9 {
            return Err(ConfigError::Invalid {
                field: "split".into(),
                message: format!(
                    "fractions must sum to 1, got {}",
                    s.train + s.val + s.test
                ),
            });
        }
        if self.scenarios.is_empty() {
            return Err(ConfigError::Invalid {
                field: "scenarios".into(),
                message: "at least one scenario required".into(),
            });
        }
        for (i, sc) in self.scenarios.iter().enumerate() {
            if !self.study.accepts(sc) {
                return Err(ConfigError::Invalid {
                    field: format!("scenarios[{i}]"),
                    message: format!("{sc:?} is not valid for {:?}", self.study),
                });
            }
        }
        if self.uq_modes.is_empty() {
            return Err(ConfigError::Invalid {
                field: "uq_modes".into(),
                message: "at least one mode required".into(),
            });
        }
        let m = &self.monitor;
        if m.t0 <= m.history_len + m.horizon_len {
            return Err(ConfigError::Invalid {
                field: "monitor.t0".into(),
                message: format!(
                    "t0 ({}) must exceed h + H ({})",
                    m.t0,
                    m.history_len + m.horizon_len
                ),
            });
        }
        if !(0.0..1.0).contains(&m.epsilon) || m.epsilon >= m.delta {
            return Err(ConfigError::Invalid {
                field: "monitor.epsilon".into(),
                message: format!("epsilon {} must satisfy 0 <= epsilon < delta", m.epsilon),
            });
        }
        if self.train.window_stride == 0 {
            return Err(ConfigError::Invalid {
                field: "train.window_stride".into(),
                message: "stride must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let config: Self = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Content hash over the canonical JSON form.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex::encode(&hasher.finalize()[..8])
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid config field {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

/// Writes a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

/// Provenance line prepended (as a `#` comment) to CSV artifacts and stored
/// in JSON artifacts, so reports can refuse to mix outputs from different
/// configurations.
pub fn provenance_line(config_hash: &str, seed: u64) -> String {
    format!("# config_hash={config_hash} seed={seed}")
}

/// Parses a provenance comment line back into (hash, seed).
pub fn parse_provenance(line: &str) -> Option<(String, u64)> {
    let rest = line.strip_prefix("# config_hash=")?;
    let (hash, seed_part) = rest.split_once(" seed=")?;
    Some((hash.to_string(), seed_part.trim().parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for study in [Study::Cartpole, Study::Hallway, Study::Racetrack] {
            let c = ExperimentConfig::defaults_for(study, PathBuf::from("/tmp/out"));
            c.validate().unwrap();
        }
    }

    #[test]
    fn rejects_mismatched_scenario() {
        let mut c = ExperimentConfig::defaults_for(Study::Hallway, PathBuf::from("/tmp/out"));
        c.scenarios.push(OodScenario::ExtraObstacles { n: 2 });
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("scenarios[5]"));
    }

    #[test]
    fn rejects_bad_split_and_epsilon() {
        let mut c = ExperimentConfig::defaults_for(Study::Hallway, PathBuf::from("/tmp/out"));
        c.split.train = 0.7;
        assert!(c.validate().is_err());

        let mut c = ExperimentConfig::defaults_for(Study::Hallway, PathBuf::from("/tmp/out"));
        c.monitor.epsilon = 0.2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let c = ExperimentConfig::defaults_for(Study::Hallway, PathBuf::from("/tmp/out"));
        let mut c2 = c.clone();
        assert_eq!(c.hash(), c2.hash());
        c2.il = false;
        assert_ne!(c.hash(), c2.hash());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = ExperimentConfig::defaults_for(Study::Racetrack, PathBuf::from("/tmp/out"));
        let json = serde_json::to_string_pretty(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn atomic_write_and_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/a.csv");
        write_atomic(&path, b"hello").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"hello");
        assert!(!dir.path().join("nested/.a.csv.tmp").exists());

        let line = provenance_line("abcd1234", 7);
        assert_eq!(parse_provenance(&line), Some(("abcd1234".to_string(), 7)));
        assert_eq!(parse_provenance("t,x,y"), None);
    }
}
