//! Deterministic, seeded simulators for the three case studies — cartpole
//! parameter sweeps, a hallway-following car with LIDAR, and a two-lane
//! track with dynamic obstacle vehicles — plus out-of-distribution injectors
//! and scripted black-box controllers.

pub mod cartpole;
pub mod hallway;
pub mod racetrack;

use crate::trace::Trace;
use serde::{Deserialize, Serialize};

/// Out-of-distribution scenario applied to a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OodScenario {
    None,
    /// Zero out `k` evenly spaced LIDAR rays.
    DropRays { k: usize },
    /// Add iid Uniform[0, b] noise to every LIDAR ray.
    LidarNoise { b: f64 },
    /// Spawn `n` obstacle vehicles instead of the nominal one.
    ExtraObstacles { n: usize },
    /// Override cartpole physical parameters.
    CartpoleParams {
        gravity: f64,
        pole_length: f64,
        pole_mass: f64,
    },
}

impl OodScenario {
    pub fn is_lidar_kind(&self) -> bool {
        matches!(self, OodScenario::DropRays { .. } | OodScenario::LidarNoise { .. })
    }

    /// Short tag for file names and reports.
    pub fn tag(&self) -> String {
        match self {
            OodScenario::None => "none".to_string(),
            OodScenario::DropRays { k } => format!("drop_rays_{k}"),
            OodScenario::LidarNoise { b } => format!("lidar_noise_{b}"),
            OodScenario::ExtraObstacles { n } => format!("extra_obstacles_{n}"),
            OodScenario::CartpoleParams {
                gravity,
                pole_length,
                pole_mass,
            } => format!("cartpole_{gravity}_{pole_length}_{pole_mass}"),
        }
    }
}

/// One simulated rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub trace: Trace,
    /// First step at which single-step collision robustness is <= 0, if any.
    /// Simulations terminate at this step, so it is always the last step when
    /// present.
    pub violation_time: Option<usize>,
    pub scenario: OodScenario,
    pub seed: u64,
    /// Per-step controller observations (the possibly-corrupted LIDAR scan
    /// for the hallway study; empty elsewhere).
    pub observations: Vec<Vec<f64>>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.trace.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trace.is_empty()
    }

    pub fn violating(&self) -> bool {
        self.violation_time.is_some()
    }

    /// CSV rows `t, <state dims>, violation` with a header built from the
    /// trace labels (or `s0..` when unlabeled).
    pub fn to_csv(&self) -> String {
        let d = self.trace.dim();
        let labels: Vec<String> = match self.trace.labels() {
            Some(l) => l.to_vec(),
            None => (0..d).map(|i| format!("s{i}")).collect(),
        };
        let mut out = format!("t,{},violation\n", labels.join(","));
        for t in 0..self.trace.len() {
            let row: Vec<String> = self.trace.state(t).iter().map(|v| format!("{v}")).collect();
            let violation = u8::from(self.violation_time == Some(t));
            out.push_str(&format!("{t},{},{violation}\n", row.join(",")));
        }
        out
    }

    /// Rebuilds an episode from its CSV rows and sidecar manifest. The
    /// controller observation log is not persisted and comes back empty.
    pub fn from_csv(csv: &str, manifest: &serde_json::Value) -> Result<Self, String> {
        let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
        let header = lines.next().ok_or("empty csv")?;
        let columns: Vec<&str> = header.split(',').collect();
        if columns.first() != Some(&"t") || columns.last() != Some(&"violation") {
            return Err(format!("unexpected header: {header}"));
        }
        let dim = columns.len() - 2;
        let mut states = Vec::new();
        let mut violation_time = None;
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != columns.len() {
                return Err(format!("row {i} has {} fields, expected {}", fields.len(), columns.len()));
            }
            let mut state = Vec::with_capacity(dim);
            for f in &fields[1..=dim] {
                state.push(f.parse::<f64>().map_err(|e| format!("row {i}: {e}"))?);
            }
            states.push(state);
            if fields[dim + 1] == "1" {
                violation_time = Some(i);
            }
        }
        let dt = manifest["dt"].as_f64().ok_or("manifest missing dt")?;
        let scenario: OodScenario = serde_json::from_value(manifest["scenario"].clone())
            .map_err(|e| format!("manifest scenario: {e}"))?;
        let seed = manifest["seed"].as_u64().ok_or("manifest missing seed")?;
        let mut trace = Trace::new(states, dt).map_err(|e| e.to_string())?;
        if let Some(labels) = manifest["labels"].as_array() {
            let labels: Vec<String> = labels
                .iter()
                .map(|v| v.as_str().unwrap_or_default().to_string())
                .collect();
            trace = trace.with_labels(labels);
        }
        Ok(Self {
            trace,
            violation_time,
            scenario,
            seed,
            observations: Vec::new(),
        })
    }

    /// Sidecar manifest describing how the episode was produced.
    pub fn manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "scenario": self.scenario,
            "seed": self.seed,
            "violation_time": self.violation_time,
            "dt": self.trace.dt(),
            "steps": self.trace.len(),
            "labels": self.trace.labels(),
        })
    }
}

/// Drops episodes shorter than `min_len` steps and reports how many were
/// removed, so short rollouts are excluded from datasets without vanishing
/// silently.
pub fn filter_min_length(episodes: Vec<Episode>, min_len: usize) -> (Vec<Episode>, usize) {
    let before = episodes.len();
    let kept: Vec<Episode> = episodes.into_iter().filter(|e| e.len() >= min_len).collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

/// Deterministic train/validation/test split by episode order. Fractions must
/// sum to at most 1; the test split absorbs the remainder.
pub fn split_episodes(
    episodes: &[Episode],
    train_frac: f64,
    val_frac: f64,
) -> (Vec<Episode>, Vec<Episode>, Vec<Episode>) {
    assert!(train_frac >= 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0);
    let n = episodes.len();
    let n_train = (n as f64 * train_frac).floor() as usize;
    let n_val = (n as f64 * val_frac).floor() as usize;
    let train = episodes[..n_train].to_vec();
    let val = episodes[n_train..n_train + n_val].to_vec();
    let test = episodes[n_train + n_val..].to_vec();
    (train, val, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode(len: usize) -> Episode {
        Episode {
            trace: Trace::new(vec![vec![0.0, 1.0]; len], 0.1).unwrap(),
            violation_time: None,
            scenario: OodScenario::None,
            seed: 0,
            observations: Vec::new(),
        }
    }

    #[test]
    fn min_length_filter_reports_drops() {
        let eps = vec![episode(30), episode(10), episode(25), episode(24)];
        let (kept, dropped) = filter_min_length(eps, 25);
        assert_eq!(kept.len(), 2);
        assert_eq!(dropped, 2);
    }

    #[test]
    fn split_fractions() {
        let eps: Vec<Episode> = (0..20).map(|_| episode(30)).collect();
        let (tr, va, te) = split_episodes(&eps, 0.65, 0.15);
        assert_eq!((tr.len(), va.len(), te.len()), (13, 3, 4));
    }

    #[test]
    fn csv_marks_violation_row() {
        let mut e = episode(3);
        e.violation_time = Some(2);
        let csv = e.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,s0,s1,violation");
        assert_eq!(lines[1], "0,0,1,0");
        assert_eq!(lines[3], "2,0,1,1");
    }

    #[test]
    fn csv_manifest_round_trip() {
        let mut e = episode(5);
        e.violation_time = Some(4);
        e.scenario = OodScenario::LidarNoise { b: 0.9 };
        e.seed = 42;
        let back = Episode::from_csv(&e.to_csv(), &e.manifest()).unwrap();
        assert_eq!(back.trace.states(), e.trace.states());
        assert_eq!(back.violation_time, e.violation_time);
        assert_eq!(back.scenario, e.scenario);
        assert_eq!(back.seed, e.seed);
    }

    #[test]
    fn manifest_round_trips_scenario() {
        let mut e = episode(3);
        e.scenario = OodScenario::DropRays { k: 5 };
        let m = e.manifest();
        let back: OodScenario = serde_json::from_value(m["scenario"].clone()).unwrap();
        assert_eq!(back, OodScenario::DropRays { k: 5 });
    }
}
