//! Time-indexed state trajectories.

use serde::{Deserialize, Serialize};

/// A discrete-time signal: a sequence of fixed-dimension state vectors.
///
/// Indexing is 0-based; `dt` records the wall-clock seconds per step but is
/// informational only (all temporal windows are step-indexed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    states: Vec<Vec<f64>>,
    dt: f64,
    labels: Option<Vec<String>>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("trace must contain at least one state")]
    Empty,
    #[error("state at index {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("state dimension must be at least 1")]
    ZeroDimension,
}

impl Trace {
    pub fn new(states: Vec<Vec<f64>>, dt: f64) -> Result<Self, TraceError> {
        let first = states.first().ok_or(TraceError::Empty)?;
        let dim = first.len();
        if dim == 0 {
            return Err(TraceError::ZeroDimension);
        }
        for (index, s) in states.iter().enumerate() {
            if s.len() != dim {
                return Err(TraceError::DimensionMismatch {
                    index,
                    expected: dim,
                    found: s.len(),
                });
            }
        }
        Ok(Self {
            states,
            dt,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = Some(labels);
        self
    }

    /// Number of time steps `T`.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// State dimension `d`.
    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t]
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    /// Sub-trace covering steps `[start, end]` inclusive.
    pub fn window(&self, start: usize, end: usize) -> Trace {
        Trace {
            states: self.states[start..=end].to_vec(),
            dt: self.dt,
            labels: self.labels.clone(),
        }
    }
}
