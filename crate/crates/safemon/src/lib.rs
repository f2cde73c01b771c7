//! Predictive safety monitoring for learning-enabled cyber-physical systems.
//!
//! The toolkit combines four pieces:
//!
//! * [`stl`] — a signal temporal logic parser and quantitative (robustness)
//!   evaluator over discrete-time traces;
//! * [`conformal`] — inductive, robust, and adaptive conformal prediction over
//!   scalar non-conformity scores, plus distribution diagnostics (histogram
//!   total-variation estimates and Gaussian KDE log-likelihoods);
//! * [`predictor`] / [`incremental`] — small MLP trajectory predictors and the
//!   cluster-and-fine-tune scheme that grows a distribution-predictor set from
//!   high-error windows collected at runtime;
//! * [`monitor`] — the online safety monitor that forecasts the robustness of a
//!   safety property over a prediction horizon, maintains time-lagged
//!   non-conformity scores, and raises alarms against a conformal threshold.
//!
//! The [`envs`] module provides deterministic desk-scale simulators (cartpole,
//! hallway car with LIDAR, two-lane racetrack with dynamic obstacles) used by
//! the `safemon` CLI to run full monitoring campaigns, and [`metrics`] turns the
//! per-episode monitor output into precision/recall/timeliness summaries and
//! coverage envelopes.

pub mod cli;
pub mod config;
pub mod conformal;
pub mod envs;

pub mod incremental;
pub mod metrics;
pub mod monitor;
pub mod predictor;
pub mod stl;
pub mod trace;

pub use stl::StlFormula;
pub use trace::Trace;
