//! Per-episode alarm classification, precision/recall/timeliness, empirical
//! coverage, threshold-exceedance rates, and trial aggregation.
//!
//! Classification is per episode: a violating episode counts as a true
//! positive only when an alarm fires inside the `H`-step window before the
//! violation (the monitor's claim horizon). The alternative reading — any
//! alarm before the violation counts — is available behind a flag.

use crate::conformal::coverage_bounds;
use crate::monitor::StepRecord;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode_id: usize,
    pub violation_time: Option<usize>,
    /// Steps at which the monitor raised an alarm, ascending.
    pub alarm_times: Vec<usize>,
    pub records: Vec<StepRecord>,
}

impl EpisodeOutcome {
    pub fn new(episode_id: usize, violation_time: Option<usize>, records: Vec<StepRecord>) -> Self {
        let alarm_times = records.iter().filter(|r| r.alarm).map(|r| r.t).collect();
        Self {
            episode_id,
            violation_time,
            alarm_times,
            records,
        }
    }

    pub fn violating(&self) -> bool {
        self.violation_time.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    TruePositive,
    FalsePositive,
    FalseNegative,
    TrueNegative,
}

/// Which alarms count toward detecting a violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AlarmRule {
    /// Only alarms within the `H`-step window before the violation.
    #[default]
    Windowed,
    /// Any alarm strictly before the violation.
    AnyTime,
}

/// Classifies one episode and, for true positives, reports the timeliness:
/// how many steps before the violation the earliest counting alarm fired,
/// capped at `H`.
pub fn classify_episode(
    outcome: &EpisodeOutcome,
    h: usize,
    rule: AlarmRule,
) -> (Classification, Option<usize>) {
    match outcome.violation_time {
        Some(v) => {
            let window_start = v.saturating_sub(h);
            let earliest = outcome
                .alarm_times
                .iter()
                .copied()
                .find(|&t| match rule {
                    AlarmRule::Windowed => t >= window_start && t < v,
                    AlarmRule::AnyTime => t < v,
                });
            match earliest {
                Some(t) => (Classification::TruePositive, Some((v - t).min(h))),
                None => (Classification::FalseNegative, None),
            }
        }
        None => {
            if outcome.alarm_times.is_empty() {
                (Classification::TrueNegative, None)
            } else {
                (Classification::FalsePositive, None)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    /// Absent when no alarms were raised at all (undefined, never coerced).
    pub precision: Option<f64>,
    /// Absent when no episode violates.
    pub recall: Option<f64>,
    /// Mean over true positives; absent without any.
    pub mean_timeliness: Option<f64>,
    pub timeliness_values: Vec<usize>,
    /// `1 - mean(e_t)` over every step carrying an error indicator.
    pub empirical_coverage: Option<f64>,
    /// Fraction of alarm-eligible steps with `|R_t| > tau`.
    pub p_exceed_tau: Option<f64>,
}

/// Aggregates classified episodes into one summary.
pub fn aggregate(outcomes: &[EpisodeOutcome], h: usize, tau: f64, rule: AlarmRule) -> MetricsSummary {
    assert!(!outcomes.is_empty(), "need at least one episode");
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0, 0, 0);
    let mut timeliness_values = Vec::new();
    let mut errors = 0usize;
    let mut error_steps = 0usize;
    let mut exceed = 0usize;
    let mut eligible = 0usize;
    for o in outcomes {
        let (class, timeliness) = classify_episode(o, h, rule);
        match class {
            Classification::TruePositive => {
                tp += 1;
                timeliness_values.push(timeliness.expect("TP carries timeliness"));
            }
            Classification::FalsePositive => fp += 1,
            Classification::FalseNegative => fn_ += 1,
            Classification::TrueNegative => tn += 1,
        }
        for r in &o.records {
            if let Some(e) = r.e_t {
                errors += e as usize;
                error_steps += 1;
                eligible += 1;
                if r.ncs.map_or(false, |s| s.abs() > tau) {
                    exceed += 1;
                }
            }
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    MetricsSummary {
        tp,
        fp,
        fn_,
        tn,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        mean_timeliness: if timeliness_values.is_empty() {
            None
        } else {
            Some(timeliness_values.iter().sum::<usize>() as f64 / timeliness_values.len() as f64)
        },
        timeliness_values,
        empirical_coverage: ratio(error_steps - errors, error_steps),
        p_exceed_tau: ratio(exceed, eligible),
    }
}

/// One point of the running-coverage envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopePoint {
    pub t: usize,
    pub empirical: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Running empirical coverage of the pooled error sequence against the
/// deterministic envelope `[1 - delta - p1(T), 1 - delta + p2(T)]`.
pub fn coverage_envelope_series(
    errors: &[u8],
    delta: f64,
    gamma: f64,
    delta_1: f64,
) -> Vec<EnvelopePoint> {
    let mut out = Vec::with_capacity(errors.len());
    let mut sum = 0usize;
    for (i, &e) in errors.iter().enumerate() {
        sum += e as usize;
        let t = i + 1;
        let (p1, p2, _) = coverage_bounds(t, delta, gamma, delta_1);
        out.push(EnvelopePoint {
            t,
            empirical: 1.0 - sum as f64 / t as f64,
            lower: 1.0 - delta - p1,
            upper: 1.0 - delta + p2,
        });
    }
    out
}

/// Collects the pooled error-indicator sequence from step records in order.
pub fn error_sequence(outcomes: &[EpisodeOutcome]) -> Vec<u8> {
    outcomes
        .iter()
        .flat_map(|o| o.records.iter().filter_map(|r| r.e_t))
        .collect()
}

/// CSV rows `T, empirical, lower, upper`.
pub fn envelope_to_csv(series: &[EnvelopePoint]) -> String {
    let mut out = String::from("T,empirical,lower,upper\n");
    for p in series {
        out.push_str(&format!("{},{},{},{}\n", p.t, p.empirical, p.lower, p.upper));
    }
    out
}

/// Mean and (population) standard deviation of a per-trial metric, skipping
/// trials where it is absent.
pub fn trial_stats(values: impl IntoIterator<Item = Option<f64>>) -> Option<(f64, f64)> {
    let present: Vec<f64> = values.into_iter().flatten().collect();
    if present.is_empty() {
        return None;
    }
    let n = present.len() as f64;
    let mean = present.iter().sum::<f64>() / n;
    let var = present.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: usize, alarm: bool, e_t: Option<u8>, ncs: Option<f64>) -> StepRecord {
        StepRecord {
            t,
            rho_hat: None,
            rho_lagged: None,
            ncs,
            threshold: None,
            delta_t: 0.1,
            e_t,
            alarm,
            selected_predictor: None,
        }
    }

    fn outcome(violation: Option<usize>, alarms: &[usize], total: usize) -> EpisodeOutcome {
        let records = (0..total)
            .map(|t| record(t, alarms.contains(&t), None, None))
            .collect();
        EpisodeOutcome::new(0, violation, records)
    }

    #[test]
    fn windowed_classification() {
        // alarm 4 steps ahead: TP with timeliness 4
        let o = outcome(Some(100), &[96], 101);
        assert_eq!(
            classify_episode(&o, 5, AlarmRule::Windowed),
            (Classification::TruePositive, Some(4))
        );
        // alarm far outside the window: FN under windowed, TP under any-time
        let o = outcome(Some(100), &[80], 101);
        assert_eq!(
            classify_episode(&o, 5, AlarmRule::Windowed),
            (Classification::FalseNegative, None)
        );
        assert_eq!(
            classify_episode(&o, 5, AlarmRule::AnyTime),
            (Classification::TruePositive, Some(5)) // capped at H
        );
        // no violation, no alarm: TN; with an alarm: FP
        assert_eq!(
            classify_episode(&outcome(None, &[], 50), 5, AlarmRule::Windowed),
            (Classification::TrueNegative, None)
        );
        assert_eq!(
            classify_episode(&outcome(None, &[30], 50), 5, AlarmRule::Windowed),
            (Classification::FalsePositive, None)
        );
        // alarm at the violation step itself does not count
        let o = outcome(Some(100), &[100], 101);
        assert_eq!(
            classify_episode(&o, 5, AlarmRule::Windowed).0,
            Classification::FalseNegative
        );
    }

    #[test]
    fn timeliness_stays_in_claim_window() {
        for alarm in 95..100 {
            let o = outcome(Some(100), &[alarm], 101);
            let (_, t) = classify_episode(&o, 5, AlarmRule::Windowed);
            let t = t.unwrap();
            assert!((1..=5).contains(&t));
        }
        // early violation: window clips at episode start
        let o = outcome(Some(2), &[0], 3);
        assert_eq!(
            classify_episode(&o, 5, AlarmRule::Windowed),
            (Classification::TruePositive, Some(2))
        );
    }

    #[test]
    fn aggregate_matches_hand_count() {
        let outcomes = vec![
            outcome(Some(100), &[97], 101), // TP, timeliness 3
            outcome(Some(50), &[], 51),     // FN
            outcome(Some(40), &[20], 41),   // FN (alarm outside the window)
            outcome(None, &[10], 60),       // FP
            outcome(None, &[], 60),         // TN
            outcome(Some(30), &[26, 29], 31), // TP, timeliness 4
        ];
        let m = aggregate(&outcomes, 5, 1.0, AlarmRule::Windowed);
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (2, 1, 2, 1));
        assert_eq!(m.tp + m.fp + m.fn_ + m.tn, outcomes.len());
        assert_eq!(m.precision, Some(2.0 / 3.0));
        assert_eq!(m.recall, Some(0.5));
        assert_eq!(m.mean_timeliness, Some(3.5));
    }

    #[test]
    fn undefined_precision_is_absent() {
        let outcomes = vec![outcome(Some(50), &[], 51), outcome(None, &[], 60)];
        let m = aggregate(&outcomes, 5, 1.0, AlarmRule::Windowed);
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
        let json = serde_json::to_value(&m).unwrap();
        assert!(json["precision"].is_null());
    }

    #[test]
    fn coverage_and_exceedance_from_records() {
        let mut records = Vec::new();
        // 8 eligible steps, 2 errors, 3 exceedances of tau = 1.0
        let es = [0, 0, 1, 0, 0, 1, 0, 0];
        let scores = [0.5, 1.5, 2.0, 0.1, -0.4, -1.2, 0.9, 0.3];
        for (t, (&e, &s)) in es.iter().zip(&scores).enumerate() {
            records.push(record(t, false, Some(e), Some(s)));
        }
        let o = EpisodeOutcome::new(0, None, records);
        let m = aggregate(&[o], 5, 1.0, AlarmRule::Windowed);
        assert_eq!(m.empirical_coverage, Some(0.75));
        assert_eq!(m.p_exceed_tau, Some(3.0 / 8.0));
    }

    #[test]
    fn envelope_series_shape() {
        let errors = vec![0, 0, 1, 0];
        let series = coverage_envelope_series(&errors, 0.1, 0.005, 0.1);
        assert_eq!(series.len(), 4);
        assert_eq!(series[0].empirical, 1.0);
        assert_eq!(series[2].empirical, 1.0 - 1.0 / 3.0);
        for p in &series {
            assert!(p.lower <= p.upper);
        }
        // constants at T = 1000 match the coverage-bound arithmetic
        let long = coverage_envelope_series(&vec![0u8; 1000], 0.1, 0.005, 0.1);
        let p = long.last().unwrap();
        assert!((p.lower - (1.0 - 0.1 - 0.021)).abs() < 1e-12);
        assert!((p.upper - (1.0 - 0.1 + 0.181)).abs() < 1e-12);
    }

    #[test]
    fn envelope_csv_layout() {
        let series = coverage_envelope_series(&[0], 0.1, 0.005, 0.1);
        let csv = envelope_to_csv(&series);
        assert!(csv.starts_with("T,empirical,lower,upper\n1,1,"));
    }

    #[test]
    fn trial_stats_skip_absent() {
        let s = trial_stats([Some(1.0), None, Some(3.0)]).unwrap();
        assert_eq!(s.0, 2.0);
        assert_eq!(s.1, 1.0);
        assert_eq!(trial_stats([None, None]), None);
    }
}
