//! Evaluation metrics: wait time from headways, percentiles, before/after
//! change tables, compliance classification, transfers and reports.

mod compliance;
mod report;
mod transfer;

pub use compliance::{
    adjustment_histogram, enroute_compliance, terminal_compliance, theoretical_dwell, AdjustmentBin,
    ComplianceRecord, ComplianceRule, ComplianceSummary, DwellObservation, InstructedDeparture,
    ENROUTE_MIN_BASELINE, TERMINAL_TOLERANCE,
};
pub use report::{route_metrics, wait_change_by_stop, ObservedDay, Report, RouteMetrics, StopWaitChange, METRIC_NAMES};
pub use transfer::{
    seniority_compliance_summary, transfer_time_summary, Distribution, SenioritySummary, TransferRecord,
    TransferSummary,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::time::Seconds;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("need at least 2 headways, got {0}")]
    TooFewHeadways(usize),
    #[error("headways must be non-negative with a positive mean")]
    BadHeadways,
    #[error("percentile of an empty sample")]
    Empty,
    #[error("percentile {0} outside [0, 100]")]
    BadPercentile(f64),
    #[error("metric keys differ between base and pilot: {0:?}")]
    MismatchedKeys(Vec<String>),
    #[error("need at least {needed} non-instructed trips for the dwell baseline, got {got}")]
    InsufficientBaseline { needed: usize, got: usize },
}

/// Observed headways at one stop in one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadwaySample {
    pub stop: usize,
    pub period: String,
    pub headways: Vec<Seconds>,
}

/// `(H̄/2)(1 + (σ_H/H̄)²)` in minutes, with σ_H the population standard deviation.
pub fn expected_wait_time(sample: &HeadwaySample) -> Result<f64, AnalyticsError> {
    let h = &sample.headways;
    if h.len() < 2 {
        return Err(AnalyticsError::TooFewHeadways(h.len()));
    }
    if h.iter().any(|&x| x < 0) {
        return Err(AnalyticsError::BadHeadways);
    }
    let n = h.len() as f64;
    let mean = h.iter().sum::<Seconds>() as f64 / n;
    if mean <= 0.0 {
        return Err(AnalyticsError::BadHeadways);
    }
    let var = h.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok(mean / 2.0 * (1.0 + var / (mean * mean)) / 60.0)
}

/// Nearest-rank percentile: the value at rank `ceil(p/100 · n)` (at least 1) of the sorted sample.
pub fn percentile(values: &[f64], p: f64) -> Result<f64, AnalyticsError> {
    if values.is_empty() {
        return Err(AnalyticsError::Empty);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(AnalyticsError::BadPercentile(p));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((p / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}

pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// One metric compared between a base and a pilot period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeRow {
    pub metric: String,
    pub base: f64,
    pub pilot: f64,
    pub absolute: f64,
    /// `None` when the base is zero.
    pub percent: Option<f64>,
}

impl ChangeRow {
    pub fn new(metric: impl Into<String>, base: f64, pilot: f64) -> Self {
        let absolute = pilot - base;
        let percent = (base != 0.0).then(|| absolute / base * 100.0);
        Self { metric: metric.into(), base, pilot, absolute, percent }
    }

    /// `-0.6 (-8.7%)`, or `+0.0 (n/a)` for a zero base.
    pub fn display_change(&self) -> String {
        let pct = match self.percent {
            Some(p) => format!("{:.1}%", round1(p) + 0.0),
            None => "n/a".to_string(),
        };
        format!("{:.1} ({pct})", round1(self.absolute) + 0.0)
    }
}

pub fn change_table(
    base: &BTreeMap<String, f64>,
    pilot: &BTreeMap<String, f64>,
) -> Result<Vec<ChangeRow>, AnalyticsError> {
    let mismatched: Vec<String> = base
        .keys()
        .filter(|k| !pilot.contains_key(*k))
        .chain(pilot.keys().filter(|k| !base.contains_key(*k)))
        .cloned()
        .collect();
    if !mismatched.is_empty() {
        return Err(AnalyticsError::MismatchedKeys(mismatched));
    }
    Ok(base.iter().map(|(k, &b)| ChangeRow::new(k.clone(), b, pilot[k])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(minutes: &[i64]) -> HeadwaySample {
        HeadwaySample { stop: 0, period: "am".into(), headways: minutes.iter().map(|m| m * 60).collect() }
    }

    #[test]
    fn wait_time_examples() {
        assert_eq!(expected_wait_time(&sample(&[10; 6])), Ok(5.0));
        assert_eq!(expected_wait_time(&sample(&[5, 15])), Ok(6.25));
        assert_eq!(expected_wait_time(&sample(&[10])), Err(AnalyticsError::TooFewHeadways(1)));
        assert_eq!(expected_wait_time(&sample(&[0, 0])), Err(AnalyticsError::BadHeadways));
    }

    #[test]
    fn irregular_headways_cost_more_than_their_constant_mean() {
        let irregular = sample(&[6, 6, 6, 18, 6, 6, 6, 18]);
        let constant = sample(&[9; 8]);
        assert!(expected_wait_time(&irregular).unwrap() > expected_wait_time(&constant).unwrap());
    }

    #[test]
    fn percentile_examples() {
        let one_to_ten: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&one_to_ten, 90.0), Ok(9.0));
        assert_eq!(percentile(&one_to_ten, 100.0), Ok(10.0));
        assert_eq!(percentile(&one_to_ten, 0.0), Ok(1.0));
        assert_eq!(percentile(&[4.5], 37.0), Ok(4.5));
        assert_eq!(percentile(&[60.0, 120.0, 180.0, 240.0], 75.0), Ok(180.0));
        assert_eq!(percentile(&[], 50.0), Err(AnalyticsError::Empty));
        assert_eq!(percentile(&[1.0], 101.0), Err(AnalyticsError::BadPercentile(101.0)));
    }

    #[test]
    fn change_rows() {
        let r = ChangeRow::new("wait", 7.25, 6.62);
        assert_eq!(r.display_change(), "-0.6 (-8.7%)");
        assert_eq!(format!("{:.1}", ChangeRow::new("wait", 8.28, 6.63).percent.unwrap()), "-19.9");
        let same = ChangeRow::new("x", 3.0, 3.0);
        assert_eq!((same.absolute, same.percent), (0.0, Some(0.0)));
        assert_eq!(same.display_change(), "0.0 (0.0%)");
        assert_eq!(ChangeRow::new("x", 0.0, 2.0).percent, None);
    }

    #[test]
    fn change_table_requires_matching_keys() {
        let base = BTreeMap::from([("a".to_string(), 1.0), ("b".to_string(), 2.0)]);
        let pilot = BTreeMap::from([("a".to_string(), 1.5), ("c".to_string(), 2.0)]);
        assert_eq!(
            change_table(&base, &pilot),
            Err(AnalyticsError::MismatchedKeys(vec!["b".into(), "c".into()]))
        );
        let rows = change_table(&base, &base).unwrap();
        assert!(rows.iter().all(|r| r.absolute == 0.0 && r.percent == Some(0.0)));
    }

    proptest! {
        #[test]
        fn wait_is_at_least_half_the_mean_headway(h in prop::collection::vec(1i64..3600, 2..40)) {
            let s = HeadwaySample { stop: 0, period: String::new(), headways: h.clone() };
            let w = expected_wait_time(&s).unwrap();
            let half_mean = h.iter().sum::<i64>() as f64 / h.len() as f64 / 2.0 / 60.0;
            prop_assert!(w >= half_mean - 1e-12);
            let constant = h.iter().all(|&x| x == h[0]);
            prop_assert_eq!((w - half_mean).abs() < 1e-12, constant);
        }

        #[test]
        fn absolute_change_is_antisymmetric(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            prop_assert_eq!(ChangeRow::new("m", a, b).absolute, -ChangeRow::new("m", b, a).absolute);
        }

        #[test]
        fn percentile_is_a_sample_member(v in prop::collection::vec(-1e3f64..1e3, 1..50), p in 0.0f64..=100.0) {
            let q = percentile(&v, p).unwrap();
            prop_assert!(v.contains(&q));
            let at_or_below = v.iter().filter(|&&x| x <= q).count() as f64;
            prop_assert!(at_or_below >= p / 100.0 * v.len() as f64);
        }
    }
}
