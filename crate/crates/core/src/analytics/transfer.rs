use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{percentile, ComplianceRecord};
use crate::time::Seconds;

/// One inferred transfer onto the studied route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub from_route: String,
    pub to_trip: String,
    pub stop: String,
    pub transfer_time: Seconds,
    pub period: String,
    /// Comparison bucket, e.g. `base` or `pilot`.
    pub scenario: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopTransfers {
    pub stop: String,
    /// Transfers per hour over all scenarios.
    pub volume: f64,
    /// 75th percentile transfer time per scenario.
    pub p75: BTreeMap<String, Seconds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub stops: Vec<StopTransfers>,
    /// Stops at or below the volume floor, with their volume.
    pub excluded: Vec<(String, f64)>,
    /// Records with a negative transfer time.
    pub invalid: usize,
}

/// Per-stop 75th percentile transfer times for stops busier than `min_volume`
/// transfers per hour. `hours` is the total observed time behind `records`.
pub fn transfer_time_summary(records: &[TransferRecord], min_volume: f64, hours: f64) -> TransferSummary {
    let mut by_stop: BTreeMap<&str, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    let mut invalid = 0;
    for r in records {
        if r.transfer_time < 0 {
            invalid += 1;
            continue;
        }
        by_stop
            .entry(&r.stop)
            .or_default()
            .entry(&r.scenario)
            .or_default()
            .push(r.transfer_time as f64);
    }
    let mut stops = Vec::new();
    let mut excluded = Vec::new();
    for (stop, scenarios) in by_stop {
        let count: usize = scenarios.values().map(Vec::len).sum();
        let volume = if hours > 0.0 { count as f64 / hours } else { 0.0 };
        if volume <= min_volume {
            excluded.push((stop.to_string(), volume));
            continue;
        }
        let p75 = scenarios
            .into_iter()
            .map(|(s, v)| (s.to_string(), percentile(&v, 75.0).expect("non-empty group") as Seconds))
            .collect();
        stops.push(StopTransfers { stop: stop.to_string(), volume, p75 });
    }
    TransferSummary { stops, excluded, invalid }
}

/// Sorted values with nearest-rank quartiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub values: Vec<f64>,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Distribution {
    pub fn from_values(mut values: Vec<f64>) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let q = |p| percentile(&values, p).expect("non-empty");
        Some(Self { q1: q(25.0), median: q(50.0), q3: q(75.0), values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenioritySummary {
    pub compliant: Option<Distribution>,
    pub non_compliant: Option<Distribution>,
    /// Records whose driver is missing or absent from the roster.
    pub unresolved: usize,
    /// Set when either group is empty.
    pub one_sided: bool,
}

/// Driver seniority (years) of compliant versus non-compliant trips.
pub fn seniority_compliance_summary(
    records: &[ComplianceRecord],
    roster: &BTreeMap<String, f64>,
) -> SenioritySummary {
    let (mut yes, mut no) = (Vec::new(), Vec::new());
    let mut unresolved = 0;
    for r in records {
        match r.driver_id.as_ref().and_then(|d| roster.get(d)) {
            Some(&years) if r.compliant => yes.push(years),
            Some(&years) => no.push(years),
            None => unresolved += 1,
        }
    }
    let compliant = Distribution::from_values(yes);
    let non_compliant = Distribution::from_values(no);
    let one_sided = compliant.is_none() || non_compliant.is_none();
    SenioritySummary { compliant, non_compliant, unresolved, one_sided }
}
