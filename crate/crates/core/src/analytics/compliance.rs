use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{percentile, AnalyticsError};
use crate::sim::{dwell_time, DwellParams};
use crate::time::Seconds;

/// Terminal departures within this many seconds of the instruction count as compliant.
pub const TERMINAL_TOLERANCE: Seconds = 45;
/// Smallest non-instructed sample that can form the dwell-deviation threshold.
pub const ENROUTE_MIN_BASELINE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ComplianceRule {
    #[serde(rename = "terminal-45s")]
    Terminal45s,
    #[serde(rename = "dwell-deviation")]
    DwellDeviation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceRecord {
    pub trip_id: String,
    pub stop: usize,
    /// Instructed departure (terminal rule) or dwell deviation threshold (dwell rule).
    pub instructed: Seconds,
    /// Observed departure (terminal rule) or observed dwell deviation (dwell rule).
    pub observed: Seconds,
    pub compliant: bool,
    pub rule: ComplianceRule,
    pub driver_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceSummary {
    pub records: Vec<ComplianceRecord>,
    pub compliant: usize,
    pub instructed: usize,
    /// Instructions without an observation.
    pub excluded: usize,
}

impl ComplianceSummary {
    fn from_records(records: Vec<ComplianceRecord>, excluded: usize) -> Self {
        let compliant = records.iter().filter(|r| r.compliant).count();
        Self { instructed: records.len(), compliant, records, excluded }
    }

    /// Share of classified instructions that were followed, in `[0, 1]`.
    pub fn rate(&self) -> Option<f64> {
        (self.instructed > 0).then(|| self.compliant as f64 / self.instructed as f64)
    }

    /// Rate as a percentage with one decimal, e.g. `35.0%`.
    pub fn rate_display(&self) -> String {
        match self.rate() {
            Some(r) => format!("{:.1}%", r * 100.0),
            None => "n/a".to_string(),
        }
    }
}

/// A confirmed departure instruction at the start terminal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructedDeparture {
    pub trip_id: String,
    pub stop: usize,
    pub instructed_departure: Seconds,
    pub scheduled_departure: Option<Seconds>,
    pub driver_id: Option<String>,
}

/// Compliant iff `|observed − instructed| ≤ 45 s`.
pub fn terminal_compliance(
    instructions: &[InstructedDeparture],
    observed: &BTreeMap<(String, usize), Seconds>,
) -> ComplianceSummary {
    let mut records = Vec::new();
    let mut excluded = 0;
    for ins in instructions {
        let Some(&obs) = observed.get(&(ins.trip_id.clone(), ins.stop)) else {
            excluded += 1;
            continue;
        };
        records.push(ComplianceRecord {
            trip_id: ins.trip_id.clone(),
            stop: ins.stop,
            instructed: ins.instructed_departure,
            observed: obs,
            compliant: (obs - ins.instructed_departure).abs() <= TERMINAL_TOLERANCE,
            rule: ComplianceRule::Terminal45s,
            driver_id: ins.driver_id.clone(),
        });
    }
    ComplianceSummary::from_records(records, excluded)
}

/// Compliant and non-compliant counts per 1-minute bin of instructed
/// adjustment (instructed − scheduled departure).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustmentBin {
    /// Bin covers `[minute, minute + 1)` minutes.
    pub minute: i64,
    pub compliant: usize,
    pub non_compliant: usize,
}

pub fn adjustment_histogram(
    instructions: &[InstructedDeparture],
    summary: &ComplianceSummary,
) -> Vec<AdjustmentBin> {
    let scheduled: BTreeMap<(&str, usize), Seconds> = instructions
        .iter()
        .filter_map(|i| Some(((i.trip_id.as_str(), i.stop), i.scheduled_departure?)))
        .collect();
    let mut bins: BTreeMap<i64, AdjustmentBin> = BTreeMap::new();
    for r in &summary.records {
        let Some(&st) = scheduled.get(&(r.trip_id.as_str(), r.stop)) else { continue };
        let minute = (r.instructed - st).div_euclid(60);
        let bin = bins.entry(minute).or_insert(AdjustmentBin { minute, compliant: 0, non_compliant: 0 });
        if r.compliant {
            bin.compliant += 1;
        } else {
            bin.non_compliant += 1;
        }
    }
    bins.into_values().collect()
}

/// Expected dwell from observed counts and calibrated unit times.
pub fn theoretical_dwell(boardings: u32, alightings: u32, params: &DwellParams) -> Seconds {
    dwell_time(boardings, alightings, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellObservation {
    pub trip_id: String,
    pub stop: usize,
    pub boardings: u32,
    pub alightings: u32,
    pub observed_dwell: Seconds,
    pub driver_id: Option<String>,
}

impl DwellObservation {
    pub fn deviation(&self, params: &DwellParams) -> Seconds {
        self.observed_dwell - theoretical_dwell(self.boardings, self.alightings, params)
    }
}

/// An instructed trip complied if its dwell deviation strictly exceeds the
/// 90th percentile of deviations among non-instructed trips.
pub fn enroute_compliance(
    instructed: &[DwellObservation],
    baseline: &[DwellObservation],
    params: &DwellParams,
) -> Result<ComplianceSummary, AnalyticsError> {
    if baseline.len() < ENROUTE_MIN_BASELINE {
        return Err(AnalyticsError::InsufficientBaseline { needed: ENROUTE_MIN_BASELINE, got: baseline.len() });
    }
    let deviations: Vec<f64> = baseline.iter().map(|o| o.deviation(params) as f64).collect();
    let threshold = percentile(&deviations, 90.0)? as Seconds;
    let records = instructed
        .iter()
        .map(|o| {
            let dev = o.deviation(params);
            ComplianceRecord {
                trip_id: o.trip_id.clone(),
                stop: o.stop,
                instructed: threshold,
                observed: dev,
                compliant: dev > threshold,
                rule: ComplianceRule::DwellDeviation,
                driver_id: o.driver_id.clone(),
            }
        })
        .collect();
    Ok(ComplianceSummary::from_records(records, 0))
}
