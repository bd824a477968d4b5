use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    adjustment_histogram, change_table, enroute_compliance, expected_wait_time, percentile,
    seniority_compliance_summary, terminal_compliance, transfer_time_summary, AdjustmentBin, AnalyticsError,
    ChangeRow, ComplianceSummary, DwellObservation, HeadwaySample, InstructedDeparture, SenioritySummary,
    TransferRecord, TransferSummary,
};
use crate::sim::{DwellParams, EventRow, ReplicationLog};
use crate::time::Seconds;

/// Row labels of the route metrics table, in display order.
pub const METRIC_NAMES: [&str; 4] = ["avg trips per day", "wait time (mins)", "90th run time (mins)", "90th load"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservedTrip {
    pub canceled: bool,
    pub arrivals: BTreeMap<usize, Seconds>,
    pub departures: BTreeMap<usize, Seconds>,
    pub loads: BTreeMap<usize, u32>,
}

/// Trip-level observations of one service day (or one replication).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservedDay {
    pub trips: BTreeMap<String, ObservedTrip>,
    pub stop_count: usize,
}

impl ObservedDay {
    /// Builds a day from trip event rows; passenger rows are ignored.
    pub fn from_events(rows: &[EventRow]) -> Self {
        let mut day = ObservedDay::default();
        for r in rows.iter().filter(|r| r.entity == "trip") {
            let trip = day.trips.entry(r.trip.clone()).or_default();
            if r.event == "cancel" {
                trip.canceled = true;
                continue;
            }
            let Some(stop) = r.stop else { continue };
            day.stop_count = day.stop_count.max(stop + 1);
            match (r.event.as_str(), r.time, r.value) {
                ("arrive", Some(t), _) => {
                    trip.arrivals.insert(stop, t);
                }
                ("depart", Some(t), _) => {
                    trip.departures.insert(stop, t);
                }
                ("load", _, Some(v)) if v >= 0.0 => {
                    trip.loads.insert(stop, v.round() as u32);
                }
                _ => {}
            }
        }
        day
    }

    pub fn from_log(log: &ReplicationLog) -> Self {
        let mut day = Self::from_events(&log.events());
        day.stop_count = day.stop_count.max(log.stop_count);
        day
    }

    fn running(&self) -> impl Iterator<Item = (&String, &ObservedTrip)> {
        self.trips.iter().filter(|(_, t)| !t.canceled && !t.departures.is_empty())
    }

    /// Departures at the first stop, arrivals elsewhere.
    fn passing_times(&self, stop: usize) -> Vec<Seconds> {
        let mut times: Vec<Seconds> = self
            .running()
            .filter_map(|(_, t)| if stop == 0 { t.departures.get(&0) } else { t.arrivals.get(&stop) })
            .copied()
            .collect();
        times.sort_unstable();
        times
    }

    /// Headways at `stop` within this day.
    pub fn headways_at(&self, stop: usize) -> Vec<Seconds> {
        self.passing_times(stop).windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Observed departure per `(trip_id, stop)`.
    pub fn departures(&self) -> BTreeMap<(String, usize), Seconds> {
        self.running()
            .flat_map(|(id, t)| t.departures.iter().map(move |(&j, &d)| ((id.clone(), j), d)))
            .collect()
    }
}

fn stop_count(days: &[ObservedDay]) -> usize {
    days.iter().map(|d| d.stop_count).max().unwrap_or(0)
}

/// Wait time at one stop with headways pooled over days (never across a day boundary).
fn stop_wait(days: &[ObservedDay], stop: usize) -> Option<f64> {
    let headways: Vec<Seconds> = days.iter().flat_map(|d| d.headways_at(stop)).collect();
    expected_wait_time(&HeadwaySample { stop, period: String::new(), headways }).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteMetrics {
    pub trips_per_day: f64,
    /// Mean over boarding stops of the headway-based wait, minutes.
    pub wait_minutes: f64,
    /// 90th percentile first-departure to last-arrival time, minutes.
    pub p90_run_minutes: f64,
    /// 90th percentile of each trip's peak load.
    pub p90_load: f64,
}

impl RouteMetrics {
    pub fn to_map(&self) -> BTreeMap<String, f64> {
        let values = [self.trips_per_day, self.wait_minutes, self.p90_run_minutes, self.p90_load];
        METRIC_NAMES.iter().map(|n| n.to_string()).zip(values).collect()
    }

    /// Change rows in [`METRIC_NAMES`] order.
    pub fn compare(base: &Self, pilot: &Self) -> Vec<ChangeRow> {
        let rows = change_table(&base.to_map(), &pilot.to_map()).expect("same metric keys");
        METRIC_NAMES
            .iter()
            .map(|n| rows.iter().find(|r| r.metric == *n).expect("known metric").clone())
            .collect()
    }
}

pub fn route_metrics(days: &[ObservedDay]) -> Result<RouteMetrics, AnalyticsError> {
    if days.is_empty() {
        return Err(AnalyticsError::Empty);
    }
    let m = stop_count(days);
    let trips: usize = days.iter().map(|d| d.running().count()).sum();
    let waits: Vec<f64> = (0..m.saturating_sub(1)).filter_map(|j| stop_wait(days, j)).collect();
    if waits.is_empty() {
        return Err(AnalyticsError::TooFewHeadways(0));
    }
    let runs: Vec<f64> = days
        .iter()
        .flat_map(|d| d.running())
        .filter_map(|(_, t)| Some((t.arrivals.get(&(m - 1))? - t.departures.get(&0)?) as f64 / 60.0))
        .collect();
    let peaks: Vec<f64> =
        days.iter().flat_map(|d| d.running()).filter_map(|(_, t)| t.loads.values().max().map(|&l| l as f64)).collect();
    Ok(RouteMetrics {
        trips_per_day: trips as f64 / days.len() as f64,
        wait_minutes: waits.iter().sum::<f64>() / waits.len() as f64,
        p90_run_minutes: percentile(&runs, 90.0)?,
        p90_load: percentile(&peaks, 90.0)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopWaitChange {
    pub stop: usize,
    pub base: Option<f64>,
    pub pilot: Option<f64>,
    /// Present when both sides have a wait.
    pub change: Option<ChangeRow>,
}

/// Per-stop wait change over boarding stops.
pub fn wait_change_by_stop(base: &[ObservedDay], pilot: &[ObservedDay]) -> Vec<StopWaitChange> {
    let m = stop_count(base).max(stop_count(pilot));
    (0..m.saturating_sub(1))
        .map(|stop| {
            let (b, p) = (stop_wait(base, stop), stop_wait(pilot, stop));
            let change = b.zip(p).map(|(b, p)| ChangeRow::new(format!("stop {stop}"), b, p));
            StopWaitChange { stop, base: b, pilot: p, change }
        })
        .collect()
}

/// Base-versus-pilot evaluation with optional compliance, transfer and seniority sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metrics: Vec<ChangeRow>,
    pub stop_waits: Vec<StopWaitChange>,
    pub terminal: Option<ComplianceSummary>,
    pub adjustments: Vec<AdjustmentBin>,
    pub enroute: Option<Result<ComplianceSummary, String>>,
    pub transfers: Option<TransferSummary>,
    pub seniority: Option<SenioritySummary>,
}

impl Report {
    pub fn compare(base: &[ObservedDay], pilot: &[ObservedDay]) -> Result<Self, AnalyticsError> {
        let metrics = RouteMetrics::compare(&route_metrics(base)?, &route_metrics(pilot)?);
        Ok(Self {
            metrics,
            stop_waits: wait_change_by_stop(base, pilot),
            terminal: None,
            adjustments: Vec::new(),
            enroute: None,
            transfers: None,
            seniority: None,
        })
    }

    /// Classifies instructed departures against the first matching pilot observation.
    pub fn with_terminal(mut self, instructions: &[InstructedDeparture], pilot: &[ObservedDay]) -> Self {
        let mut observed = BTreeMap::new();
        for day in pilot {
            for (k, v) in day.departures() {
                observed.entry(k).or_insert(v);
            }
        }
        let summary = terminal_compliance(instructions, &observed);
        self.adjustments = adjustment_histogram(instructions, &summary);
        self.terminal = Some(summary);
        self
    }

    pub fn with_enroute(
        mut self,
        instructed: &[DwellObservation],
        baseline: &[DwellObservation],
        params: &DwellParams,
    ) -> Self {
        self.enroute = Some(enroute_compliance(instructed, baseline, params).map_err(|e| e.to_string()));
        self
    }

    pub fn with_transfers(mut self, records: &[TransferRecord], min_volume: f64, hours: f64) -> Self {
        self.transfers = Some(transfer_time_summary(records, min_volume, hours));
        self
    }

    /// Seniority of drivers behind every classified instruction.
    pub fn with_roster(mut self, roster: &BTreeMap<String, f64>) -> Self {
        let mut records = Vec::new();
        if let Some(t) = &self.terminal {
            records.extend(t.records.iter().cloned());
        }
        if let Some(Ok(e)) = &self.enroute {
            records.extend(e.records.iter().cloned());
        }
        self.seniority = Some(seniority_compliance_summary(&records, roster));
        self
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.2}"));

        out.push_str("== route metrics ==\n");
        let _ = writeln!(out, "{:<22} {:>10} {:>10}  change", "metric", "base", "pilot");
        for r in &self.metrics {
            let _ = writeln!(out, "{:<22} {:>10.2} {:>10.2}  {}", r.metric, r.base, r.pilot, r.display_change());
        }

        out.push_str("\n== wait time by stop (mins) ==\n");
        let _ = writeln!(out, "{:<6} {:>8} {:>8}  change", "stop", "base", "pilot");
        for s in &self.stop_waits {
            let change = s.change.as_ref().map_or("n/a".to_string(), ChangeRow::display_change);
            let _ = writeln!(out, "{:<6} {:>8} {:>8}  {change}", s.stop, opt(s.base), opt(s.pilot));
        }

        out.push_str("\n== terminal compliance ==\n");
        match &self.terminal {
            Some(t) => {
                render_summary(&mut out, t);
                out.push_str("adjustment (min)  compliant  non-compliant\n");
                for b in &self.adjustments {
                    let _ = writeln!(out, "[{:>3},{:>3})  {:>9}  {:>13}", b.minute, b.minute + 1, b.compliant, b.non_compliant);
                }
            }
            None => out.push_str("unavailable (no intervention log)\n"),
        }

        out.push_str("\n== en-route compliance ==\n");
        match &self.enroute {
            Some(Ok(e)) => render_summary(&mut out, e),
            Some(Err(msg)) => {
                let _ = writeln!(out, "unavailable ({msg})");
            }
            None => out.push_str("unavailable (no dwell observations)\n"),
        }

        out.push_str("\n== transfers ==\n");
        match &self.transfers {
            Some(t) => {
                for s in &t.stops {
                    let p75: Vec<String> = s.p75.iter().map(|(k, v)| format!("{k}={v}s")).collect();
                    let _ = writeln!(out, "stop {} volume {:.1}/h p75 {}", s.stop, s.volume, p75.join(" "));
                }
                for (stop, v) in &t.excluded {
                    let _ = writeln!(out, "stop {stop} excluded (volume {v:.1}/h)");
                }
                if t.invalid > 0 {
                    let _ = writeln!(out, "invalid records: {}", t.invalid);
                }
            }
            None => out.push_str("unavailable (no transfer records)\n"),
        }

        out.push_str("\n== seniority vs compliance ==\n");
        match &self.seniority {
            Some(s) => {
                for (label, d) in [("compliant", &s.compliant), ("non-compliant", &s.non_compliant)] {
                    match d {
                        Some(d) => {
                            let _ = writeln!(
                                out,
                                "{label}: n {} q1 {:.1} median {:.1} q3 {:.1}",
                                d.values.len(),
                                d.q1,
                                d.median,
                                d.q3
                            );
                        }
                        None => {
                            let _ = writeln!(out, "{label}: none");
                        }
                    }
                }
                if s.one_sided {
                    out.push_str("one-sided: a group is empty\n");
                }
                let _ = writeln!(out, "unresolved drivers: {}", s.unresolved);
            }
            None => out.push_str("unavailable (no driver roster)\n"),
        }
        out
    }
}

fn render_summary(out: &mut String, s: &ComplianceSummary) {
    let _ = writeln!(
        out,
        "instructed {} compliant {} rate {} excluded {}",
        s.instructed,
        s.compliant,
        s.rate_display(),
        s.excluded
    );
}
