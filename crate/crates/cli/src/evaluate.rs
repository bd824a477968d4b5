use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use headway_core::analytics::{DwellObservation, InstructedDeparture, ObservedDay, Report, TransferRecord};
use headway_core::dss::{read_interventions, InterventionKind};
use headway_core::io::{read_events, read_table};
use headway_core::sim::DwellParams;
use headway_core::time::Seconds;
use serde::Deserialize;

use crate::{require_file, scenario_at, usage};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Event logs of the comparison period, one file per day.
    #[arg(long, required = true, num_args = 1..)]
    base: Vec<PathBuf>,
    /// Event logs of the pilot period, one file per day.
    #[arg(long, required = true, num_args = 1..)]
    pilot: Vec<PathBuf>,
    /// Intervention log written by the service; start-terminal confirmations
    /// are checked against pilot departures.
    #[arg(long)]
    interventions: Option<PathBuf>,
    /// Driver roster with columns driver_id, seniority.
    #[arg(long)]
    roster: Option<PathBuf>,
    /// Inferred transfers with columns from_route, to_trip, stop, transfer_time, period, scenario.
    #[arg(long)]
    transfers: Option<PathBuf>,
    /// Transfers per hour a stop must exceed to be reported.
    #[arg(long, default_value_t = 10.0)]
    transfer_min_volume: f64,
    /// Observed service hours behind the transfer records.
    #[arg(long, default_value_t = 1.0)]
    transfer_hours: f64,
    /// Dwell observations with columns trip_id, stop, boardings, alightings,
    /// observed_dwell, instructed and optional driver_id.
    #[arg(long)]
    dwell: Option<PathBuf>,
    /// Scenario supplying dwell parameters; defaults apply without one.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct RosterRow {
    driver_id: String,
    seniority: f64,
}

#[derive(Debug, Deserialize)]
struct DwellRow {
    trip_id: String,
    stop: usize,
    boardings: u32,
    alightings: u32,
    observed_dwell: Seconds,
    instructed: bool,
    #[serde(default)]
    driver_id: Option<String>,
}

fn days(paths: &[PathBuf]) -> Result<Vec<ObservedDay>> {
    paths
        .iter()
        .map(|p| {
            require_file(p, "event log")?;
            Ok(ObservedDay::from_events(&read_events(p).map_err(usage)?))
        })
        .collect()
}

fn table<T: serde::de::DeserializeOwned>(path: &Path, what: &str, required: &[&str], optional: &[&str]) -> Result<Vec<T>> {
    require_file(path, what)?;
    read_table(path, required, optional).map_err(usage)
}

pub fn run(a: Args) -> Result<()> {
    let base = days(&a.base)?;
    let pilot = days(&a.pilot)?;
    let mut report = Report::compare(&base, &pilot).map_err(usage)?;

    if let Some(path) = &a.interventions {
        require_file(path, "intervention log")?;
        let instructions: Vec<InstructedDeparture> = read_interventions(path)
            .map_err(usage)?
            .into_iter()
            .filter(|e| e.kind == InterventionKind::HoldConfirm && e.stop == Some(0))
            .filter_map(|e| {
                Some(InstructedDeparture {
                    instructed_departure: e.instructed_departure?,
                    trip_id: e.trip_id,
                    stop: 0,
                    scheduled_departure: e.scheduled_departure,
                    driver_id: e.driver_id,
                })
            })
            .collect();
        report = report.with_terminal(&instructions, &pilot);
    }

    if let Some(path) = &a.dwell {
        let params = match &a.scenario {
            Some(p) => scenario_at(p)?.dwell,
            None => DwellParams::default(),
        };
        let rows: Vec<DwellRow> = table(
            path,
            "dwell",
            &["trip_id", "stop", "boardings", "alightings", "observed_dwell", "instructed"],
            &["driver_id"],
        )?;
        let (instructed, baseline): (Vec<_>, Vec<_>) = rows.into_iter().partition(|r| r.instructed);
        let obs = |rows: Vec<DwellRow>| -> Vec<DwellObservation> {
            rows.into_iter()
                .map(|r| DwellObservation {
                    trip_id: r.trip_id,
                    stop: r.stop,
                    boardings: r.boardings,
                    alightings: r.alightings,
                    observed_dwell: r.observed_dwell,
                    driver_id: r.driver_id.filter(|d| !d.is_empty()),
                })
                .collect()
        };
        report = report.with_enroute(&obs(instructed), &obs(baseline), &params);
    }

    if let Some(path) = &a.transfers {
        if !(a.transfer_hours > 0.0) {
            return Err(usage(anyhow!("--transfer-hours must be positive")));
        }
        let records: Vec<TransferRecord> = table(
            path,
            "transfer",
            &["from_route", "to_trip", "stop", "transfer_time", "period", "scenario"],
            &[],
        )?;
        report = report.with_transfers(&records, a.transfer_min_volume, a.transfer_hours);
    }

    if let Some(path) = &a.roster {
        let rows: Vec<RosterRow> = table(path, "roster", &["driver_id", "seniority"], &[])?;
        let roster: BTreeMap<String, f64> = rows.into_iter().map(|r| (r.driver_id, r.seniority)).collect();
        report = report.with_roster(&roster);
    }

    let text = report.render();
    if let Some(path) = &a.out {
        std::fs::write(path, &text).with_context(|| path.display().to_string())?;
    }
    print!("{text}");
    Ok(())
}
