//! Delimited-text inputs and outputs: route, schedule, demand and link-time
//! tables, scenario files and simulation event tables.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::{
    DemandProfile, LinkTimeDistribution, Periods, PolicyThresholds, RouteConfig, ScheduledTrip, StopSpec,
    ValidationReport,
};
use crate::sim::{ComplianceModel, DwellParams, EventRow, SimScenario};
use crate::time::{format_clock, parse_clock, ClockTime, Seconds};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: unknown column `{column}`")]
    UnknownColumn { path: PathBuf, column: String },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}, line {line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid scenario:\n{0}")]
    Invalid(ValidationReport),
}

impl IoError {
    fn format(path: &Path, message: impl Into<String>) -> Self {
        IoError::Format { path: path.to_path_buf(), message: message.into() }
    }
}

/// Reads a CSV file whose header must consist of `required` columns plus any of `optional`.
pub fn read_table<T: DeserializeOwned>(path: &Path, required: &[&str], optional: &[&str]) -> Result<Vec<T>, IoError> {
    let file = std::fs::File::open(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    read_table_from(file, path, required, optional)
}

pub fn read_table_from<T: DeserializeOwned, R: std::io::Read>(
    reader: R,
    path: &Path,
    required: &[&str],
    optional: &[&str],
) -> Result<Vec<T>, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    for h in headers.iter() {
        if !required.contains(&h) && !optional.contains(&h) {
            return Err(IoError::UnknownColumn { path: path.to_path_buf(), column: h.to_string() });
        }
    }
    for r in required {
        if !headers.iter().any(|h| h == *r) {
            return Err(IoError::MissingColumn { path: path.to_path_buf(), column: r.to_string() });
        }
    }
    rdr.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> IoError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    IoError::Parse { path: path.to_path_buf(), line, message: e.to_string() }
}

fn write_rows<S: Serialize>(path: &Path, rows: impl IntoIterator<Item = S>) -> Result<(), IoError> {
    let io = |source| IoError::Io { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    for row in rows {
        w.serialize(row).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopRow {
    pub stop_id: String,
    pub stop_index: usize,
    pub stop_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRow {
    pub trip_id: String,
    pub block_id: String,
    pub driver_id: Option<String>,
    pub recovery_time: Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopTimeRow {
    pub trip_id: String,
    pub stop_index: usize,
    pub departure_time: ClockTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandRateRow {
    pub stop_index: usize,
    pub period: usize,
    pub rate_per_hour: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DestinationRow {
    pub origin: usize,
    pub period: usize,
    pub destination: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkTimeRow {
    pub link: usize,
    pub period: usize,
    pub seconds: Seconds,
}

pub fn read_stops(path: &Path) -> Result<Vec<StopSpec>, IoError> {
    let mut rows: Vec<StopRow> = read_table(path, &["stop_id", "stop_index", "stop_name"], &[])?;
    rows.sort_by_key(|r| r.stop_index);
    Ok(rows.into_iter().map(|r| StopSpec { stop_id: r.stop_id, index: r.stop_index, name: r.stop_name }).collect())
}

/// Joins trips and stop times into scheduled trips in dispatch order.
pub fn read_schedule(trips_path: &Path, stop_times_path: &Path, stops: usize) -> Result<Vec<ScheduledTrip>, IoError> {
    let trips: Vec<TripRow> = read_table(trips_path, &["trip_id", "block_id", "recovery_time"], &["driver_id"])?;
    let times: Vec<StopTimeRow> =
        read_table(stop_times_path, &["trip_id", "stop_index", "departure_time"], &[])?;
    let mut by_trip: BTreeMap<&str, BTreeMap<usize, Seconds>> = BTreeMap::new();
    for t in &times {
        if t.stop_index >= stops {
            return Err(IoError::format(stop_times_path, format!("stop index {} out of range", t.stop_index)));
        }
        if by_trip.entry(&t.trip_id).or_default().insert(t.stop_index, t.departure_time.0).is_some() {
            return Err(IoError::format(
                stop_times_path,
                format!("duplicate stop {} for trip {}", t.stop_index, t.trip_id),
            ));
        }
    }
    let known: BTreeSet<&str> = trips.iter().map(|t| t.trip_id.as_str()).collect();
    if let Some(orphan) = by_trip.keys().find(|id| !known.contains(*id)) {
        return Err(IoError::format(stop_times_path, format!("stop times for unknown trip {orphan}")));
    }
    let mut out = Vec::with_capacity(trips.len());
    for t in trips {
        let stops_of = by_trip.remove(t.trip_id.as_str()).unwrap_or_default();
        if stops_of.len() != stops {
            return Err(IoError::format(
                stop_times_path,
                format!("trip {} has {} stop times, expected {stops}", t.trip_id, stops_of.len()),
            ));
        }
        out.push(ScheduledTrip {
            trip_id: t.trip_id,
            block_id: t.block_id,
            departures: stops_of.into_values().collect(),
            recovery_time: t.recovery_time,
            driver_id: t.driver_id.filter(|d| !d.is_empty()),
        });
    }
    out.sort_by_key(ScheduledTrip::start);
    Ok(out)
}

pub fn read_demand(
    rates_path: &Path,
    destinations_path: &Path,
    periods: Periods,
    stops: usize,
) -> Result<DemandProfile, IoError> {
    let rates: Vec<DemandRateRow> = read_table(rates_path, &["stop_index", "period", "rate_per_hour"], &[])?;
    let dests: Vec<DestinationRow> =
        read_table(destinations_path, &["origin", "period", "destination", "probability"], &[])?;
    let mut profile = DemandProfile::zero(periods, stops);
    let n = profile.periods.count();
    for r in rates {
        if r.period >= n || r.stop_index >= stops {
            return Err(IoError::format(rates_path, format!("stop {} period {} out of range", r.stop_index, r.period)));
        }
        profile.rates[r.period][r.stop_index] = r.rate_per_hour;
    }
    for d in dests {
        if d.period >= n || d.origin >= stops {
            return Err(IoError::format(destinations_path, format!("origin {} period {} out of range", d.origin, d.period)));
        }
        profile.destinations[d.period][d.origin].push((d.destination, d.probability));
    }
    Ok(profile)
}

pub fn read_link_times(path: &Path, periods: Periods, stops: usize) -> Result<LinkTimeDistribution, IoError> {
    let rows: Vec<LinkTimeRow> = read_table(path, &["link", "period", "seconds"], &[])?;
    let n = periods.count();
    let mut samples = vec![vec![Vec::new(); stops.saturating_sub(1)]; n];
    for r in rows {
        if r.period >= n || r.link + 1 >= stops {
            return Err(IoError::format(path, format!("link {} period {} out of range", r.link, r.period)));
        }
        samples[r.period][r.link].push(r.seconds);
    }
    Ok(LinkTimeDistribution { periods, samples })
}

/// The scenario document: data file paths plus scalar parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub route_id: String,
    #[serde(default)]
    pub direction: String,
    pub control_stops: Vec<usize>,
    pub horizon: ClockTime,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub canceled_trips: Vec<String>,
    #[serde(default)]
    pub capacity: Option<u32>,
    #[serde(default = "default_offsets")]
    pub terminal_ready_offsets: Vec<Seconds>,
    pub files: ScenarioPaths,
    pub periods: PeriodBoundaries,
    #[serde(default)]
    pub thresholds: ThresholdOverrides,
    #[serde(default)]
    pub dwell: Option<DwellParams>,
    #[serde(default)]
    pub compliance: Option<ComplianceModel>,
}

fn default_offsets() -> Vec<Seconds> {
    vec![-600]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioPaths {
    pub stops: PathBuf,
    pub trips: PathBuf,
    pub stop_times: PathBuf,
    pub demand_rates: PathBuf,
    pub demand_destinations: PathBuf,
    pub link_times: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodBoundaries {
    pub demand: Vec<ClockTime>,
    pub link_times: Vec<ClockTime>,
}

/// Partial thresholds; unset fields keep their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdOverrides {
    pub early_allowance: Option<Seconds>,
    pub late_allowance: Option<Seconds>,
    pub min_layover: Option<Seconds>,
    pub max_hold: Option<Seconds>,
    pub hold_grid: Option<Seconds>,
}

impl ThresholdOverrides {
    pub fn apply(&self, base: PolicyThresholds) -> PolicyThresholds {
        PolicyThresholds {
            early_allowance: self.early_allowance.unwrap_or(base.early_allowance),
            late_allowance: self.late_allowance.unwrap_or(base.late_allowance),
            min_layover: self.min_layover.unwrap_or(base.min_layover),
            max_hold: self.max_hold.unwrap_or(base.max_hold),
            hold_grid: self.hold_grid.unwrap_or(base.hold_grid),
        }
    }

    pub fn from_thresholds(t: &PolicyThresholds) -> Self {
        Self {
            early_allowance: Some(t.early_allowance),
            late_allowance: Some(t.late_allowance),
            min_layover: Some(t.min_layover),
            max_hold: Some(t.max_hold),
            hold_grid: Some(t.hold_grid),
        }
    }
}

fn periods(path: &Path, what: &str, b: &[ClockTime]) -> Result<Periods, IoError> {
    Periods::new(b.iter().map(|c| c.0).collect())
        .map_err(|e| IoError::format(path, format!("{what} periods: {e}")))
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

/// Loads and validates a scenario. Data paths are relative to the scenario file.
pub fn load_scenario(path: &Path) -> Result<SimScenario, IoError> {
    let text = read_text(path)?;
    let file: ScenarioFile = toml::from_str(&text).map_err(|e| IoError::format(path, e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let at = |p: &Path| base.join(p);

    let stops = read_stops(&at(&file.files.stops))?;
    let m = stops.len();
    let schedule = read_schedule(&at(&file.files.trips), &at(&file.files.stop_times), m)?;
    let demand = read_demand(
        &at(&file.files.demand_rates),
        &at(&file.files.demand_destinations),
        periods(path, "demand", &file.periods.demand)?,
        m,
    )?;
    let link_times = read_link_times(&at(&file.files.link_times), periods(path, "link time", &file.periods.link_times)?, m)?;

    let scenario = SimScenario {
        route: RouteConfig {
            route_id: file.route_id,
            direction: file.direction,
            stops,
            control_stops: file.control_stops,
        },
        schedule,
        canceled_trips: file.canceled_trips.into_iter().collect(),
        demand,
        link_times,
        thresholds: file.thresholds.apply(PolicyThresholds::default()),
        dwell: file.dwell.unwrap_or_default(),
        compliance: file.compliance.unwrap_or_default(),
        capacity: file.capacity,
        terminal_ready_offsets: file.terminal_ready_offsets,
        horizon: file.horizon.0,
        seed: file.seed,
    };
    let report = scenario.validate();
    if !report.is_empty() {
        return Err(IoError::Invalid(report));
    }
    Ok(scenario)
}

/// Writes `scenario` as `scenario.toml` plus data tables under `dir`.
pub fn write_scenario(dir: &Path, scenario: &SimScenario) -> Result<PathBuf, IoError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?;
    let files = ScenarioPaths {
        stops: "stops.csv".into(),
        trips: "trips.csv".into(),
        stop_times: "stop_times.csv".into(),
        demand_rates: "demand_rates.csv".into(),
        demand_destinations: "demand_destinations.csv".into(),
        link_times: "link_times.csv".into(),
    };
    write_rows(
        &dir.join(&files.stops),
        scenario.route.stops.iter().map(|s| StopRow {
            stop_id: s.stop_id.clone(),
            stop_index: s.index,
            stop_name: s.name.clone(),
        }),
    )?;
    write_rows(
        &dir.join(&files.trips),
        scenario.schedule.iter().map(|t| TripRow {
            trip_id: t.trip_id.clone(),
            block_id: t.block_id.clone(),
            driver_id: t.driver_id.clone(),
            recovery_time: t.recovery_time,
        }),
    )?;
    write_rows(
        &dir.join(&files.stop_times),
        scenario.schedule.iter().flat_map(|t| {
            t.departures.iter().enumerate().map(|(j, &d)| StopTimeRow {
                trip_id: t.trip_id.clone(),
                stop_index: j,
                departure_time: ClockTime(d),
            })
        }),
    )?;
    let d = &scenario.demand;
    write_rows(
        &dir.join(&files.demand_rates),
        d.rates.iter().enumerate().flat_map(|(p, row)| {
            row.iter().enumerate().map(move |(j, &rate)| DemandRateRow { stop_index: j, period: p, rate_per_hour: rate })
        }),
    )?;
    write_rows(
        &dir.join(&files.demand_destinations),
        d.destinations.iter().enumerate().flat_map(|(p, row)| {
            row.iter().enumerate().flat_map(move |(o, dests)| {
                dests.iter().map(move |&(dest, probability)| DestinationRow {
                    origin: o,
                    period: p,
                    destination: dest,
                    probability,
                })
            })
        }),
    )?;
    write_rows(
        &dir.join(&files.link_times),
        scenario.link_times.samples.iter().enumerate().flat_map(|(p, links)| {
            links.iter().enumerate().flat_map(move |(l, s)| {
                s.iter().map(move |&seconds| LinkTimeRow { link: l, period: p, seconds })
            })
        }),
    )?;
    let file = ScenarioFile {
        route_id: scenario.route.route_id.clone(),
        direction: scenario.route.direction.clone(),
        control_stops: scenario.route.control_stops.clone(),
        horizon: ClockTime(scenario.horizon),
        seed: scenario.seed,
        canceled_trips: scenario.canceled_trips.iter().cloned().collect(),
        capacity: scenario.capacity,
        terminal_ready_offsets: scenario.terminal_ready_offsets.clone(),
        files,
        periods: PeriodBoundaries {
            demand: d.periods.boundaries().iter().map(|&b| ClockTime(b)).collect(),
            link_times: scenario.link_times.periods.boundaries().iter().map(|&b| ClockTime(b)).collect(),
        },
        thresholds: ThresholdOverrides::from_thresholds(&scenario.thresholds),
        dwell: Some(scenario.dwell),
        compliance: Some(scenario.compliance),
    };
    let path = dir.join("scenario.toml");
    let text = toml::to_string(&file).map_err(|e| IoError::format(&path, e.to_string()))?;
    std::fs::write(&path, text).map_err(|source| IoError::Io { path: path.clone(), source })?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EventCsvRow {
    entity: String,
    event: String,
    time: Option<String>,
    stop: Option<usize>,
    trip: String,
    value: Option<f64>,
}

pub const EVENT_COLUMNS: [&str; 6] = ["entity", "event", "time", "stop", "trip", "value"];

/// Writes an event table; times are `hh:mm:ss`.
pub fn write_events(path: &Path, rows: &[EventRow]) -> Result<(), IoError> {
    write_rows(
        path,
        rows.iter().map(|r| EventCsvRow {
            entity: r.entity.clone(),
            event: r.event.clone(),
            time: r.time.map(format_clock),
            stop: r.stop,
            trip: r.trip.clone(),
            value: r.value,
        }),
    )
}

pub fn read_events(path: &Path) -> Result<Vec<EventRow>, IoError> {
    let rows: Vec<EventCsvRow> = read_table(path, &EVENT_COLUMNS, &[])?;
    rows.into_iter()
        .enumerate()
        .map(|(k, r)| {
            let time = match r.time.as_deref().filter(|t| !t.is_empty()) {
                None => None,
                Some(t) => Some(parse_clock(t).map_err(|e| IoError::Parse {
                    path: path.to_path_buf(),
                    line: k as u64 + 2,
                    message: e.to_string(),
                })?),
            };
            Ok(EventRow { entity: r.entity, event: r.event, time, stop: r.stop, trip: r.trip, value: r.value })
        })
        .collect()
}
