//! Shared vocabulary: routes, schedules, trips, passengers and policy limits.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::time::Seconds;

/// Index of a trip inside its schedule (dispatch order).
pub type TripIdx = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopSpec {
    pub stop_id: String,
    pub index: usize,
    pub name: String,
}

/// One direction of one route. Stop 0 is the start terminal, stop `M-1` the end terminal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteConfig {
    pub route_id: String,
    pub direction: String,
    pub stops: Vec<StopSpec>,
    pub control_stops: Vec<usize>,
}

impl RouteConfig {
    /// `M`, the number of stops.
    pub fn stop_count(&self) -> usize {
        self.stops.len()
    }

    pub fn is_control_stop(&self, stop: usize) -> bool {
        self.control_stops.binary_search(&stop).is_ok()
    }

    /// The first control stop strictly downstream of `stop`, if any.
    pub fn next_control_stop(&self, stop: usize) -> Option<usize> {
        self.control_stops.iter().copied().find(|&c| c > stop)
    }
}

/// Agency limits that bound every holding decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyThresholds {
    /// `s^e`: how early a trip may leave the start terminal.
    pub early_allowance: Seconds,
    /// `s^l`: maximum tolerated lateness at departure.
    pub late_allowance: Seconds,
    /// Guaranteed minimum layover at the start terminal.
    pub min_layover: Seconds,
    pub max_hold: Seconds,
    pub hold_grid: Seconds,
}

impl Default for PolicyThresholds {
    fn default() -> Self {
        Self {
            early_allowance: 240,
            late_allowance: 300,
            min_layover: 0,
            max_hold: 300,
            hold_grid: 30,
        }
    }
}

impl PolicyThresholds {
    /// Holding actions `0, grid, 2*grid, ..., max_hold`.
    pub fn action_grid(&self) -> Vec<Seconds> {
        let step = self.hold_grid.max(1);
        (0..=self.max_hold / step).map(|k| k * step).collect()
    }

    pub fn action_count(&self) -> usize {
        (self.max_hold / self.hold_grid.max(1)) as usize + 1
    }

    /// Rounds a non-negative hold down onto the action grid.
    pub fn round_down(&self, hold: Seconds) -> Seconds {
        if hold <= 0 || self.hold_grid <= 0 {
            return hold.max(0);
        }
        hold - hold % self.hold_grid
    }
}

/// A planned trip. `departures[j]` is `ST_ij`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledTrip {
    pub trip_id: String,
    pub block_id: String,
    pub departures: Vec<Seconds>,
    pub recovery_time: Seconds,
    pub driver_id: Option<String>,
}

impl ScheduledTrip {
    pub fn start(&self) -> Seconds {
        self.departures.first().copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripStatus {
    Scheduled,
    Active,
    Canceled,
}

/// Live record of one trip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripState {
    pub trip_id: String,
    pub status: TripStatus,
    pub arrivals: Vec<Option<Seconds>>,
    pub departures: Vec<Option<Seconds>>,
    pub current_stop: Option<usize>,
    /// Positive when late, negative when early.
    pub schedule_deviation: Option<Seconds>,
}

impl TripState {
    pub fn new(trip_id: impl Into<String>, stops: usize) -> Self {
        Self {
            trip_id: trip_id.into(),
            status: TripStatus::Scheduled,
            arrivals: vec![None; stops],
            departures: vec![None; stops],
            current_stop: None,
            schedule_deviation: None,
        }
    }

    /// Run time from the start-terminal departure to the last-stop arrival.
    pub fn run_time(&self) -> Option<Seconds> {
        let start = (*self.departures.first()?)?;
        let end = (*self.arrivals.last()?)?;
        Some(end - start)
    }
}

/// One simulated rider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassengerJourney {
    pub id: usize,
    pub origin: usize,
    pub destination: usize,
    pub arrival: Seconds,
    pub trip: Option<TripIdx>,
    pub board_time: Option<Seconds>,
    pub alight_time: Option<Seconds>,
}

impl PassengerJourney {
    pub fn wait(&self) -> Option<Seconds> {
        self.board_time.map(|b| b - self.arrival)
    }
}

/// Strictly increasing period boundaries; period `p` covers `[b[p], b[p+1])`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Periods {
    boundaries: Vec<Seconds>,
}

impl Periods {
    pub fn new(boundaries: Vec<Seconds>) -> Result<Self, DomainError> {
        if boundaries.len() < 2 || boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DomainError::BadPeriods);
        }
        Ok(Self { boundaries })
    }

    pub fn count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn span(&self, period: usize) -> (Seconds, Seconds) {
        (self.boundaries[period], self.boundaries[period + 1])
    }

    pub fn boundaries(&self) -> &[Seconds] {
        &self.boundaries
    }

    /// Period containing `t`, clamped to the first/last period outside the covered range.
    pub fn clamped_index(&self, t: Seconds) -> usize {
        let n = self.count();
        match self.boundaries[1..].iter().position(|&end| t < end) {
            Some(p) => p,
            None => n - 1,
        }
    }
}

/// Origin-destination demand per stop and period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    pub periods: Periods,
    /// `rates[period][stop]`, passengers per hour.
    pub rates: Vec<Vec<f64>>,
    /// `destinations[period][origin]`: `(destination, probability)` pairs.
    pub destinations: Vec<Vec<Vec<(usize, f64)>>>,
}

impl DemandProfile {
    pub fn zero(periods: Periods, stops: usize) -> Self {
        let n = periods.count();
        Self {
            periods,
            rates: vec![vec![0.0; stops]; n],
            destinations: vec![vec![Vec::new(); stops]; n],
        }
    }

    pub fn rate(&self, stop: usize, t: Seconds) -> f64 {
        let p = self.periods.clamped_index(t);
        self.rates[p].get(stop).copied().unwrap_or(0.0)
    }

    /// Historical through-load rate at `stop`: riders per hour on board when
    /// the vehicle reaches `stop`, excluding those alighting there.
    pub fn through_load_rate(&self, stop: usize, t: Seconds) -> f64 {
        let p = self.periods.clamped_index(t);
        (0..stop)
            .map(|origin| {
                let beyond: f64 = self.destinations[p][origin]
                    .iter()
                    .filter(|(d, _)| *d > stop)
                    .map(|(_, share)| share)
                    .sum();
                self.rates[p][origin] * beyond
            })
            .sum()
    }

    /// Historical alighting rate at `stop`, passengers per hour.
    pub fn alighting_rate(&self, stop: usize, t: Seconds) -> f64 {
        let p = self.periods.clamped_index(t);
        (0..stop)
            .map(|origin| {
                let share: f64 = self.destinations[p][origin]
                    .iter()
                    .filter(|(d, _)| *d == stop)
                    .map(|(_, share)| share)
                    .sum();
                self.rates[p][origin] * share
            })
            .sum()
    }

    pub fn validate(&self, stops: usize) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.periods.count();
        if self.rates.len() != n || self.destinations.len() != n {
            out.push(Violation::DemandShape);
            return out;
        }
        for p in 0..n {
            if self.rates[p].len() != stops || self.destinations[p].len() != stops {
                out.push(Violation::DemandShape);
                continue;
            }
            for origin in 0..stops {
                let rate = self.rates[p][origin];
                if !(rate >= 0.0 && rate.is_finite()) {
                    out.push(Violation::NegativeRate { stop: origin, period: p });
                }
                let dist = &self.destinations[p][origin];
                if rate > 0.0 || !dist.is_empty() {
                    let total: f64 = dist.iter().map(|(_, s)| s).sum();
                    let bad_dest = dist.iter().any(|&(d, s)| d <= origin || d >= stops || s < 0.0);
                    if bad_dest || (total - 1.0).abs() > 1e-9 {
                        out.push(Violation::BadDestinations { stop: origin, period: p });
                    }
                }
            }
        }
        out
    }
}

/// Empirical link travel times; link `j` joins stop `j` to `j+1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkTimeDistribution {
    pub periods: Periods,
    /// `samples[period][link]`.
    pub samples: Vec<Vec<Vec<Seconds>>>,
}

impl LinkTimeDistribution {
    /// The same sample set for every period.
    pub fn uniform_over_periods(periods: Periods, per_link: Vec<Vec<Seconds>>) -> Self {
        let samples = vec![per_link; periods.count()];
        Self { periods, samples }
    }

    pub fn get(&self, link: usize, period: usize) -> Option<&[Seconds]> {
        self.samples
            .get(period)?
            .get(link)
            .map(Vec::as_slice)
            .filter(|s| !s.is_empty())
    }

    /// Median sample of a link for the period containing `t` (lower median).
    pub fn median(&self, link: usize, t: Seconds) -> Option<Seconds> {
        let samples = self.get(link, self.periods.clamped_index(t))?;
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        Some(sorted[(sorted.len() - 1) / 2])
    }

    pub fn validate(&self, stops: usize) -> Vec<Violation> {
        let mut out = Vec::new();
        for p in 0..self.periods.count() {
            for link in 0..stops.saturating_sub(1) {
                match self.get(link, p) {
                    None => out.push(Violation::MissingLinkTimes { link, period: p }),
                    Some(s) if s.iter().any(|&x| x <= 0) => {
                        out.push(Violation::NonPositiveLinkTime { link, period: p })
                    }
                    Some(_) => {}
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DomainError {
    #[error("period boundaries must be strictly increasing with at least two entries")]
    BadPeriods,
}

/// A single invariant violation, with its location.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Violation {
    TooFewStops { count: usize },
    StopIndexMismatch { position: usize, index: usize },
    ControlStopsNotIncreasing,
    ControlStopOutOfRange { stop: usize },
    DuplicateTrip { trip: String },
    ScheduleLength { trip: String, expected: usize, found: usize },
    NonMonotoneSchedule { trip: String, stop: usize },
    NegativeRecovery { trip: String },
    NegativeThreshold { name: String },
    ZeroHoldGrid,
    MaxHoldOffGrid,
    DemandShape,
    NegativeRate { stop: usize, period: usize },
    BadDestinations { stop: usize, period: usize },
    MissingLinkTimes { link: usize, period: usize },
    NonPositiveLinkTime { link: usize, period: usize },
    Scenario { message: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewStops { count } => write!(f, "route needs at least 2 stops, has {count}"),
            Violation::StopIndexMismatch { position, index } => {
                write!(f, "stop at position {position} has index {index}")
            }
            Violation::ControlStopsNotIncreasing => write!(f, "control stops not strictly increasing"),
            Violation::ControlStopOutOfRange { stop } => write!(f, "control stop {stop} out of range"),
            Violation::DuplicateTrip { trip } => write!(f, "duplicate trip id {trip}"),
            Violation::ScheduleLength { trip, expected, found } => {
                write!(f, "trip {trip} has {found} scheduled stops, expected {expected}")
            }
            Violation::NonMonotoneSchedule { trip, stop } => {
                write!(f, "non-monotone schedule, trip {trip}, stop {stop}")
            }
            Violation::NegativeRecovery { trip } => write!(f, "negative recovery time, trip {trip}"),
            Violation::NegativeThreshold { name } => write!(f, "threshold {name} is negative"),
            Violation::ZeroHoldGrid => write!(f, "hold grid must be positive"),
            Violation::MaxHoldOffGrid => write!(f, "max hold is not a multiple of the hold grid"),
            Violation::DemandShape => write!(f, "demand tables do not match periods x stops"),
            Violation::NegativeRate { stop, period } => {
                write!(f, "invalid arrival rate, stop {stop}, period {period}")
            }
            Violation::BadDestinations { stop, period } => {
                write!(f, "destination shares invalid, stop {stop}, period {period}")
            }
            Violation::MissingLinkTimes { link, period } => {
                write!(f, "no link times, link {link}, period {period}")
            }
            Violation::NonPositiveLinkTime { link, period } => {
                write!(f, "non-positive link time, link {link}, period {period}")
            }
            Violation::Scenario { message } => f.write_str(message),
        }
    }
}

/// Every violation found, sorted so the report does not depend on input order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn from_violations(violations: impl IntoIterator<Item = Violation>) -> Self {
        let set: BTreeSet<Violation> = violations.into_iter().collect();
        Self { violations: set.into_iter().collect() }
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn merge(self, other: ValidationReport) -> Self {
        Self::from_violations(self.violations.into_iter().chain(other.violations))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn validate_route_config(
    cfg: &RouteConfig,
    schedule: &[ScheduledTrip],
    thresholds: &PolicyThresholds,
) -> ValidationReport {
    let mut out = Vec::new();
    let m = cfg.stop_count();
    if m < 2 {
        out.push(Violation::TooFewStops { count: m });
    }
    for (position, stop) in cfg.stops.iter().enumerate() {
        if stop.index != position {
            out.push(Violation::StopIndexMismatch { position, index: stop.index });
        }
    }
    if cfg.control_stops.windows(2).any(|w| w[0] >= w[1]) {
        out.push(Violation::ControlStopsNotIncreasing);
    }
    for &stop in &cfg.control_stops {
        if stop >= m {
            out.push(Violation::ControlStopOutOfRange { stop });
        }
    }

    let mut seen = BTreeSet::new();
    for trip in schedule {
        if !seen.insert(trip.trip_id.as_str()) {
            out.push(Violation::DuplicateTrip { trip: trip.trip_id.clone() });
        }
        if trip.departures.len() != m {
            out.push(Violation::ScheduleLength {
                trip: trip.trip_id.clone(),
                expected: m,
                found: trip.departures.len(),
            });
        }
        for (j, w) in trip.departures.windows(2).enumerate() {
            if w[1] <= w[0] {
                out.push(Violation::NonMonotoneSchedule { trip: trip.trip_id.clone(), stop: j + 1 });
            }
        }
        if trip.recovery_time < 0 {
            out.push(Violation::NegativeRecovery { trip: trip.trip_id.clone() });
        }
    }

    out.extend(validate_thresholds(thresholds));
    ValidationReport::from_violations(out)
}

pub fn validate_thresholds(thr: &PolicyThresholds) -> Vec<Violation> {
    let mut out = Vec::new();
    for (name, value) in [
        ("s_e", thr.early_allowance),
        ("s_l", thr.late_allowance),
        ("L_min", thr.min_layover),
        ("max_hold", thr.max_hold),
        ("hold_grid", thr.hold_grid),
    ] {
        if value < 0 {
            out.push(Violation::NegativeThreshold { name: name.into() });
        }
    }
    if thr.hold_grid == 0 {
        out.push(Violation::ZeroHoldGrid);
    } else if thr.hold_grid > 0 && thr.max_hold % thr.hold_grid != 0 {
        out.push(Violation::MaxHoldOffGrid);
    }
    out
}

/// One trip's observation at a stop, listed in the order trips reach the stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopArrival {
    pub canceled: bool,
    pub arrival: Option<Seconds>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum HeadwayError {
    #[error("headway undefined: no preceding trip")]
    Undefined,
    #[error("trip has no recorded arrival")]
    MissingArrival,
    #[error("preceding trip has no recorded arrival")]
    PredecessorNotObserved,
    #[error("arrivals out of order")]
    OutOfOrder,
}

/// `H_ij`: time since the nearest preceding non-canceled trip arrived at the stop.
pub fn headway_at_arrival(arrivals: &[StopArrival], i: usize) -> Result<Seconds, HeadwayError> {
    let own = arrivals
        .get(i)
        .filter(|a| !a.canceled)
        .and_then(|a| a.arrival)
        .ok_or(HeadwayError::MissingArrival)?;
    let leader = arrivals[..i]
        .iter()
        .rev()
        .find(|a| !a.canceled)
        .ok_or(HeadwayError::Undefined)?;
    let prev = leader.arrival.ok_or(HeadwayError::PredecessorNotObserved)?;
    if own < prev {
        return Err(HeadwayError::OutOfOrder);
    }
    Ok(own - prev)
}
