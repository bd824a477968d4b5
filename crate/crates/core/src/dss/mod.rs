//! Decision support: live trip tables per control stop built from arrival
//! predictions, guarded hold recommendations, and supervisor actions
//! (confirm, cancel, restore) that trigger recomputation.

mod feed;
mod log;

pub use feed::{
    export_prediction_feed, read_feed, replay_feed, replay_records, write_feed, FeedFile, NoPacer, Pacer,
    PredictionRecord, RecordingPacer, ReplaySummary, replay_transcript, SleepPacer, FEED_COLUMNS,
};
pub use log::{
    read_interventions, write_interventions, InterventionEntry, InterventionKind, InterventionLog,
    INTERVENTION_COLUMNS,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::{DemandProfile, PolicyThresholds, RouteConfig, ScheduledTrip};
use crate::policy::{
    min_departure_time, recommend, ControlContext, GuardNote, HoldRecommendation, QNetwork, RecommendationSource,
};
use crate::sim::{dwell_time, DwellParams, SimScenario};
use crate::time::{format_clock, Seconds};

/// `rate · headway / 3600`.
pub fn expected_boardings(headway: Seconds, rate_per_hour: f64) -> f64 {
    rate_per_hour * headway.max(0) as f64 / 3600.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Predictions older than this (relative to the newest feed time) are stale.
    pub staleness_bound: Seconds,
    /// Half-width of the nearest-departure match; half the scheduled headway when unset.
    pub match_window: Option<Seconds>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { staleness_bound: 300, match_window: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown trip `{0}`")]
    UnknownTrip(String),
    #[error("stop {0} is not a control stop")]
    NotControlStop(usize),
    #[error("trip `{0}` is canceled")]
    Canceled(String),
    #[error("trip `{trip}` already confirmed at stop {stop}")]
    AlreadyConfirmed { trip: String, stop: usize },
    #[error("trip `{trip}` has no row at stop {stop}")]
    NoRow { trip: String, stop: usize },
    #[error("trip `{0}` has a stale prediction")]
    Stale(String),
    #[error("trip `{trip}` cannot be {action}: it is {state}")]
    WrongState { trip: String, action: &'static str, state: &'static str },
}

impl ServiceError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownTrip(_) => "unknown_trip",
            ServiceError::NotControlStop(_) => "not_control_stop",
            ServiceError::Canceled(_) => "trip_canceled",
            ServiceError::AlreadyConfirmed { .. } => "already_confirmed",
            ServiceError::NoRow { .. } => "no_row",
            ServiceError::Stale(_) => "stale_feed",
            ServiceError::WrongState { .. } => "wrong_state",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Active,
    Confirmed,
    Canceled,
    /// Prediction without a matching scheduled trip.
    Unmatched,
}

/// One line of the control-stop table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripRow {
    pub trip_id: String,
    pub stop: usize,
    pub predicted_arrival: Seconds,
    /// Seconds from the service clock to the predicted arrival.
    pub eta: Seconds,
    pub scheduled_arrival: Option<Seconds>,
    /// Predicted minus scheduled; positive when late.
    pub schedule_deviation: Option<Seconds>,
    /// Gap to the leading trip at this stop.
    pub predicted_headway: Option<Seconds>,
    pub scheduled_headway: Option<Seconds>,
    pub recovery_time: Option<Seconds>,
    pub recommendation: Option<HoldRecommendation>,
    pub status: RowStatus,
    pub stale: bool,
    pub confirmed_hold: Option<Seconds>,
    pub driver_id: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub accepted: usize,
    pub unmatched: usize,
    pub rejected: usize,
}

impl std::ops::AddAssign for IngestSummary {
    fn add_assign(&mut self, o: Self) {
        self.accepted += o.accepted;
        self.unmatched += o.unmatched;
        self.rejected += o.rejected;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Distinct `(external id, stop)` pairs without a scheduled trip.
    pub unmatched: usize,
    /// Distinct records that broke the feed invariants.
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Vehicle {
    Trip(usize),
    Unmatched(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Prediction {
    predicted_arrival: Seconds,
    timestamp: Seconds,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Confirmation {
    hold: Seconds,
}

/// State of one route. All mutations go through `&mut self`, so callers that
/// share it serialise them.
#[derive(Debug, Clone)]
pub struct Service {
    route: RouteConfig,
    schedule: Vec<ScheduledTrip>,
    demand: DemandProfile,
    dwell: DwellParams,
    thresholds: PolicyThresholds,
    net: Option<QNetwork>,
    config: ServiceConfig,
    scheduled_headway: Seconds,
    clock: Seconds,
    canceled: Vec<bool>,
    by_id: BTreeMap<String, usize>,
    predictions: BTreeMap<(usize, Vehicle), Prediction>,
    /// Trip each external id was bound to, and the id holding each trip.
    bindings: BTreeMap<String, usize>,
    claims: BTreeMap<usize, String>,
    unmatched: BTreeSet<(String, usize)>,
    rejected: BTreeSet<PredictionRecord>,
    confirmed: BTreeMap<(usize, usize), Confirmation>,
    log: InterventionLog,
}

impl Service {
    pub fn new(scenario: &SimScenario, net: Option<QNetwork>, config: ServiceConfig) -> Self {
        let schedule = scenario.schedule.clone();
        let by_id = schedule.iter().enumerate().map(|(i, t)| (t.trip_id.clone(), i)).collect();
        let canceled = schedule.iter().map(|t| scenario.canceled_trips.contains(&t.trip_id)).collect();
        Self {
            route: scenario.route.clone(),
            demand: scenario.demand.clone(),
            dwell: scenario.dwell,
            thresholds: scenario.thresholds,
            scheduled_headway: scenario.scheduled_headway(),
            net,
            config,
            clock: 0,
            canceled,
            by_id,
            schedule,
            predictions: BTreeMap::new(),
            bindings: BTreeMap::new(),
            claims: BTreeMap::new(),
            unmatched: BTreeSet::new(),
            rejected: BTreeSet::new(),
            confirmed: BTreeMap::new(),
            log: InterventionLog::default(),
        }
    }

    pub fn route(&self) -> &RouteConfig {
        &self.route
    }

    /// Newest feed time seen.
    pub fn clock(&self) -> Seconds {
        self.clock
    }

    pub fn has_model(&self) -> bool {
        self.net.is_some()
    }

    pub fn log(&self) -> &InterventionLog {
        &self.log
    }

    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics { unmatched: self.unmatched.len(), rejected: self.rejected.len() }
    }

    fn match_window(&self) -> Seconds {
        self.config.match_window.unwrap_or(self.scheduled_headway / 2)
    }

    fn trip_index(&self, trip_id: &str) -> Result<usize, ServiceError> {
        self.by_id
            .get(trip_id)
            .or_else(|| self.bindings.get(trip_id))
            .copied()
            .ok_or_else(|| ServiceError::UnknownTrip(trip_id.to_string()))
    }

    /// Links a prediction to a scheduled trip: exact id first, then an earlier
    /// binding of the same id, then the nearest unclaimed scheduled arrival
    /// inside the window.
    fn match_record(&mut self, r: &PredictionRecord) -> Option<usize> {
        if let Some(&i) = self.by_id.get(&r.trip_id) {
            self.claims.insert(i, r.trip_id.clone());
            return Some(i);
        }
        if let Some(&i) = self.bindings.get(&r.trip_id) {
            return Some(i);
        }
        let window = self.match_window();
        let (i, gap) = self
            .schedule
            .iter()
            .enumerate()
            .map(|(i, t)| (i, (r.predicted_arrival - t.departures[r.stop]).abs()))
            .min_by_key(|&(i, gap)| (gap, i))?;
        if gap > window {
            return None;
        }
        match self.claims.get(&i) {
            Some(holder) if *holder != r.trip_id => None,
            _ => {
                if !r.trip_id.is_empty() {
                    self.claims.insert(i, r.trip_id.clone());
                    self.bindings.insert(r.trip_id.clone(), i);
                }
                Some(i)
            }
        }
    }

    /// Applies a batch of predictions. Re-sending a batch leaves the state unchanged.
    pub fn ingest(&mut self, batch: &[PredictionRecord]) -> IngestSummary {
        let mut summary = IngestSummary::default();
        let m = self.route.stop_count();
        for r in batch {
            if r.stop >= m || r.predicted_arrival < r.timestamp - self.config.staleness_bound {
                self.rejected.insert(r.clone());
                summary.rejected += 1;
                continue;
            }
            self.clock = self.clock.max(r.timestamp);
            let vehicle = match self.match_record(r) {
                Some(i) => Vehicle::Trip(i),
                None => {
                    self.unmatched.insert((r.trip_id.clone(), r.stop));
                    summary.unmatched += 1;
                    Vehicle::Unmatched(r.trip_id.clone())
                }
            };
            let slot = self.predictions.entry((r.stop, vehicle)).or_insert(Prediction {
                predicted_arrival: r.predicted_arrival,
                timestamp: r.timestamp,
            });
            if r.timestamp >= slot.timestamp {
                *slot = Prediction { predicted_arrival: r.predicted_arrival, timestamp: r.timestamp };
            }
            summary.accepted += 1;
        }
        summary
    }

    fn check_control_stop(&self, stop: usize) -> Result<(), ServiceError> {
        if self.route.is_control_stop(stop) {
            Ok(())
        } else {
            Err(ServiceError::NotControlStop(stop))
        }
    }

    /// Rows for trips not yet departed from `stop`, ordered by predicted arrival.
    pub fn upcoming_trips(&self, stop: usize) -> Result<Vec<TripRow>, ServiceError> {
        self.check_control_stop(stop)?;
        Ok(self.table(stop).into_iter().filter(|r| self.clock <= departure_of(r)).collect())
    }

    /// Every predicted trip at `stop`, departed or not.
    fn table(&self, stop: usize) -> Vec<TripRow> {
        let entries: Vec<(&Vehicle, &Prediction)> =
            self.predictions.range((stop, Vehicle::Trip(0))..).take_while(|((j, _), _)| *j == stop).map(|((_, v), p)| (v, p)).collect();

        let mut moving: Vec<(&Vehicle, &Prediction)> =
            entries.iter().copied().filter(|(v, _)| !matches!(v, Vehicle::Trip(i) if self.canceled[*i])).collect();
        moving.sort_by(|a, b| (a.1.predicted_arrival, a.0).cmp(&(b.1.predicted_arrival, b.0)));
        let reference = |k: usize| -> Seconds {
            let (v, p) = moving[k];
            let hold = match v {
                Vehicle::Trip(i) => self.confirmed.get(&(*i, stop)).map_or(0, |c| c.hold),
                Vehicle::Unmatched(_) => 0,
            };
            p.predicted_arrival + hold
        };
        let gap_to_leader = |k: usize| (k > 0).then(|| moving[k].1.predicted_arrival - reference(k - 1));
        let position = |v: &Vehicle| moving.iter().position(|(w, _)| *w == v);

        let mut rows: Vec<TripRow> = entries
            .iter()
            .map(|&(v, p)| {
                let k = position(v);
                let headway = k.and_then(gap_to_leader);
                let forecast = k.and_then(|k| moving.get(k + 1).map(|(_, f)| f.predicted_arrival - p.predicted_arrival));
                let leader_headway = k.and_then(|k| k.checked_sub(1)).and_then(gap_to_leader);
                let stale = self.clock - p.timestamp > self.config.staleness_bound;
                match v {
                    Vehicle::Unmatched(id) => TripRow {
                        trip_id: id.clone(),
                        stop,
                        predicted_arrival: p.predicted_arrival,
                        eta: p.predicted_arrival - self.clock,
                        scheduled_arrival: None,
                        schedule_deviation: None,
                        predicted_headway: headway,
                        scheduled_headway: None,
                        recovery_time: None,
                        recommendation: None,
                        status: RowStatus::Unmatched,
                        stale,
                        confirmed_hold: None,
                        driver_id: None,
                    },
                    Vehicle::Trip(i) => {
                        let i = *i;
                        let trip = &self.schedule[i];
                        let st = trip.departures[stop];
                        let confirmed = self.confirmed.get(&(i, stop)).map(|c| c.hold);
                        let status = if self.canceled[i] {
                            RowStatus::Canceled
                        } else if confirmed.is_some() {
                            RowStatus::Confirmed
                        } else {
                            RowStatus::Active
                        };
                        let recommendation = (status != RowStatus::Canceled).then(|| {
                            let ctx = self.context(i, stop, p.predicted_arrival, headway, forecast, leader_headway);
                            if stale {
                                stale_recommendation(&ctx)
                            } else {
                                recommend(&ctx, self.net.as_ref())
                            }
                        });
                        TripRow {
                            trip_id: trip.trip_id.clone(),
                            stop,
                            predicted_arrival: p.predicted_arrival,
                            eta: p.predicted_arrival - self.clock,
                            scheduled_arrival: Some(st),
                            schedule_deviation: Some(p.predicted_arrival - st),
                            predicted_headway: headway,
                            scheduled_headway: self.scheduled_headway_of(i, stop),
                            recovery_time: Some(trip.recovery_time),
                            recommendation,
                            status,
                            stale,
                            confirmed_hold: confirmed,
                            driver_id: trip.driver_id.clone(),
                        }
                    }
                }
            })
            .collect();
        rows.sort_by(|a, b| (a.predicted_arrival, &a.trip_id).cmp(&(b.predicted_arrival, &b.trip_id)));
        rows
    }

    fn scheduled_headway_of(&self, i: usize, stop: usize) -> Option<Seconds> {
        let st = self.schedule[i].departures[stop];
        self.schedule
            .iter()
            .enumerate()
            .filter(|&(k, t)| k != i && !self.canceled[k] && t.departures[stop] <= st)
            .map(|(_, t)| st - t.departures[stop])
            .min()
    }

    fn context(
        &self,
        i: usize,
        stop: usize,
        arrival: Seconds,
        headway: Option<Seconds>,
        forecast_headway: Option<Seconds>,
        leader_headway: Option<Seconds>,
    ) -> ControlContext {
        let per_headway = |rate: f64| headway.map(|h| expected_boardings(h, rate));
        let boardings = per_headway(self.demand.rate(stop, arrival));
        let alightings = per_headway(self.demand.alighting_rate(stop, arrival));
        let dwell = if stop == 0 {
            0
        } else {
            let count = |x: Option<f64>| x.unwrap_or(0.0).round().max(0.0) as u32;
            dwell_time(count(boardings), count(alightings), &self.dwell)
        };
        ControlContext {
            trip: i,
            stop,
            stop_count: self.route.stop_count(),
            arrival,
            scheduled: self.schedule[i].departures[stop],
            dwell,
            headway,
            forecast_headway,
            leader_headway,
            est_load: per_headway(self.demand.through_load_rate(stop, arrival)),
            est_boardings: boardings,
            thresholds: self.thresholds,
        }
    }

    /// Logs the displayed hold for `trip_id` at `stop` and locks it in.
    pub fn confirm_hold(&mut self, trip_id: &str, stop: usize, actor: &str) -> Result<InterventionEntry, ServiceError> {
        self.check_control_stop(stop)?;
        let i = self.trip_index(trip_id)?;
        let id = self.schedule[i].trip_id.clone();
        if self.canceled[i] {
            return Err(ServiceError::Canceled(id));
        }
        if self.confirmed.contains_key(&(i, stop)) {
            return Err(ServiceError::AlreadyConfirmed { trip: id, stop });
        }
        let row = self
            .upcoming_trips(stop)?
            .into_iter()
            .find(|r| r.trip_id == id)
            .ok_or_else(|| ServiceError::NoRow { trip: id.clone(), stop })?;
        if row.stale {
            return Err(ServiceError::Stale(id));
        }
        let rec = row.recommendation.expect("active rows carry a recommendation");
        self.confirmed.insert((i, stop), Confirmation { hold: rec.final_hold });
        Ok(self.append(InterventionKind::HoldConfirm, i, Some(stop), Some(&rec), actor, None))
    }

    pub fn cancel_trip(&mut self, trip_id: &str, actor: &str) -> Result<InterventionEntry, ServiceError> {
        let i = self.trip_index(trip_id)?;
        if self.canceled[i] {
            return Err(self.wrong_state(i, "canceled", "canceled"));
        }
        self.canceled[i] = true;
        Ok(self.append(InterventionKind::Cancel, i, None, None, actor, None))
    }

    pub fn restore_trip(&mut self, trip_id: &str, actor: &str) -> Result<InterventionEntry, ServiceError> {
        let i = self.trip_index(trip_id)?;
        if !self.canceled[i] {
            return Err(self.wrong_state(i, "restored", "active"));
        }
        self.canceled[i] = false;
        Ok(self.append(InterventionKind::Restore, i, None, None, actor, None))
    }

    /// Records a manual short-turn. Informational only.
    pub fn note_short_turn(
        &mut self,
        trip_id: &str,
        stop: Option<usize>,
        actor: &str,
        note: &str,
    ) -> Result<InterventionEntry, ServiceError> {
        let i = self.trip_index(trip_id)?;
        Ok(self.append(InterventionKind::ShortTurnNote, i, stop, None, actor, Some(note.to_string())))
    }

    fn wrong_state(&self, i: usize, action: &'static str, state: &'static str) -> ServiceError {
        ServiceError::WrongState { trip: self.schedule[i].trip_id.clone(), action, state }
    }

    fn append(
        &mut self,
        kind: InterventionKind,
        i: usize,
        stop: Option<usize>,
        rec: Option<&HoldRecommendation>,
        actor: &str,
        note: Option<String>,
    ) -> InterventionEntry {
        let trip = &self.schedule[i];
        self.log.append(InterventionEntry {
            entry_id: 0,
            kind,
            trip_id: trip.trip_id.clone(),
            stop,
            instructed_hold: rec.map(|r| r.final_hold),
            instructed_departure: rec.map(|r| r.instructed_departure),
            scheduled_departure: stop.map(|j| trip.departures[j]),
            driver_id: trip.driver_id.clone(),
            actor: actor.to_string(),
            timestamp: self.clock,
            note,
        })
    }
}

fn departure_of(row: &TripRow) -> Seconds {
    match &row.recommendation {
        Some(r) => r.instructed_departure.max(row.predicted_arrival),
        None => row.predicted_arrival,
    }
}

fn stale_recommendation(ctx: &ControlContext) -> HoldRecommendation {
    HoldRecommendation {
        rl_hold: None,
        even_headway_hold: None,
        final_hold: 0,
        source: RecommendationSource::GuardZero,
        notes: vec![GuardNote::StaleFeed],
        instructed_departure: min_departure_time(ctx),
    }
}

/// Fixed-width text rendering of a table, stable across runs.
pub fn render_table(clock: Seconds, stop: usize, rows: &[TripRow]) -> String {
    let opt = |v: Option<Seconds>| v.map_or("-".to_string(), |v| v.to_string());
    let mut out = String::new();
    let _ = writeln!(out, "# {} stop {} rows {}", format_clock(clock), stop, rows.len());
    for r in rows {
        let (final_hold, source, instructed) = match &r.recommendation {
            Some(rec) => (
                rec.final_hold.to_string(),
                serde_json::to_value(rec.source).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                format_clock(rec.instructed_departure),
            ),
            None => ("-".into(), "-".into(), "-".into()),
        };
        let status = serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let _ = writeln!(
            out,
            "{} eta={} dev={} h={} sh={} hold={} src={} dep={} status={}{}",
            r.trip_id,
            r.eta,
            opt(r.schedule_deviation),
            opt(r.predicted_headway),
            opt(r.scheduled_headway),
            final_hold,
            source,
            instructed,
            status,
            if r.stale { " stale" } else { "" },
        );
    }
    out
}
