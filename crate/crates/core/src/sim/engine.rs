use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::log::{HoldRecord, ReplicationLog};
use super::stochastic::{dwell_time, generate_passengers, link_time_at_quantile};
use super::{HoldInstruction, SimError, SimScenario};
use crate::domain::{PassengerJourney, TripIdx, TripState, TripStatus, ValidationReport, Violation};
use crate::policy::ControlContext;
use crate::time::Seconds;

// Independent random substreams of a replication.
const STREAM_PASSENGERS: u64 = 1;
const STREAM_LINKS: u64 = 2;
const STREAM_COMPLIANCE: u64 = 3;
const STREAM_TERMINAL: u64 = 4;

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Depart,
    TerminalReady,
    Arrive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    time: Seconds,
    kind: EventKind,
    seq: u64,
    trip: TripIdx,
    stop: usize,
}

/// A holding decision the caller must resolve before the simulation continues.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub trip: TripIdx,
    pub trip_id: String,
    pub stop: usize,
    pub time: Seconds,
    /// `DT^min_ij` (at the terminal it also waits for the leader to clear the bay).
    pub min_departure: Seconds,
    /// Riders on board when the decision is taken.
    pub onboard: u32,
    pub context: ControlContext,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Decision(Decision),
    Finished,
}

#[derive(Debug, Clone)]
struct Pending {
    trip: TripIdx,
    stop: usize,
    time: Seconds,
    min_departure: Seconds,
    context: Option<ControlContext>,
}

/// Incremental simulation. Randomness is drawn up front per trip and link, so
/// a clone taken at a decision can be replayed with a different hold and see
/// the same link times, passengers and compliance draws.
#[derive(Debug, Clone)]
pub struct Simulation<'s> {
    sc: &'s SimScenario,
    m: usize,
    now: Seconds,
    seq: u64,
    queue: BinaryHeap<Reverse<Event>>,
    trips: Vec<TripState>,
    ready_at: Vec<Seconds>,
    link_u: Vec<Vec<f64>>,
    comply_u: Vec<Vec<f64>>,
    passengers: Vec<PassengerJourney>,
    waiting: Vec<VecDeque<usize>>,
    onboard: Vec<Vec<usize>>,
    boardings: Vec<Vec<u32>>,
    alightings: Vec<Vec<u32>>,
    loads: Vec<Vec<u32>>,
    planned_departure: Vec<Option<Seconds>>,
    last_departure: Vec<Option<(usize, Seconds)>>,
    /// Arrival times at each stop in arrival order; at the terminal, departure times.
    stop_times: Vec<Vec<Seconds>>,
    terminal_ready: Vec<bool>,
    holds: Vec<HoldRecord>,
    pending: Option<Pending>,
    horizon_hit: bool,
    median_links: Vec<Vec<Seconds>>,
}

impl<'s> Simulation<'s> {
    pub fn new(sc: &'s SimScenario) -> Result<Self, SimError> {
        let mut rng = substream(sc.seed, STREAM_PASSENGERS);
        let passengers = generate_passengers(&sc.demand, sc.horizon, &mut rng);
        Self::with_passengers(sc, passengers)
    }

    /// Uses the given riders instead of sampling them from the demand
    /// profile. They are re-sorted by arrival and renumbered.
    pub fn with_passengers(sc: &'s SimScenario, mut passengers: Vec<PassengerJourney>) -> Result<Self, SimError> {
        let report = sc.validate();
        if !report.is_empty() {
            return Err(SimError::InvalidScenario(report));
        }
        let m = sc.route.stop_count();
        let n = sc.schedule.len();
        passengers.sort_by_key(|p| (p.arrival, p.origin, p.destination));
        for (id, p) in passengers.iter_mut().enumerate() {
            p.id = id;
            p.trip = None;
            p.board_time = None;
            p.alight_time = None;
        }
        if let Some(bad) = passengers.iter().find(|p| p.origin >= p.destination || p.destination >= m) {
            let message = format!("passenger {} has origin {} and destination {}", bad.id, bad.origin, bad.destination);
            return Err(SimError::InvalidScenario(ValidationReport::from_violations([Violation::Scenario {
                message,
            }])));
        }
        let mut rng = substream(sc.seed, STREAM_LINKS);
        let link_u = (0..n).map(|_| (0..m).map(|_| rng.random()).collect()).collect();
        let mut rng = substream(sc.seed, STREAM_COMPLIANCE);
        let comply_u = (0..n).map(|_| (0..m).map(|_| rng.random()).collect()).collect();
        let mut rng = substream(sc.seed, STREAM_TERMINAL);
        let offsets = &sc.terminal_ready_offsets;
        let ready_at = sc
            .schedule
            .iter()
            .map(|t| t.start() + offsets[rng.random_range(0..offsets.len())])
            .collect();

        let mut waiting = vec![VecDeque::new(); m];
        for p in &passengers {
            waiting[p.origin].push_back(p.id);
        }
        let median_links = (0..sc.link_times.periods.count())
            .map(|p| {
                let (start, _) = sc.link_times.periods.span(p);
                (0..m - 1).map(|l| sc.link_times.median(l, start).unwrap_or(0)).collect()
            })
            .collect();

        let mut sim = Self {
            sc,
            m,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            trips: sc.schedule.iter().map(|t| TripState::new(t.trip_id.clone(), m)).collect(),
            ready_at,
            link_u,
            comply_u,
            passengers,
            waiting,
            onboard: vec![Vec::new(); n],
            boardings: vec![vec![0; m]; n],
            alightings: vec![vec![0; m]; n],
            loads: vec![vec![0; m]; n],
            planned_departure: vec![None; n],
            last_departure: vec![None; n],
            stop_times: vec![Vec::new(); m],
            terminal_ready: vec![false; n],
            holds: Vec::new(),
            pending: None,
            horizon_hit: false,
            median_links,
        };
        for i in 0..n {
            if sc.canceled_trips.contains(&sc.schedule[i].trip_id) {
                sim.trips[i].status = TripStatus::Canceled;
            } else {
                sim.push(sim.ready_at[i], EventKind::Arrive, i, 0);
            }
        }
        Ok(sim)
    }

    pub fn now(&self) -> Seconds {
        self.now
    }

    pub fn scenario(&self) -> &'s SimScenario {
        self.sc
    }

    pub fn trip_states(&self) -> &[TripState] {
        &self.trips
    }

    fn push(&mut self, time: Seconds, kind: EventKind, trip: TripIdx, stop: usize) {
        self.seq += 1;
        self.queue.push(Reverse(Event { time, kind, seq: self.seq, trip, stop }));
    }

    fn live(&self, i: TripIdx) -> bool {
        self.trips[i].status != TripStatus::Canceled
    }

    fn leader_at_terminal(&self, i: TripIdx) -> Option<TripIdx> {
        (0..i).rev().find(|&k| self.live(k))
    }

    fn follower_at_terminal(&self, i: TripIdx) -> Option<TripIdx> {
        (i + 1..self.trips.len()).find(|&k| self.live(k))
    }

    /// Runs events until a decision is needed or the replication ends.
    pub fn step(&mut self) -> Step {
        if let Some(p) = &self.pending {
            return Step::Decision(self.decision_for(p.clone()));
        }
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.time > self.sc.horizon {
                self.horizon_hit = true;
                self.queue.clear();
                break;
            }
            self.now = ev.time;
            match ev.kind {
                EventKind::Arrive if ev.stop == 0 => self.on_terminal_arrival(ev.trip),
                EventKind::Arrive => self.on_arrival(ev.trip, ev.stop),
                EventKind::TerminalReady => self.on_terminal_ready(ev.trip),
                EventKind::Depart => self.on_departure(ev.trip, ev.stop),
            }
            if let Some(p) = &self.pending {
                return Step::Decision(self.decision_for(p.clone()));
            }
        }
        Step::Finished
    }

    /// Applies the hold for the pending decision.
    pub fn resolve(&mut self, instruction: HoldInstruction) {
        let p = self.pending.take().expect("resolve called without a pending decision");
        let instructed = instruction.hold.max(0);
        let executed = if instruction.subject_to_compliance {
            self.sc.compliance.executed(instructed, self.comply_u[p.trip][p.stop])
        } else {
            instructed
        };
        let departure = p.min_departure + executed;
        if p.context.is_some() {
            self.holds.push(HoldRecord {
                trip: p.trip,
                trip_id: self.trips[p.trip].trip_id.clone(),
                stop: p.stop,
                decision_time: p.time,
                min_departure: p.min_departure,
                instructed,
                executed,
                subject_to_compliance: instruction.subject_to_compliance,
            });
        }
        self.planned_departure[p.trip] = Some(departure);
        self.push(departure, EventKind::Depart, p.trip, p.stop);
    }

    /// Resolves non-control stops and queues control decisions.
    fn set_pending(&mut self, trip: TripIdx, stop: usize, min_departure: Seconds, context: Option<ControlContext>) {
        let control = context.is_some();
        self.pending = Some(Pending { trip, stop, time: self.now, min_departure, context });
        if !control {
            let hold = if stop == 0 {
                (self.sc.schedule[trip].departures[0] - min_departure).max(0)
            } else {
                0
            };
            self.resolve(HoldInstruction::exempt(hold));
        }
    }

    fn on_terminal_arrival(&mut self, i: TripIdx) {
        let t = self.now;
        let trip = &mut self.trips[i];
        trip.status = TripStatus::Active;
        trip.arrivals[0] = Some(t);
        trip.current_stop = Some(0);
        let leader_gone = match self.leader_at_terminal(i) {
            None => true,
            Some(k) => self.trips[k].departures[0].is_some(),
        };
        if leader_gone {
            self.terminal_ready[i] = true;
            self.push(t, EventKind::TerminalReady, i, 0);
        }
    }

    /// Trip `i` is at the terminal and its leader has left the bay.
    fn on_terminal_ready(&mut self, i: TripIdx) {
        let thr = self.sc.thresholds;
        let st = self.sc.schedule[i].departures[0];
        let at = self.trips[i].arrivals[0].unwrap_or(self.now);
        let leader_dep = self.stop_times[0].last().copied();
        // The bay frees when the leader departs; the layover still counts from arrival.
        let effective_arrival = match leader_dep {
            Some(d) => at.max(d - thr.min_layover),
            None => at,
        };
        let min_departure = (st - thr.early_allowance).max(effective_arrival + thr.min_layover);

        let headway = leader_dep.map(|d| (min_departure - d).max(0));
        let leader_headway = match self.stop_times[0].as_slice() {
            [.., a, b] => Some(b - a),
            _ => None,
        };
        let forecast = self.follower_at_terminal(i).map(|f| {
            let dep = self.sc.schedule[f].departures[0].max(self.ready_at[f] + thr.min_layover);
            (dep - min_departure).max(0)
        });
        let ctx = self
            .sc
            .route
            .is_control_stop(0)
            .then(|| self.context(i, 0, effective_arrival, 0, headway, forecast, leader_headway));
        self.set_pending(i, 0, min_departure, ctx);
    }

    fn on_arrival(&mut self, i: TripIdx, j: usize) {
        let t = self.now;
        self.trips[i].arrivals[j] = Some(t);
        self.trips[i].current_stop = Some(j);
        self.trips[i].schedule_deviation = Some(t - self.sc.schedule[i].departures[j]);

        let mut alighted = 0;
        let mut staying = Vec::with_capacity(self.onboard[i].len());
        for &pid in &self.onboard[i] {
            if self.passengers[pid].destination == j {
                self.passengers[pid].alight_time = Some(t);
                alighted += 1;
            } else {
                staying.push(pid);
            }
        }
        self.onboard[i] = staying;
        self.alightings[i][j] = alighted;
        let boarded = if j + 1 < self.m { self.board(i, j, t, Some(t)) } else { 0 };
        let dwell = dwell_time(boarded, alighted, &self.sc.dwell);
        let min_departure = t + dwell;

        let arrivals = &self.stop_times[j];
        let headway = arrivals.last().map(|&a| t - a);
        let leader_headway = match arrivals.as_slice() {
            [.., a, b] => Some(b - a),
            _ => None,
        };
        self.stop_times[j].push(t);

        if j + 1 == self.m {
            self.trips[i].departures[j] = Some(min_departure);
            self.loads[i][j] = 0;
            return;
        }
        let ctx = if self.sc.route.is_control_stop(j) {
            let forecast = self.forecast_arrival(i, j).map(|a| (a - t).max(0));
            Some(self.context(i, j, t, dwell, headway, forecast, leader_headway))
        } else {
            None
        };
        self.set_pending(i, j, min_departure, ctx);
    }

    fn on_departure(&mut self, i: TripIdx, j: usize) {
        let t = self.now;
        if j == 0 {
            self.board(i, 0, t, Some(t));
            self.stop_times[0].push(t);
        } else {
            let at = self.trips[i].arrivals[j].unwrap_or(t);
            self.board(i, j, t, Some(at));
        }
        self.trips[i].departures[j] = Some(t);
        self.loads[i][j] = self.onboard[i].len() as u32;
        self.last_departure[i] = Some((j, t));
        self.planned_departure[i] = None;
        let period = self.sc.link_times.periods.clamped_index(t);
        let link_time = link_time_at_quantile(&self.sc.link_times, j, period, self.link_u[i][j])
            .expect("validated scenario has every link/period");
        self.push(t + link_time, EventKind::Arrive, i, j + 1);

        if j == 0 {
            if let Some(f) = self.follower_at_terminal(i) {
                if self.trips[f].arrivals[0].is_some() && !self.terminal_ready[f] {
                    self.terminal_ready[f] = true;
                    self.push(t, EventKind::TerminalReady, f, 0);
                }
            }
        }
    }

    /// Boards riders at `stop` who arrived by `t`, first come first served.
    /// Each boards at `max(arrival, not_before)`.
    fn board(&mut self, i: TripIdx, stop: usize, t: Seconds, not_before: Option<Seconds>) -> u32 {
        let mut count = 0;
        while let Some(&pid) = self.waiting[stop].front() {
            let p = &self.passengers[pid];
            if p.arrival > t {
                break;
            }
            if let Some(cap) = self.sc.capacity {
                if self.onboard[i].len() as u32 >= cap {
                    break;
                }
            }
            self.waiting[stop].pop_front();
            let p = &mut self.passengers[pid];
            p.trip = Some(i);
            p.board_time = Some(not_before.map_or(p.arrival, |nb| p.arrival.max(nb)));
            self.onboard[i].push(pid);
            count += 1;
        }
        self.boardings[i][stop] += count;
        count
    }

    #[allow(clippy::too_many_arguments)]
    fn context(
        &self,
        i: TripIdx,
        j: usize,
        arrival: Seconds,
        dwell: Seconds,
        headway: Option<Seconds>,
        forecast_headway: Option<Seconds>,
        leader_headway: Option<Seconds>,
    ) -> ControlContext {
        let t = self.now;
        let per_headway = |rate: f64| headway.map(|h| rate * h as f64 / 3600.0);
        ControlContext {
            trip: i,
            stop: j,
            stop_count: self.m,
            arrival,
            scheduled: self.sc.schedule[i].departures[j],
            dwell,
            headway,
            forecast_headway,
            leader_headway,
            est_load: per_headway(self.sc.demand.through_load_rate(j, t)),
            est_boardings: per_headway(self.sc.demand.rate(j, t)),
            thresholds: self.sc.thresholds,
        }
    }

    fn decision_for(&self, p: Pending) -> Decision {
        Decision {
            trip: p.trip,
            trip_id: self.trips[p.trip].trip_id.clone(),
            stop: p.stop,
            time: p.time,
            min_departure: p.min_departure,
            onboard: self.onboard[p.trip].len() as u32,
            context: p.context.expect("only control stops surface decisions"),
        }
    }

    fn median_travel(&self, from_stop: usize, to_stop: usize, depart: Seconds) -> Seconds {
        let period = self.sc.link_times.periods.clamped_index(depart);
        self.median_links[period][from_stop..to_stop].iter().sum()
    }

    /// Predicted arrival at stop `j` of the next trip to reach it after `i`,
    /// from median link times and ignoring intermediate dwell.
    fn forecast_arrival(&self, i: TripIdx, j: usize) -> Option<Seconds> {
        let thr = &self.sc.thresholds;
        (0..self.trips.len())
            .filter(|&k| k != i && self.live(k) && self.trips[k].arrivals[j].is_none())
            .filter_map(|k| {
                let (from, depart) = match (self.last_departure[k], self.trips[k].current_stop) {
                    (_, Some(at)) if self.trips[k].departures[at].is_none() => {
                        let planned = self.planned_departure[k]
                            .or_else(|| {
                                self.pending.as_ref().filter(|p| p.trip == k).map(|p| p.min_departure)
                            })
                            .unwrap_or(self.now);
                        (at, planned)
                    }
                    (Some((from, d)), _) => (from, d),
                    (None, _) => {
                        let planned = self.sc.schedule[k].departures[0].max(self.ready_at[k] + thr.min_layover);
                        (0, planned)
                    }
                };
                if from >= j {
                    return None;
                }
                Some((depart + self.median_travel(from, j, depart)).max(self.now))
            })
            .min()
    }

    /// Closes the replication. Fails if the horizon cut it short.
    pub fn finish(self) -> Result<ReplicationLog, SimError> {
        assert!(self.pending.is_none(), "finish called with a pending decision");
        let complete = !self.horizon_hit
            && self
                .trips
                .iter()
                .all(|t| t.status == TripStatus::Canceled || t.departures[self.m - 1].is_some());
        let log = ReplicationLog {
            route_id: self.sc.route.route_id.clone(),
            stop_count: self.m,
            scheduled: self.sc.schedule.iter().map(|t| t.departures.clone()).collect(),
            trips: self.trips,
            passengers: self.passengers,
            holds: self.holds,
            boardings: self.boardings,
            alightings: self.alightings,
            loads: self.loads,
            capacity: self.sc.capacity,
            complete,
        };
        if complete {
            Ok(log)
        } else {
            Err(SimError::HorizonExhausted { partial: Box::new(log) })
        }
    }
}
