use serde::{Deserialize, Serialize};

use crate::domain::{PassengerJourney, TripIdx, TripState, TripStatus};
use crate::time::Seconds;

/// One hold applied at a control stop. `departure = min_departure + executed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldRecord {
    pub trip: TripIdx,
    pub trip_id: String,
    pub stop: usize,
    pub decision_time: Seconds,
    pub min_departure: Seconds,
    pub instructed: Seconds,
    pub executed: Seconds,
    pub subject_to_compliance: bool,
}

/// Flat event row, the shared format of simulated and observed logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    /// `trip` or `passenger`.
    pub entity: String,
    pub event: String,
    pub time: Option<Seconds>,
    pub stop: Option<usize>,
    pub trip: String,
    pub value: Option<f64>,
}

/// Result of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationLog {
    pub route_id: String,
    pub stop_count: usize,
    pub trips: Vec<TripState>,
    /// `ST_ij` per trip.
    pub scheduled: Vec<Vec<Seconds>>,
    pub passengers: Vec<PassengerJourney>,
    pub holds: Vec<HoldRecord>,
    pub boardings: Vec<Vec<u32>>,
    pub alightings: Vec<Vec<u32>>,
    /// Riders on board when leaving each stop.
    pub loads: Vec<Vec<u32>>,
    pub capacity: Option<u32>,
    pub complete: bool,
}

impl ReplicationLog {
    /// Mean wait in seconds over riders who boarded.
    pub fn mean_wait(&self) -> Option<f64> {
        let waits: Vec<Seconds> = self.passengers.iter().filter_map(PassengerJourney::wait).collect();
        if waits.is_empty() {
            None
        } else {
            Some(waits.iter().sum::<Seconds>() as f64 / waits.len() as f64)
        }
    }

    /// Riders who never boarded.
    pub fn unserved(&self) -> usize {
        self.passengers.iter().filter(|p| p.board_time.is_none()).count()
    }

    /// Gaps between consecutive arrivals at `stop` (departures at the start terminal).
    pub fn headways_at(&self, stop: usize) -> Vec<Seconds> {
        let mut times: Vec<Seconds> = self
            .trips
            .iter()
            .filter(|t| t.status != TripStatus::Canceled)
            .filter_map(|t| if stop == 0 { t.departures[0] } else { t.arrivals[stop] })
            .collect();
        times.sort_unstable();
        times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn events(&self) -> Vec<EventRow> {
        let row = |entity: &str, event: &str, time, stop, trip: &str, value| EventRow {
            entity: entity.into(),
            event: event.into(),
            time,
            stop,
            trip: trip.into(),
            value,
        };
        let mut out = Vec::new();
        for (i, t) in self.trips.iter().enumerate() {
            let id = t.trip_id.as_str();
            if t.status == TripStatus::Canceled {
                out.push(row("trip", "cancel", None, None, id, None));
                continue;
            }
            for j in 0..self.stop_count {
                if let Some(a) = t.arrivals[j] {
                    out.push(row("trip", "arrive", Some(a), Some(j), id, None));
                }
                if let Some(d) = t.departures[j] {
                    out.push(row("trip", "depart", Some(d), Some(j), id, None));
                    out.push(row("trip", "board", Some(d), Some(j), id, Some(self.boardings[i][j] as f64)));
                    out.push(row("trip", "alight", Some(d), Some(j), id, Some(self.alightings[i][j] as f64)));
                    out.push(row("trip", "load", Some(d), Some(j), id, Some(self.loads[i][j] as f64)));
                }
            }
        }
        for h in &self.holds {
            let t = Some(h.decision_time);
            out.push(row("trip", "hold_instructed", t, Some(h.stop), &h.trip_id, Some(h.instructed as f64)));
            out.push(row("trip", "hold_executed", t, Some(h.stop), &h.trip_id, Some(h.executed as f64)));
        }
        for p in &self.passengers {
            let trip = p.trip.map(|i| self.trips[i].trip_id.as_str()).unwrap_or("");
            let id = Some(p.id as f64);
            out.push(row("passenger", "arrive", Some(p.arrival), Some(p.origin), "", id));
            if let Some(b) = p.board_time {
                out.push(row("passenger", "board", Some(b), Some(p.origin), trip, id));
            }
            if let Some(a) = p.alight_time {
                out.push(row("passenger", "alight", Some(a), Some(p.destination), trip, id));
            }
        }
        out
    }
}
