//! Built-in synthetic scenarios.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::domain::{
    DemandProfile, LinkTimeDistribution, Periods, PolicyThresholds, RouteConfig, ScheduledTrip, StopSpec,
};
use crate::sim::{ComplianceModel, DwellParams, SimScenario};
use crate::time::Seconds;

/// Knobs of the bunching-prone toy route.
#[derive(Debug, Clone, PartialEq)]
pub struct BunchingParams {
    pub stops: usize,
    pub trips: usize,
    pub first_departure: Seconds,
    pub headway: Seconds,
    /// Median travel time of each link.
    pub link_median: Seconds,
    /// Log-scale spread of link times.
    pub link_sigma: f64,
    pub link_samples: usize,
    /// Boardings per hour at each non-final stop.
    pub stop_rate: f64,
    pub control_stops: Vec<usize>,
    pub terminal_ready_offsets: Vec<Seconds>,
    pub seed: u64,
}

impl Default for BunchingParams {
    fn default() -> Self {
        Self {
            stops: 8,
            trips: 12,
            first_departure: 7 * 3600,
            headway: 480,
            link_median: 150,
            link_sigma: 0.25,
            link_samples: 60,
            stop_rate: 120.0,
            control_stops: vec![0, 1, 2, 3, 4, 5],
            terminal_ready_offsets: vec![-120, 0, 120, 240],
            seed: 1,
        }
    }
}

/// An 8-stop, 12-trip route whose stochastic link times, uneven terminal
/// readiness and heavy boarding make trips bunch when nobody holds.
pub fn bunching() -> SimScenario {
    bunching_with(&BunchingParams::default())
}

pub fn bunching_with(p: &BunchingParams) -> SimScenario {
    let m = p.stops;
    let route = RouteConfig {
        route_id: "TOY".into(),
        direction: "outbound".into(),
        stops: (0..m)
            .map(|i| StopSpec { stop_id: format!("S{i:02}"), index: i, name: format!("Stop {i}") })
            .collect(),
        control_stops: p.control_stops.clone(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let dist = LogNormal::new((p.link_median as f64).ln(), p.link_sigma).expect("valid log-normal");
    let links: Vec<Vec<Seconds>> = (0..m - 1)
        .map(|_| (0..p.link_samples).map(|_| (dist.sample(&mut rng).round() as Seconds).max(10)).collect())
        .collect();

    // Planned stop times allow the median link plus an average dwell.
    let planned_dwell = 8 + (3.0 * p.stop_rate * p.headway as f64 / 3600.0).round() as Seconds;
    let schedule = (0..p.trips)
        .map(|i| {
            let start = p.first_departure + i as Seconds * p.headway;
            ScheduledTrip {
                trip_id: format!("T{:03}", i + 1),
                block_id: format!("B{}", i % 4 + 1),
                departures: (0..m).map(|j| start + j as Seconds * (p.link_median + planned_dwell)).collect(),
                recovery_time: 600,
                driver_id: Some(format!("D{:02}", i % 6 + 1)),
            }
        })
        .collect::<Vec<_>>();

    // Riders arrive while service runs, so each has a trip to catch.
    let demand_start = p.first_departure;
    let demand_end = p.first_departure + (p.trips as Seconds - 1) * p.headway;
    let periods = Periods::new(vec![demand_start, demand_end]).expect("increasing");
    let mut demand = DemandProfile::zero(periods, m);
    for origin in 0..m - 1 {
        demand.rates[0][origin] = p.stop_rate;
        let share = 1.0 / (m - 1 - origin) as f64;
        demand.destinations[0][origin] = (origin + 1..m).map(|d| (d, share)).collect();
    }

    let last_start = p.first_departure + (p.trips as Seconds - 1) * p.headway;
    SimScenario {
        route,
        schedule,
        canceled_trips: BTreeSet::new(),
        demand,
        link_times: LinkTimeDistribution::uniform_over_periods(
            Periods::new(vec![0, 48 * 3600]).expect("increasing"),
            links,
        ),
        thresholds: PolicyThresholds::default(),
        dwell: DwellParams::default(),
        compliance: ComplianceModel::FULL,
        capacity: None,
        terminal_ready_offsets: p.terminal_ready_offsets.clone(),
        horizon: last_start + 3 * 3600,
        seed: p.seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_bunching_is_valid_and_shaped() {
        let sc = bunching();
        assert!(sc.validate().is_empty(), "{}", sc.validate());
        assert_eq!(sc.route.stop_count(), 8);
        assert_eq!(sc.schedule.len(), 12);
        assert!(sc.link_times.samples[0].iter().all(|l| l.len() > 1));
        assert_eq!(bunching(), bunching());
    }
}
