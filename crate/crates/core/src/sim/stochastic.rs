//! Random ingredients of a replication: link times, dwell, passenger
//! arrivals and driver compliance.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::domain::{DemandProfile, LinkTimeDistribution, PassengerJourney};
use crate::time::Seconds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no distribution for link {link}, period {period}")]
pub struct MissingDistribution {
    pub link: usize,
    pub period: usize,
}

/// Draws one observed travel time (resampling with replacement).
pub fn sample_link_time<R: Rng + ?Sized>(
    dist: &LinkTimeDistribution,
    link: usize,
    period: usize,
    rng: &mut R,
) -> Result<Seconds, MissingDistribution> {
    let u: f64 = rng.random();
    link_time_at_quantile(dist, link, period, u)
}

/// Maps a uniform draw `u ∈ [0,1)` onto a sample member, so a replication can
/// pre-draw its randomness and stay paired under counterfactual replays.
pub fn link_time_at_quantile(
    dist: &LinkTimeDistribution,
    link: usize,
    period: usize,
    u: f64,
) -> Result<Seconds, MissingDistribution> {
    let samples = dist.get(link, period).ok_or(MissingDistribution { link, period })?;
    let k = ((u * samples.len() as f64) as usize).min(samples.len() - 1);
    Ok(samples[k])
}

/// Per-passenger service times at a stop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellParams {
    /// Seconds per boarding.
    pub board: f64,
    /// Seconds per alighting.
    pub alight: f64,
    /// Door open/close and pull-in time, paid once when anyone boards or alights.
    pub overhead: f64,
}

impl Default for DwellParams {
    fn default() -> Self {
        Self { board: 3.0, alight: 2.0, overhead: 8.0 }
    }
}

/// Boarding and alighting run through separate doors, so the slower channel
/// sets the dwell.
pub fn dwell_time(boardings: u32, alightings: u32, params: &DwellParams) -> Seconds {
    if boardings == 0 && alightings == 0 {
        return 0;
    }
    let busy = (params.board * boardings as f64).max(params.alight * alightings as f64);
    (params.overhead + busy).round() as Seconds
}

/// Executed hold as a uniform fraction of the instructed hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplianceModel {
    pub min_fraction: f64,
    pub max_fraction: f64,
}

impl ComplianceModel {
    pub const FULL: ComplianceModel = ComplianceModel { min_fraction: 1.0, max_fraction: 1.0 };
    pub const PARTIAL: ComplianceModel = ComplianceModel { min_fraction: 0.5, max_fraction: 1.0 };

    pub fn is_valid(&self) -> bool {
        0.0 <= self.min_fraction && self.min_fraction <= self.max_fraction && self.max_fraction <= 1.0
    }

    /// Executed hold for a pre-drawn uniform `u ∈ [0,1)`.
    pub fn executed(&self, instructed: Seconds, u: f64) -> Seconds {
        if instructed <= 0 {
            return 0;
        }
        let fraction = self.min_fraction + u * (self.max_fraction - self.min_fraction);
        (instructed as f64 * fraction).round() as Seconds
    }
}

impl Default for ComplianceModel {
    fn default() -> Self {
        Self::FULL
    }
}

pub fn apply_compliance_noise<R: Rng + ?Sized>(instructed: Seconds, model: &ComplianceModel, rng: &mut R) -> Seconds {
    let u: f64 = rng.random();
    model.executed(instructed, u)
}

/// Poisson arrivals per (stop, period), placed uniformly within the period
/// and truncated at `horizon`. Returned sorted by arrival time with ids in that order.
pub fn generate_passengers<R: Rng + ?Sized>(
    profile: &DemandProfile,
    horizon: Seconds,
    rng: &mut R,
) -> Vec<PassengerJourney> {
    let mut out = Vec::new();
    for p in 0..profile.periods.count() {
        let (start, end) = profile.periods.span(p);
        let end = end.min(horizon);
        if end <= start {
            continue;
        }
        let duration = (end - start) as f64;
        for (origin, &rate) in profile.rates[p].iter().enumerate() {
            let mean = rate * duration / 3600.0;
            if mean <= 0.0 {
                continue;
            }
            let count = Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0);
            let dests = &profile.destinations[p][origin];
            for _ in 0..count {
                let arrival = start + rng.random_range(0..end - start);
                let destination = pick_destination(dests, rng.random());
                out.push(PassengerJourney {
                    id: 0,
                    origin,
                    destination,
                    arrival,
                    trip: None,
                    board_time: None,
                    alight_time: None,
                });
            }
        }
    }
    out.sort_by_key(|p| (p.arrival, p.origin, p.destination));
    for (id, p) in out.iter_mut().enumerate() {
        p.id = id;
    }
    out
}

fn pick_destination(dests: &[(usize, f64)], u: f64) -> usize {
    let mut acc = 0.0;
    for &(d, share) in dests {
        acc += share;
        if u < acc {
            return d;
        }
    }
    dests.last().map(|&(d, _)| d).unwrap_or_default()
}
