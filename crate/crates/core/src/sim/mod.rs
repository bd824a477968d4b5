//! Event-based single-route simulator with individual passenger tracking.

mod engine;
mod log;
mod stochastic;

pub use engine::{Decision, Simulation, Step};
pub use log::{EventRow, HoldRecord, ReplicationLog};
pub use stochastic::{
    apply_compliance_noise, dwell_time, generate_passengers, link_time_at_quantile, sample_link_time,
    ComplianceModel, DwellParams, MissingDistribution,
};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{
    validate_route_config, DemandProfile, LinkTimeDistribution, PolicyThresholds, RouteConfig, ScheduledTrip,
    ValidationReport, Violation,
};
use crate::policy::{recommend, QNetwork, StateScale};
use crate::time::Seconds;

/// Everything needed to run one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub route: RouteConfig,
    pub schedule: Vec<ScheduledTrip>,
    /// Trips missing from service (no driver); kept in the trip list as canceled.
    pub canceled_trips: BTreeSet<String>,
    pub demand: DemandProfile,
    pub link_times: LinkTimeDistribution,
    pub thresholds: PolicyThresholds,
    pub dwell: DwellParams,
    pub compliance: ComplianceModel,
    /// Vehicle capacity; `None` disables denied boardings.
    pub capacity: Option<u32>,
    /// Vehicle arrival at the start terminal relative to `ST_i0`, resampled per trip.
    pub terminal_ready_offsets: Vec<Seconds>,
    pub horizon: Seconds,
    pub seed: u64,
}

impl SimScenario {
    pub fn validate(&self) -> ValidationReport {
        let m = self.route.stop_count();
        let mut extra = self.demand.validate(m);
        extra.extend(self.link_times.validate(m));
        if !self.compliance.is_valid() {
            extra.push(Violation::Scenario { message: "compliance fractions must satisfy 0 <= min <= max <= 1".into() });
        }
        let d = &self.dwell;
        if !(d.board >= 0.0 && d.alight >= 0.0 && d.overhead >= 0.0) {
            extra.push(Violation::Scenario { message: "dwell parameters must be non-negative".into() });
        }
        if self.terminal_ready_offsets.is_empty() {
            extra.push(Violation::Scenario { message: "terminal_ready_offsets must not be empty".into() });
        }
        for id in &self.canceled_trips {
            if !self.schedule.iter().any(|t| &t.trip_id == id) {
                extra.push(Violation::Scenario { message: format!("canceled trip {id} not in schedule") });
            }
        }
        if self.schedule.windows(2).any(|w| w[0].start() > w[1].start()) {
            extra.push(Violation::Scenario { message: "trips must be listed in dispatch order".into() });
        }
        validate_route_config(&self.route, &self.schedule, &self.thresholds)
            .merge(ValidationReport::from_violations(extra))
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn with_compliance(&self, compliance: ComplianceModel) -> Self {
        Self { compliance, ..self.clone() }
    }

    /// Median terminal headway of the planned schedule.
    pub fn scheduled_headway(&self) -> Seconds {
        let mut gaps: Vec<Seconds> = self.schedule.windows(2).map(|w| w[1].start() - w[0].start()).collect();
        if gaps.is_empty() {
            return 600;
        }
        gaps.sort_unstable();
        gaps[(gaps.len() - 1) / 2]
    }

    /// Default state normalisation for this operating point: headways by twice
    /// the scheduled headway, load by capacity (80 when uncapped) and boardings
    /// by the largest expected per-stop boarding count at twice that headway.
    pub fn default_state_scale(&self) -> StateScale {
        let h = self.scheduled_headway();
        let capacity = self.capacity.map(f64::from).unwrap_or(80.0);
        let mut per_stop: Vec<f64> = self
            .demand
            .rates
            .iter()
            .flatten()
            .map(|rate| rate * (2 * h) as f64 / 3600.0)
            .collect();
        per_stop.sort_by(f64::total_cmp);
        let p99 = if per_stop.is_empty() {
            1.0
        } else {
            let rank = ((0.99 * per_stop.len() as f64).ceil() as usize).clamp(1, per_stop.len());
            per_stop[rank - 1]
        };
        StateScale::from_operating_point(h, capacity, p99)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario:\n{0}")]
    InvalidScenario(ValidationReport),
    #[error("horizon exhausted before all trips completed")]
    HorizonExhausted { partial: Box<ReplicationLog> },
}

/// What a policy tells the driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HoldInstruction {
    pub hold: Seconds,
    /// Instructed holds are subject to the compliance model; schedule
    /// adherence (no control) is not.
    pub subject_to_compliance: bool,
}

impl HoldInstruction {
    pub fn instructed(hold: Seconds) -> Self {
        Self { hold, subject_to_compliance: true }
    }

    pub fn exempt(hold: Seconds) -> Self {
        Self { hold, subject_to_compliance: false }
    }
}

pub trait HoldingPolicy {
    fn decide(&mut self, decision: &Decision) -> HoldInstruction;
}

/// No control: trips leave the start terminal on schedule and never hold en route.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoControl;

impl HoldingPolicy for NoControl {
    fn decide(&mut self, decision: &Decision) -> HoldInstruction {
        if decision.stop == 0 {
            HoldInstruction::exempt((decision.context.scheduled - decision.min_departure).max(0))
        } else {
            HoldInstruction::exempt(0)
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvenHeadway;

impl HoldingPolicy for EvenHeadway {
    fn decide(&mut self, decision: &Decision) -> HoldInstruction {
        HoldInstruction::instructed(recommend(&decision.context, None).final_hold)
    }
}

/// Greedy RL policy behind the same guard and fallback as the decision support service.
#[derive(Debug, Clone)]
pub struct RlPolicy {
    pub net: QNetwork,
}

impl HoldingPolicy for RlPolicy {
    fn decide(&mut self, decision: &Decision) -> HoldInstruction {
        HoldInstruction::instructed(recommend(&decision.context, Some(&self.net)).final_hold)
    }
}

impl<F: FnMut(&Decision) -> HoldInstruction> HoldingPolicy for F {
    fn decide(&mut self, decision: &Decision) -> HoldInstruction {
        self(decision)
    }
}

/// Runs one replication to completion.
pub fn run_replication(scenario: &SimScenario, policy: &mut dyn HoldingPolicy) -> Result<ReplicationLog, SimError> {
    let mut sim = Simulation::new(scenario)?;
    while let Step::Decision(decision) = sim.step() {
        let instruction = policy.decide(&decision);
        sim.resolve(instruction);
    }
    sim.finish()
}
