use serde::{Deserialize, Serialize};

use crate::time::Seconds;

/// Multipliers on passenger-seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub saved_wait: f64,
    pub added_wait: f64,
    pub added_ride: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { saved_wait: 1.0, added_wait: 1.0, added_ride: 0.5 }
    }
}

impl RewardWeights {
    pub fn is_valid(&self) -> bool {
        let all = [self.saved_wait, self.added_wait, self.added_ride];
        all.iter().all(|w| w.is_finite() && *w >= 0.0) && all.iter().any(|w| *w > 0.0)
    }
}

/// A rider in the decision's segment, with their wait in the actual run and
/// in the run where the hold was zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImpactedRider {
    pub actual_wait: Option<Seconds>,
    pub counterfactual_wait: Option<Seconds>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardInputs {
    pub executed_hold: Seconds,
    /// Riders on board while the vehicle holds.
    pub onboard_load: u32,
    pub riders: Vec<ImpactedRider>,
}

/// The weighted terms are signed so that they sum to `total`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub saved_wait: f64,
    pub added_wait: f64,
    pub added_ride: f64,
    pub total: f64,
    /// Riders left out because one of their waits is unknown.
    pub excluded: usize,
}

pub fn compute_reward(inputs: &RewardInputs, w: &RewardWeights) -> RewardBreakdown {
    let mut saved = 0;
    let mut added = 0;
    let mut excluded = 0;
    for r in &inputs.riders {
        match (r.actual_wait, r.counterfactual_wait) {
            (Some(actual), Some(cf)) => {
                let delta = cf - actual;
                if delta > 0 {
                    saved += delta;
                } else {
                    added -= delta;
                }
            }
            _ => excluded += 1,
        }
    }
    let ride = inputs.executed_hold.max(0) * inputs.onboard_load as Seconds;
    let saved_wait = w.saved_wait * saved as f64;
    let added_wait = -w.added_wait * added as f64;
    let added_ride = -w.added_ride * ride as f64;
    RewardBreakdown { saved_wait, added_wait, added_ride, total: saved_wait + added_wait + added_ride, excluded }
}
