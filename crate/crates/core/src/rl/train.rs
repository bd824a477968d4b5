use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dqn::{gradient_step, select_action, EpsilonSchedule, Optimizer, OptimizerKind, StepError};
use super::replay::{ReplayBuffer, Transition};
use super::reward::{compute_reward, ImpactedRider, RewardBreakdown, RewardInputs, RewardWeights};
use crate::domain::{TripIdx, TripStatus};
use crate::policy::{build_state, lateness_guard, recommend, QNetwork, StateScale, STATE_DIM};
use crate::sim::{
    ComplianceModel, Decision, HoldInstruction, HoldingPolicy, ReplicationLog, SimError, SimScenario, Simulation,
    Step,
};
use crate::time::Seconds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Gradient steps between target-network syncs.
    pub target_sync: u64,
    pub seed: u64,
    pub compliance: ComplianceModel,
    pub weights: RewardWeights,
    /// Multiplies rewards (passenger-seconds) before they enter the replay buffer.
    pub reward_scale: f64,
    /// Evaluate the greedy policy every this many episodes (and after the last).
    pub eval_every: usize,
    pub eval_seeds: Vec<u64>,
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 500,
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            gamma: 0.99,
            epsilon: EpsilonSchedule { start: 1.0, end: 0.05, decay_steps: 30_000 },
            replay_capacity: 50_000,
            batch_size: 64,
            target_sync: 500,
            seed: 0,
            compliance: ComplianceModel::PARTIAL,
            weights: RewardWeights::default(),
            reward_scale: 0.01,
            eval_every: 10,
            eval_seeds: (0..10).map(|k| 1_000_000 + k).collect(),
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.gamma) {
            out.push("gamma must lie in [0, 1]".to_string());
        }
        if !self.epsilon.is_valid() {
            out.push("epsilon must lie in [0, 1]".to_string());
        }
        if self.replay_capacity == 0 || self.batch_size == 0 || self.target_sync == 0 {
            out.push("replay capacity, batch size and target sync must be positive".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push("learning rate must be positive".to_string());
        }
        if !self.weights.is_valid() {
            out.push("reward weights must be non-negative and not all zero".to_string());
        }
        if !self.compliance.is_valid() {
            out.push("compliance fractions must satisfy 0 <= min <= max <= 1".to_string());
        }
        if self.eval_every == 0 {
            out.push("eval_every must be positive".to_string());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub mean_reward: f64,
    /// Mean passenger wait (seconds) of the greedy policy over the evaluation seeds.
    pub eval_wait: Option<f64>,
    pub epsilon: f64,
}

pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode", "mean_reward", "eval_wait", "epsilon"])?;
    for p in curve {
        w.write_record([
            p.episode.to_string(),
            format!("{:.6}", p.mean_reward),
            p.eval_wait.map(|v| format!("{v:.3}")).unwrap_or_default(),
            format!("{:.6}", p.epsilon),
        ])?;
    }
    w.flush()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_net: QNetwork,
    pub best_net: QNetwork,
    pub best_eval_wait: f64,
    pub curve: Vec<CurvePoint>,
    pub gradient_steps: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("training diverged in episode {episode}: {cause}")]
    Diverged { episode: usize, cause: StepError, curve: Vec<CurvePoint> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// One decision taken during a training episode.
struct Taken<'s> {
    snapshot: Simulation<'s>,
    decision: Decision,
    state: Option<[f64; STATE_DIM]>,
    action: usize,
}

/// Trains a DQN holding policy on `scenario`. Episodes use fresh seeds drawn
/// from `cfg.seed`; the environment applies compliance noise to instructed holds.
pub fn train(scenario: &SimScenario, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(TrainError::Config(problems));
    }
    let report = scenario.validate();
    if !report.is_empty() {
        return Err(SimError::InvalidScenario(report).into());
    }
    let thr = scenario.thresholds;
    let scale = scenario.default_state_scale();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut online = QNetwork::new(STATE_DIM, &cfg.hidden, &thr, scale, &mut rng);
    let mut target = online.clone();
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, online.params().len());
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let train_scenario = scenario.with_compliance(cfg.compliance);

    let mut curve = Vec::with_capacity(cfg.episodes);
    let mut best: Option<(f64, QNetwork)> = None;
    let mut decisions: u64 = 0;
    let mut steps: u64 = 0;

    for episode in 0..cfg.episodes {
        let episode_sc = train_scenario.with_seed(rng.random());
        let (taken, log) = run_episode(&episode_sc, &online, &scale, cfg, decisions, &mut rng)?;
        decisions += taken.len() as u64;

        let rewards: Vec<RewardBreakdown> = taken.iter().map(|t| decision_reward(t, &log, &cfg.weights)).collect();
        let mut reward_sum = 0.0;
        let mut reward_count = 0usize;
        for (k, t) in taken.iter().enumerate() {
            let Some(state) = t.state else { continue };
            let next = taken[k + 1..].iter().find(|n| n.decision.trip == t.decision.trip);
            let (next_state, terminal) = match next.and_then(|n| n.state) {
                Some(s) => (s, false),
                None => ([0.0; STATE_DIM], true),
            };
            let reward = rewards[k].total * cfg.reward_scale;
            reward_sum += rewards[k].total;
            reward_count += 1;
            buffer.push(Transition { state, action: t.action, reward, next_state, terminal });
        }

        if buffer.len() >= cfg.batch_size {
            for _ in 0..reward_count {
                let batch = buffer.sample(cfg.batch_size, &mut rng);
                if let Err(cause) = gradient_step(&mut online, &target, &batch, cfg.gamma, &mut optimizer) {
                    return Err(TrainError::Diverged { episode, cause, curve });
                }
                steps += 1;
                if steps % cfg.target_sync == 0 {
                    target.copy_params_from(&online);
                }
            }
            if !online.is_finite() {
                let cause = StepError::NonFinite { loss: f64::NAN, max_q: f64::NAN, max_reward: f64::NAN };
                return Err(TrainError::Diverged { episode, cause, curve });
            }
        }

        let last = episode + 1 == cfg.episodes;
        let eval_wait = if (episode + 1) % cfg.eval_every == 0 || last {
            let wait = mean_of(&evaluate_waits(
                &train_scenario,
                &RlPolicyFactory(online.clone()),
                &cfg.eval_seeds,
            )?);
            if best.as_ref().is_none_or(|(w, _)| wait < *w) {
                best = Some((wait, online.clone()));
            }
            Some(wait)
        } else {
            None
        };
        curve.push(CurvePoint {
            episode,
            mean_reward: if reward_count > 0 { reward_sum / reward_count as f64 } else { 0.0 },
            eval_wait,
            epsilon: cfg.epsilon.at(decisions),
        });

        if let (Some(every), Some(dir)) = (cfg.checkpoint_every, &cfg.checkpoint_dir) {
            if (episode + 1) % every == 0 {
                std::fs::create_dir_all(dir).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
                online
                    .save(&dir.join(format!("checkpoint-{:05}.json", episode + 1)))
                    .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
            }
        }
    }

    let (best_eval_wait, best_net) = best.unwrap_or((f64::NAN, online.clone()));
    Ok(TrainOutcome { final_net: online, best_net, best_eval_wait, curve, gradient_steps: steps })
}

/// Runs one ε-greedy episode, keeping a snapshot before every decision.
fn run_episode<'s, R: Rng + ?Sized>(
    sc: &'s SimScenario,
    net: &QNetwork,
    scale: &StateScale,
    cfg: &TrainConfig,
    decisions_before: u64,
    rng: &mut R,
) -> Result<(Vec<Taken<'s>>, ReplicationLog), SimError> {
    let grid = sc.thresholds.hold_grid;
    let mut sim = Simulation::new(sc)?;
    let mut taken = Vec::new();
    while let Step::Decision(decision) = sim.step() {
        let eps = cfg.epsilon.at(decisions_before + taken.len() as u64);
        let state = build_state(&decision.context, scale).ok();
        let hold = match state {
            Some(s) => {
                let a = select_action(net, &s, eps, rng);
                lateness_guard(&decision.context, a as Seconds * grid).hold
            }
            None => recommend(&decision.context, None).final_hold,
        };
        taken.push(Taken { snapshot: sim.clone(), decision, state, action: (hold / grid) as usize });
        sim.resolve(HoldInstruction::instructed(hold));
    }
    let log = sim.finish()?;
    Ok((taken, log))
}

/// Reward of one decision against a paired replay in which that hold was zero
/// and every other decision kept its instructed hold.
fn decision_reward(t: &Taken<'_>, actual: &ReplicationLog, weights: &RewardWeights) -> RewardBreakdown {
    let d = &t.decision;
    let record = actual.holds.iter().find(|h| h.trip == d.trip && h.stop == d.stop);
    let executed = record.map_or(0, |h| h.executed);
    let inputs = if executed == 0 {
        // A zero hold leaves the world unchanged.
        RewardInputs { executed_hold: 0, onboard_load: d.onboard, riders: Vec::new() }
    } else {
        let counterfactual = replay_without(t, actual);
        let riders = impacted_riders(t, actual, &counterfactual);
        RewardInputs { executed_hold: executed, onboard_load: d.onboard, riders }
    };
    compute_reward(&inputs, weights)
}

fn replay_without(t: &Taken<'_>, actual: &ReplicationLog) -> ReplicationLog {
    let planned: HashMap<(TripIdx, usize), Seconds> =
        actual.holds.iter().map(|h| ((h.trip, h.stop), h.instructed)).collect();
    let mut sim = t.snapshot.clone();
    let mut first = true;
    while let Step::Decision(d) = sim.step() {
        let hold = if first { 0 } else { planned.get(&(d.trip, d.stop)).copied().unwrap_or(0) };
        first = false;
        sim.resolve(HoldInstruction::instructed(hold));
    }
    match sim.finish() {
        Ok(log) => log,
        Err(SimError::HorizonExhausted { partial }) => *partial,
        Err(e) => unreachable!("snapshot of a valid scenario: {e}"),
    }
}

/// Riders starting in the held trip's segment (this control stop up to the
/// next) who rode the held trip or its follower in either run.
fn impacted_riders(t: &Taken<'_>, actual: &ReplicationLog, cf: &ReplicationLog) -> Vec<ImpactedRider> {
    let d = &t.decision;
    let sc = t.snapshot.scenario();
    let end = sc.route.next_control_stop(d.stop).unwrap_or(sc.route.stop_count() - 1);
    let follower = (d.trip + 1..actual.trips.len()).find(|&k| actual.trips[k].status != TripStatus::Canceled);
    let involved = |trip: Option<TripIdx>| trip.is_some() && (trip == Some(d.trip) || trip == follower);
    actual
        .passengers
        .iter()
        .zip(&cf.passengers)
        .filter(|(a, _)| a.origin >= d.stop && a.origin < end.max(d.stop + 1))
        .filter(|(a, c)| involved(a.trip) || involved(c.trip))
        .map(|(a, c)| ImpactedRider { actual_wait: a.wait(), counterfactual_wait: c.wait() })
        .collect()
}

/// Builds a fresh policy per replication so evaluations can run in parallel.
pub trait PolicyFactory: Sync {
    fn build(&self) -> Box<dyn HoldingPolicy + Send>;
}

pub struct RlPolicyFactory(pub QNetwork);

impl PolicyFactory for RlPolicyFactory {
    fn build(&self) -> Box<dyn HoldingPolicy + Send> {
        Box::new(crate::sim::RlPolicy { net: self.0.clone() })
    }
}

impl<F: Fn() -> Box<dyn HoldingPolicy + Send> + Sync> PolicyFactory for F {
    fn build(&self) -> Box<dyn HoldingPolicy + Send> {
        self()
    }
}

/// Mean passenger wait (seconds) per seed, in seed order.
pub fn evaluate_waits(sc: &SimScenario, policy: &dyn PolicyFactory, seeds: &[u64]) -> Result<Vec<f64>, SimError> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut p = policy.build();
            let log = crate::sim::run_replication(&sc.with_seed(seed), p.as_mut())?;
            Ok(log.mean_wait().unwrap_or(0.0))
        })
        .collect()
}

pub fn mean_of(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Writes the curve to `dir/curve.csv` and both networks alongside it.
pub fn save_outcome(dir: &Path, outcome: &TrainOutcome) -> Result<(), TrainError> {
    let err = |e: &dyn std::fmt::Display| TrainError::Checkpoint(e.to_string());
    std::fs::create_dir_all(dir).map_err(|e| err(&e))?;
    write_curve(&dir.join("curve.csv"), &outcome.curve).map_err(|e| err(&e))?;
    outcome.final_net.save(&dir.join("final.json")).map_err(|e| err(&e))?;
    outcome.best_net.save(&dir.join("best.json")).map_err(|e| err(&e))?;
    let mut f = std::fs::File::create(dir.join("summary.txt")).map_err(|e| err(&e))?;
    writeln!(f, "episodes {}", outcome.curve.len()).map_err(|e| err(&e))?;
    writeln!(f, "gradient_steps {}", outcome.gradient_steps).map_err(|e| err(&e))?;
    writeln!(f, "best_eval_wait {:.3}", outcome.best_eval_wait).map_err(|e| err(&e))?;
    Ok(())
}
