//! Deep Q-learning of the holding policy inside the simulator.

mod dqn;
mod replay;
mod reward;
mod train;

pub use dqn::{
    gradient_step, loss_and_gradient, select_action, td_loss, td_target, EpsilonSchedule, Optimizer, OptimizerKind,
    StepError,
};
pub use replay::{ReplayBuffer, Transition};
pub use reward::{compute_reward, ImpactedRider, RewardBreakdown, RewardInputs, RewardWeights};
pub use train::{
    evaluate_waits, mean_of, save_outcome, train, write_curve, CurvePoint, PolicyFactory, RlPolicyFactory,
    TrainConfig, TrainError, TrainOutcome,
};
