//! Tabular MDPs: dynamics, features, exact solving, successor features and rollouts.

mod env;
mod rollout;
mod solve;

pub use env::{trajectory_features, EnvDocument, Environment, FeatureMap, GridLayout, Policy, RewardWeights, Trajectory};
pub use rollout::{extend_absorbing, rollout, rollout_with};
pub(crate) use rollout::sample_action;
pub use solve::{
    evaluate_policy, policy_q_values, policy_value_gap, reward_value_gap, solve_mdp, solve_rewards, successor_features,
    QSolution, SuccessorFeatures, MAX_SWEEPS, STOP_TOL, TIE_TOL,
};
