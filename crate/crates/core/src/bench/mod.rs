//! Environment builders, agent cohorts and the sensitivity-study harness.

mod agents;
mod gridworld;
mod harness;

pub use agents::{label_agent, sample_agents, SampledAgent, ALIGNED_GAP};
pub use gridworld::{builtin_env, gen_random_gridworld, grid_environment, BuiltinEnv, ACTION_NAMES, BUILTIN_NAMES, DEFAULT_GAMMA};
pub use harness::{
    build_test, cell_seed, check_invariants, make_instance, mix_seed, run_sensitivity, sample_tester_reward, score_test,
    Counts, ExperimentConfig, ExperimentReport, ExperimentRow, Instance, Method, CSV_HEADER,
};
