use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::RationalAgent;
use crate::error::Result;
use crate::heuristic::random_unit;
use crate::mdp::{reward_value_gap, Environment, FeatureMap, RewardWeights};
use crate::Scalar;

/// Value gap below which an agent counts as exactly aligned.
pub const ALIGNED_GAP: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct SampledAgent<T = f64> {
    pub w: RewardWeights<T>,
    pub agent: RationalAgent<T>,
    pub aligned: bool,
    pub gap: T,
}

/// Ground-truth label: the agent's canonical optimal policy loses nothing under `w`.
pub fn label_agent<T: Scalar>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    w: &RewardWeights<T>,
    agent: &RationalAgent<T>,
) -> Result<(bool, T)> {
    let gap = reward_value_gap(env, &features.rewards(w), &agent.policy())?;
    Ok((gap <= T::of(ALIGNED_GAP), gap))
}

/// `n` rational agents with rewards uniform on the unit sphere, minus agents
/// whose optimal-set profile repeats an earlier one. `inject` agents are
/// placed first.
pub fn sample_agents<T: Scalar>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    w: &RewardWeights<T>,
    n: usize,
    inject: &[RewardWeights<T>],
    seed: u64,
) -> Result<Vec<SampledAgent<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<SampledAgent<T>> = Vec::with_capacity(n + inject.len());
    let draws: Vec<RewardWeights<T>> = inject
        .iter()
        .cloned()
        .chain((0..n).map(|_| random_unit(features.k(), &mut rng)))
        .collect();
    for wp in draws {
        let agent = RationalAgent::new(env, features, wp.clone())?;
        if out
            .iter()
            .any(|o| o.agent.solution().optimal_sets() == agent.solution().optimal_sets())
        {
            continue;
        }
        let (aligned, gap) = label_agent(env, features, w, &agent)?;
        out.push(SampledAgent {
            w: wp,
            agent,
            aligned,
            gap,
        });
    }
    Ok(out)
}
