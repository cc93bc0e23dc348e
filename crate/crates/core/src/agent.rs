//! Agents under test and the query interface they expose.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{sample_action, solve_mdp, Environment, FeatureMap, Policy, QSolution, RewardWeights};
use crate::Scalar;

/// Answer to a pairwise preference query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    First,
    Second,
    Indifferent,
}

/// Preference differences below this are reported as indifference.
pub const PREFERENCE_TIE: f64 = 1e-12;

/// Query handlers. Every method defaults to "unsupported", so an agent only
/// implements the capabilities it has.
pub trait Agent<T: Scalar>: Send + Sync {
    fn weight_query(&self) -> Result<RewardWeights<T>> {
        Err(Error::Unsupported("weight"))
    }

    fn reward_query(&self, _s: usize) -> Result<T> {
        Err(Error::Unsupported("reward"))
    }

    fn value_query(&self, _s: usize) -> Result<T> {
        Err(Error::Unsupported("value"))
    }

    fn q_value_query(&self, _s: usize, _a: usize) -> Result<T> {
        Err(Error::Unsupported("Q-value"))
    }

    /// Compares two trajectories given by their discounted feature counts.
    fn preference_query(&self, _first: &[T], _second: &[T]) -> Result<Choice> {
        Err(Error::Unsupported("preference"))
    }

    fn action_query(&self, _s: usize, _rng: &mut dyn RngCore) -> Result<usize> {
        Err(Error::Unsupported("action"))
    }
}

/// Answers every query from its own reward `w′` and the optimal Q-function under it.
#[derive(Clone, Debug)]
pub struct RationalAgent<T = f64> {
    w: RewardWeights<T>,
    rewards: Vec<T>,
    solution: QSolution<T>,
}

impl<T: Scalar> RationalAgent<T> {
    pub fn new(env: &Environment<T>, features: &FeatureMap<T>, w: RewardWeights<T>) -> Result<Self> {
        let solution = solve_mdp(env, features, &w)?;
        Ok(Self {
            rewards: features.rewards(&w),
            w,
            solution,
        })
    }

    pub fn weights(&self) -> &RewardWeights<T> {
        &self.w
    }

    pub fn solution(&self) -> &QSolution<T> {
        &self.solution
    }

    /// Uniform over its own optimal actions.
    pub fn policy(&self) -> Policy<T> {
        self.solution.canonical_policy()
    }

    fn state(&self, s: usize) -> Result<()> {
        if s >= self.rewards.len() {
            return Err(Error::Precondition(format!("state {s} out of range")));
        }
        Ok(())
    }
}

impl<T: Scalar> Agent<T> for RationalAgent<T> {
    fn weight_query(&self) -> Result<RewardWeights<T>> {
        Ok(self.w.clone())
    }

    fn reward_query(&self, s: usize) -> Result<T> {
        self.state(s)?;
        Ok(self.rewards[s])
    }

    fn value_query(&self, s: usize) -> Result<T> {
        self.state(s)?;
        Ok(self.solution.v(s))
    }

    fn q_value_query(&self, s: usize, a: usize) -> Result<T> {
        self.state(s)?;
        if a >= self.solution.n_actions() {
            return Err(Error::Precondition(format!("action {a} out of range")));
        }
        Ok(self.solution.q(s, a))
    }

    fn preference_query(&self, first: &[T], second: &[T]) -> Result<Choice> {
        if first.len() != self.w.len() || second.len() != self.w.len() {
            return Err(Error::Dimension {
                what: "trajectory features",
                expected: self.w.len(),
                got: first.len().min(second.len()),
            });
        }
        let diff = linalg::dot(&linalg::sub(first, second), self.w.as_slice());
        Ok(if diff.abs() < T::of(PREFERENCE_TIE) {
            Choice::Indifferent
        } else if diff > T::zero() {
            Choice::First
        } else {
            Choice::Second
        })
    }

    fn action_query(&self, s: usize, rng: &mut dyn RngCore) -> Result<usize> {
        self.state(s)?;
        let set = self.solution.optimal_set(s);
        Ok(set[rng.random_range(0..set.len())])
    }
}

/// Picks actions uniformly at random; supports only action queries.
#[derive(Clone, Copy, Debug)]
pub struct UniformRandomAgent {
    pub n_actions: usize,
}

impl<T: Scalar> Agent<T> for UniformRandomAgent {
    fn action_query(&self, _s: usize, rng: &mut dyn RngCore) -> Result<usize> {
        Ok(rng.random_range(0..self.n_actions))
    }
}

/// A black-box policy; supports only action queries.
#[derive(Clone, Debug)]
pub struct PolicyAgent<T = f64> {
    pub policy: Policy<T>,
}

impl<T: Scalar> Agent<T> for PolicyAgent<T> {
    fn action_query(&self, s: usize, rng: &mut dyn RngCore) -> Result<usize> {
        if s >= self.policy.n_states() {
            return Err(Error::Precondition(format!("state {s} out of range")));
        }
        Ok(sample_action(&self.policy, s, rng))
    }
}
