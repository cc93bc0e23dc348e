use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{Environment, FeatureMap, Policy, Trajectory};
use crate::Scalar;

/// Index drawn from unnormalized nonnegative weights.
pub(crate) fn sample_index<T: Scalar, R: Rng + ?Sized>(weights: impl Iterator<Item = (usize, T)> + Clone, rng: &mut R) -> usize {
    let total: f64 = weights.clone().map(|(_, w)| w.as_f64()).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights {
        let w = w.as_f64();
        if w <= 0.0 {
            continue;
        }
        last = i;
        if u < w {
            return i;
        }
        u -= w;
    }
    last
}

pub(crate) fn sample_action<T: Scalar, R: Rng + ?Sized>(policy: &Policy<T>, s: usize, rng: &mut R) -> usize {
    sample_index(policy.row(s).iter().copied().enumerate(), rng)
}

pub(crate) fn sample_next<T: Scalar, R: Rng + ?Sized>(env: &Environment<T>, s: usize, a: usize, rng: &mut R) -> usize {
    sample_index(env.successors(s, a).iter().copied(), rng)
}

/// Rolls out `policy` for at most `horizon` transitions, optionally forcing the
/// first action. Stops on reaching a terminal.
pub fn rollout_with<T: Scalar, R: Rng + ?Sized>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    policy: &Policy<T>,
    start: usize,
    first_action: Option<usize>,
    horizon: usize,
    rng: &mut R,
) -> Result<Trajectory<T>> {
    if start >= env.n_states() {
        return Err(Error::Precondition(format!("start state {start} out of range")));
    }
    if horizon == 0 {
        return Err(Error::Precondition("horizon must be at least 1".into()));
    }
    if let Some(a) = first_action {
        if a >= env.n_actions() {
            return Err(Error::Precondition(format!("action {a} out of range")));
        }
    }
    policy.check_for(env)?;
    let mut states = vec![start];
    let mut actions = Vec::new();
    let mut s = start;
    for t in 0..horizon {
        if env.is_terminal(s) {
            break;
        }
        let a = match (t, first_action) {
            (0, Some(a)) => a,
            _ => sample_action(policy, s, rng),
        };
        s = sample_next(env, s, a, rng);
        actions.push(a);
        states.push(s);
    }
    Ok(Trajectory::new(states, actions, features, env.gamma()))
}

/// Pads a trajectory that stopped at an absorbing terminal out to `horizon`
/// transitions, so its feature counts include the terminal's continuing reward.
pub fn extend_absorbing<T: Scalar>(traj: &mut Trajectory<T>, env: &Environment<T>, features: &FeatureMap<T>, horizon: usize) {
    let last = *traj.states.last().expect("nonempty trajectory");
    if !env.is_terminal(last) {
        return;
    }
    while traj.actions.len() < horizon {
        traj.actions.push(0);
        traj.states.push(last);
    }
    traj.refresh(features, env.gamma());
}

/// Seeded rollout; identical seeds give identical trajectories.
pub fn rollout<T: Scalar>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    policy: &Policy<T>,
    start: usize,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rollout_with(env, features, policy, start, None, horizon, &mut rng)
}
