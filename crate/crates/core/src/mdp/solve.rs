use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{Environment, FeatureMap, Policy, RewardWeights};
use crate::Scalar;

/// Default sweep cap for value iteration and policy evaluation.
pub const MAX_SWEEPS: usize = 100_000;
/// Sup-norm change below which iteration stops.
pub const STOP_TOL: f64 = 1e-12;
/// Relative tolerance for optimal-action ties: `1e-6 · (1 + |V*(s)|)`.
pub const TIE_TOL: f64 = 1e-6;

/// Optimal action values and the per-state optimal action sets `A_R(s)`.
#[derive(Clone, Debug)]
pub struct QSolution<T = f64> {
    n_actions: usize,
    q: Vec<T>,
    v: Vec<T>,
    optimal_sets: Vec<Vec<usize>>,
}

impl<T: Scalar> QSolution<T> {
    fn from_q(q: Vec<T>, n_states: usize, n_actions: usize) -> Self {
        let mut v = Vec::with_capacity(n_states);
        let mut optimal_sets = Vec::with_capacity(n_states);
        for s in 0..n_states {
            let row = &q[s * n_actions..(s + 1) * n_actions];
            let best = row.iter().copied().fold(T::neg_infinity(), T::max);
            let tol = T::of(TIE_TOL) * (T::one() + best.abs());
            optimal_sets.push((0..n_actions).filter(|&a| row[a] >= best - tol).collect());
            v.push(best);
        }
        Self {
            n_actions,
            q,
            v,
            optimal_sets,
        }
    }

    pub fn n_states(&self) -> usize {
        self.v.len()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn q(&self, s: usize, a: usize) -> T {
        self.q[s * self.n_actions + a]
    }

    pub fn q_row(&self, s: usize) -> &[T] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn v(&self, s: usize) -> T {
        self.v[s]
    }

    pub fn values(&self) -> &[T] {
        &self.v
    }

    pub fn optimal_set(&self, s: usize) -> &[usize] {
        &self.optimal_sets[s]
    }

    pub fn optimal_sets(&self) -> &[Vec<usize>] {
        &self.optimal_sets
    }

    pub fn is_optimal(&self, s: usize, a: usize) -> bool {
        self.optimal_sets[s].contains(&a)
    }

    /// True when every action is optimal in every state.
    pub fn is_trivial(&self) -> bool {
        self.optimal_sets.iter().all(|set| set.len() == self.n_actions)
    }

    /// Uniform distribution over `A_R(s)` at each state.
    pub fn canonical_policy(&self) -> Policy<T> {
        Policy::uniform_over(&self.optimal_sets, self.n_actions)
    }

    /// First optimal action at each state.
    pub fn greedy_actions(&self) -> Vec<usize> {
        self.optimal_sets.iter().map(|set| set[0]).collect()
    }

    /// Largest `|Q(s,a) - (R(s) + γ Σ P V(s'))|` with `V = max_a Q`.
    pub fn bellman_residual(&self, env: &Environment<T>, rewards: &[T]) -> T {
        let mut worst = T::zero();
        for s in 0..env.n_states() {
            for a in 0..env.n_actions() {
                let backup = rewards[s] + env.gamma() * expected(env.successors(s, a), &self.v);
                worst = worst.max((self.q(s, a) - backup).abs());
            }
        }
        worst
    }
}

fn expected<T: Scalar>(succ: &[(usize, T)], v: &[T]) -> T {
    succ.iter().map(|&(s2, p)| p * v[s2]).sum()
}

fn check_dims<T: Scalar>(env: &Environment<T>, features: &FeatureMap<T>) -> Result<()> {
    if features.n_states() != env.n_states() {
        return Err(Error::Dimension {
            what: "feature rows",
            expected: env.n_states(),
            got: features.n_states(),
        });
    }
    Ok(())
}

fn check_weights<T: Scalar>(features: &FeatureMap<T>, w: &RewardWeights<T>) -> Result<()> {
    if w.len() != features.k() {
        return Err(Error::Dimension {
            what: "reward weights",
            expected: features.k(),
            got: w.len(),
        });
    }
    Ok(())
}

/// Optimal Q-values under `R(s) = w·φ(s)`.
pub fn solve_mdp<T: Scalar>(env: &Environment<T>, features: &FeatureMap<T>, w: &RewardWeights<T>) -> Result<QSolution<T>> {
    check_dims(env, features)?;
    check_weights(features, w)?;
    solve_rewards(env, &features.rewards(w))
}

/// Value iteration on a raw reward table.
pub fn solve_rewards<T: Scalar>(env: &Environment<T>, rewards: &[T]) -> Result<QSolution<T>> {
    if rewards.len() != env.n_states() {
        return Err(Error::Dimension {
            what: "reward table",
            expected: env.n_states(),
            got: rewards.len(),
        });
    }
    let (n, m, gamma) = (env.n_states(), env.n_actions(), env.gamma());
    let mut v = vec![T::zero(); n];
    let mut next = vec![T::zero(); n];
    let mut change = T::infinity();
    for _ in 0..MAX_SWEEPS {
        change = T::zero();
        let mut scale = T::zero();
        for s in 0..n {
            let best = (0..m)
                .map(|a| expected(env.successors(s, a), &v))
                .fold(T::neg_infinity(), T::max);
            next[s] = rewards[s] + gamma * best;
            change = change.max((next[s] - v[s]).abs());
            scale = scale.max(next[s].abs());
        }
        std::mem::swap(&mut v, &mut next);
        if change <= T::tol(STOP_TOL, scale) {
            let mut q = vec![T::zero(); n * m];
            for s in 0..n {
                for a in 0..m {
                    q[s * m + a] = rewards[s] + gamma * expected(env.successors(s, a), &v);
                }
            }
            return Ok(QSolution::from_q(q, n, m));
        }
    }
    Err(Error::NonConvergence {
        sweeps: MAX_SWEEPS,
        residual: change.as_f64(),
    })
}

/// `V^π` for a raw reward table.
pub fn evaluate_policy<T: Scalar>(env: &Environment<T>, rewards: &[T], policy: &Policy<T>) -> Result<Vec<T>> {
    policy.check_for(env)?;
    let (n, m, gamma) = (env.n_states(), env.n_actions(), env.gamma());
    let mut v = vec![T::zero(); n];
    let mut next = vec![T::zero(); n];
    let mut change = T::infinity();
    for _ in 0..MAX_SWEEPS {
        change = T::zero();
        let mut scale = T::zero();
        for s in 0..n {
            let mut acc = T::zero();
            for a in 0..m {
                let p = policy.prob(s, a);
                if p > T::zero() {
                    acc += p * expected(env.successors(s, a), &v);
                }
            }
            next[s] = rewards[s] + gamma * acc;
            change = change.max((next[s] - v[s]).abs());
            scale = scale.max(next[s].abs());
        }
        std::mem::swap(&mut v, &mut next);
        if change <= T::tol(STOP_TOL, scale) {
            return Ok(v);
        }
    }
    Err(Error::NonConvergence {
        sweeps: MAX_SWEEPS,
        residual: change.as_f64(),
    })
}

/// `Q^π(s,a) = R(s) + γ Σ P(s,a,s') V^π(s')`, flattened `s * n_actions + a`.
pub fn policy_q_values<T: Scalar>(env: &Environment<T>, rewards: &[T], policy: &Policy<T>) -> Result<Vec<T>> {
    let v = evaluate_policy(env, rewards, policy)?;
    let m = env.n_actions();
    let mut q = vec![T::zero(); env.n_states() * m];
    for s in 0..env.n_states() {
        for a in 0..m {
            q[s * m + a] = rewards[s] + env.gamma() * expected(env.successors(s, a), &v);
        }
    }
    Ok(q)
}

/// Expected discounted feature counts `Φ_π^{(s,a)}` for every state-action pair.
#[derive(Clone, Debug)]
pub struct SuccessorFeatures<T = f64> {
    n_actions: usize,
    k: usize,
    phi_sa: Vec<T>,
}

impl<T: Scalar> SuccessorFeatures<T> {
    pub fn get(&self, s: usize, a: usize) -> &[T] {
        let i = (s * self.n_actions + a) * self.k;
        &self.phi_sa[i..i + self.k]
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `w · Φ(s,a)`.
    pub fn q_value(&self, w: &RewardWeights<T>, s: usize, a: usize) -> T {
        linalg::dot(self.get(s, a), w.as_slice())
    }
}

/// Vectorized policy evaluation over the `k` feature channels.
pub fn successor_features<T: Scalar>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    policy: &Policy<T>,
) -> Result<SuccessorFeatures<T>> {
    check_dims(env, features)?;
    policy.check_for(env)?;
    let (n, m, k, gamma) = (env.n_states(), env.n_actions(), features.k(), env.gamma());
    // state successor features ψ(s) = Σ_a π(a|s) Φ(s,a)
    let mut psi = vec![T::zero(); n * k];
    let mut next = vec![T::zero(); n * k];
    let mut acc = vec![T::zero(); k];
    let mut converged = false;
    let mut change = T::infinity();
    for _ in 0..MAX_SWEEPS {
        change = T::zero();
        let mut scale = T::zero();
        for s in 0..n {
            acc.iter_mut().for_each(|x| *x = T::zero());
            for a in 0..m {
                let pa = policy.prob(s, a);
                if pa <= T::zero() {
                    continue;
                }
                for &(s2, p) in env.successors(s, a) {
                    let w = pa * p;
                    for (x, &y) in acc.iter_mut().zip(&psi[s2 * k..(s2 + 1) * k]) {
                        *x += w * y;
                    }
                }
            }
            for j in 0..k {
                let val = features.row(s)[j] + gamma * acc[j];
                change = change.max((val - psi[s * k + j]).abs());
                scale = scale.max(val.abs());
                next[s * k + j] = val;
            }
        }
        std::mem::swap(&mut psi, &mut next);
        if change <= T::tol(STOP_TOL, scale) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            sweeps: MAX_SWEEPS,
            residual: change.as_f64(),
        });
    }
    let mut phi_sa = vec![T::zero(); n * m * k];
    for s in 0..n {
        for a in 0..m {
            let out = &mut phi_sa[(s * m + a) * k..(s * m + a + 1) * k];
            out.copy_from_slice(features.row(s));
            for &(s2, p) in env.successors(s, a) {
                for (x, &y) in out.iter_mut().zip(&psi[s2 * k..(s2 + 1) * k]) {
                    *x += gamma * p * y;
                }
            }
        }
    }
    Ok(SuccessorFeatures { n_actions: m, k, phi_sa })
}

/// `max_s V*_R(s) - V^π_R(s)`, clamped at zero.
pub fn policy_value_gap<T: Scalar>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    w: &RewardWeights<T>,
    policy: &Policy<T>,
) -> Result<T> {
    check_dims(env, features)?;
    check_weights(features, w)?;
    reward_value_gap(env, &features.rewards(w), policy)
}

/// Value gap for a raw reward table.
pub fn reward_value_gap<T: Scalar>(env: &Environment<T>, rewards: &[T], policy: &Policy<T>) -> Result<T> {
    let opt = solve_rewards(env, rewards)?;
    let v = evaluate_policy(env, rewards, policy)?;
    Ok(opt
        .values()
        .iter()
        .zip(&v)
        .fold(T::zero(), |g, (&a, &b)| g.max(a - b)))
}
