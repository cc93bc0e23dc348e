//! Two-query ε-verification by an omnipotent tester: gamble environments
//! `E_L` and `E_U` built from a raw reward table, and a Monte Carlo check of
//! alignment over a family of random MDPs on the same states.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::cell_seed;
use crate::error::{Error, Result};
use crate::mdp::{reward_value_gap, solve_rewards, Environment, Policy};
use crate::Scalar;

/// Action that stays put in the gamble environments.
pub const STAY: usize = 0;
/// Action that gambles between the extreme states.
pub const GAMBLE: usize = 1;

/// `[r](s) = (r(s) - min r) / (max r - min r)`.
pub fn canonicalize<T: Scalar>(raw: &[T]) -> Result<Vec<T>> {
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::Precondition("reward table has non-finite entries".into()));
    }
    let (lo, hi) = raw
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(l, h), &x| (l.min(x), h.max(x)));
    if raw.is_empty() || hi <= lo {
        return Err(Error::Precondition("constant reward has no canonical form".into()));
    }
    Ok(raw.iter().map(|&x| (x - lo) / (hi - lo)).collect())
}

/// `(argmin, argmax)`, first occurrence of each.
pub fn extreme_states<T: Scalar>(r: &[T]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (i, &x) in r.iter().enumerate() {
        if x < r[lo] {
            lo = i;
        }
        if x > r[hi] {
            hi = i;
        }
    }
    (lo, hi)
}

#[derive(Clone, Debug)]
pub struct OmniTest<T = f64> {
    pub env_l: Environment<T>,
    pub env_u: Environment<T>,
    pub s_min: usize,
    pub s_max: usize,
    pub epsilon: T,
    pub gamma: T,
    pub alpha_l: Vec<T>,
    pub alpha_u: Vec<T>,
    /// `(state, required action)` checked in `E_L`.
    pub checks_l: Vec<(usize, usize)>,
    /// `(state, required action)` checked in `E_U`.
    pub checks_u: Vec<(usize, usize)>,
}

/// On-disk description of an [`OmniTest`]; the two environments live in
/// separate environment documents named here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OmniManifest<T = f64> {
    pub env_l: String,
    pub env_u: String,
    pub s_min: usize,
    pub s_max: usize,
    pub epsilon: T,
    pub gamma: T,
    pub alpha_l: Vec<T>,
    pub alpha_u: Vec<T>,
    pub checks_l: Vec<(usize, usize)>,
    pub checks_u: Vec<(usize, usize)>,
}

impl<T: Scalar> OmniTest<T> {
    pub fn manifest(&self, env_l: &str, env_u: &str) -> OmniManifest<T> {
        OmniManifest {
            env_l: env_l.to_string(),
            env_u: env_u.to_string(),
            s_min: self.s_min,
            s_max: self.s_max,
            epsilon: self.epsilon,
            gamma: self.gamma,
            alpha_l: self.alpha_l.clone(),
            alpha_u: self.alpha_u.clone(),
            checks_l: self.checks_l.clone(),
            checks_u: self.checks_u.clone(),
        }
    }

    pub fn from_manifest(m: OmniManifest<T>, env_l: Environment<T>, env_u: Environment<T>) -> Result<Self> {
        let n = env_l.n_states();
        let in_range = |c: &[(usize, usize)]| c.iter().all(|&(s, a)| s < n && a < 2);
        if env_u.n_states() != n || env_l.n_actions() != 2 || env_u.n_actions() != 2 {
            return Err(Error::InvalidEnvironment("gamble environments need matching states and two actions".into()));
        }
        if !in_range(&m.checks_l) || !in_range(&m.checks_u) {
            return Err(Error::Precondition("manifest checks out of range".into()));
        }
        Ok(Self {
            env_l,
            env_u,
            s_min: m.s_min,
            s_max: m.s_max,
            epsilon: m.epsilon,
            gamma: m.gamma,
            alpha_l: m.alpha_l,
            alpha_u: m.alpha_u,
            checks_l: m.checks_l,
            checks_u: m.checks_u,
        })
    }
}

/// Slack `ε(1-γ)/2` on canonical rewards.
pub fn omni_slack<T: Scalar>(epsilon: T, gamma: T) -> T {
    epsilon * (T::one() - gamma) / T::of(2.0)
}

fn gamble_env<T: Scalar>(n: usize, s_min: usize, s_max: usize, alpha: &[T], discount: T) -> Result<Environment<T>> {
    let mut t = vec![T::zero(); n * 2 * n];
    for s in 0..n {
        t[(s * 2 + STAY) * n + s] = T::one();
        if s == s_min || s == s_max {
            t[(s * 2 + GAMBLE) * n + s] = T::one();
        } else {
            t[(s * 2 + GAMBLE) * n + s_max] += alpha[s];
            t[(s * 2 + GAMBLE) * n + s_min] += T::one() - alpha[s];
        }
    }
    Environment::new(n, 2, t, discount, vec![T::one() / T::of(n as f64); n], [s_min, s_max])
}

/// Builds `E_L` and `E_U`. An aligned robot stays in `E_L` and gambles in
/// `E_U` at every non-extreme state. With only two states a single
/// environment asks for the move from `s_min` to `s_max`.
pub fn build_omni_test<T: Scalar>(raw: &[T], epsilon: T, gamma: T) -> Result<OmniTest<T>> {
    if !(gamma >= T::zero() && gamma < T::one()) {
        return Err(Error::Precondition(format!("gamma {gamma} outside [0, 1)")));
    }
    if !(epsilon >= T::zero()) {
        return Err(Error::Precondition(format!("epsilon {epsilon} must be nonnegative")));
    }
    let slack = omni_slack(epsilon, gamma);
    if slack >= T::of(0.5) {
        return Err(Error::Precondition(format!(
            "ε(1-γ)/2 = {slack} must stay below 0.5"
        )));
    }
    let canon = canonicalize(raw)?;
    let n = canon.len();
    let (s_min, s_max) = extreme_states(&canon);
    let alpha_l: Vec<T> = canon.iter().map(|&c| (c - slack).max(T::zero())).collect();
    let alpha_u: Vec<T> = canon.iter().map(|&c| (c + slack).min(T::one())).collect();
    // the stay-or-gamble comparison does not depend on the discount once it is positive
    let discount = if gamma > T::zero() { gamma } else { T::of(0.5) };
    let interior: Vec<usize> = (0..n).filter(|&s| s != s_min && s != s_max).collect();
    let (env_l, env_u, checks_l, checks_u) = if interior.is_empty() {
        let mut t = vec![T::zero(); n * 2 * n];
        for s in 0..n {
            t[(s * 2 + STAY) * n + s_min] = T::one();
            t[(s * 2 + GAMBLE) * n + s_max] = T::one();
        }
        let env = Environment::new(n, 2, t, discount, vec![T::one() / T::of(n as f64); n], [])?;
        (env.clone(), env, vec![(s_min, GAMBLE)], vec![(s_min, GAMBLE)])
    } else {
        (
            gamble_env(n, s_min, s_max, &alpha_l, discount)?,
            gamble_env(n, s_min, s_max, &alpha_u, discount)?,
            interior.iter().map(|&s| (s, STAY)).collect(),
            interior.iter().map(|&s| (s, GAMBLE)).collect(),
        )
    };
    Ok(OmniTest {
        env_l,
        env_u,
        s_min,
        s_max,
        epsilon,
        gamma,
        alpha_l,
        alpha_u,
        checks_l,
        checks_u,
    })
}

/// Strict check on full robot policies: zero mass on the wrong action at
/// every checked state.
pub fn verify_omni<T: Scalar>(test: &OmniTest<T>, policy_l: &Policy<T>, policy_u: &Policy<T>) -> Result<bool> {
    policy_l.check_for(&test.env_l)?;
    policy_u.check_for(&test.env_u)?;
    let ok = |p: &Policy<T>, checks: &[(usize, usize)]| {
        checks
            .iter()
            .all(|&(s, a)| (0..2).all(|b| b == a || p.prob(s, b) <= T::zero()))
    };
    Ok(ok(policy_l, &test.checks_l) && ok(policy_u, &test.checks_u))
}

/// Tie-tolerant check: the required action must be among the robot's optimal actions.
pub fn verify_omni_sets<T: Scalar>(test: &OmniTest<T>, opt_l: &[Vec<usize>], opt_u: &[Vec<usize>]) -> bool {
    let ok = |sets: &[Vec<usize>], checks: &[(usize, usize)]| checks.iter().all(|&(s, a)| sets[s].contains(&a));
    ok(opt_l, &test.checks_l) && ok(opt_u, &test.checks_u)
}

/// A simulated rational robot with reward table `r_robot` answers both policy queries.
pub fn verify_robot<T: Scalar>(test: &OmniTest<T>, r_robot: &[T]) -> Result<bool> {
    if r_robot.len() != test.env_l.n_states() {
        return Err(Error::Dimension {
            what: "robot reward table",
            expected: test.env_l.n_states(),
            got: r_robot.len(),
        });
    }
    let sol_l = solve_rewards(&test.env_l, r_robot)?;
    let sol_u = solve_rewards(&test.env_u, r_robot)?;
    Ok(verify_omni_sets(test, sol_l.optimal_sets(), sol_u.optimal_sets()))
}

/// Random member of the test family: 2–5 actions, 1–3 successors per
/// state-action pair, `γ ∈ [0.5, 0.99]`.
pub fn sample_family_env<T: Scalar>(n_states: usize, seed: u64) -> Result<Environment<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(2..=5);
    let gamma = rng.random_range(0.5..=0.99);
    let mut t = vec![T::zero(); n_states * m * n_states];
    for s in 0..n_states {
        for a in 0..m {
            let d = rng.random_range(1..=3.min(n_states));
            let weights: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for w in weights {
                let s2 = rng.random_range(0..n_states);
                t[(s * m + a) * n_states + s2] += T::of(w / total);
            }
        }
    }
    // renormalize away rounding
    for row in t.chunks_mut(n_states) {
        let sum: T = row.iter().copied().sum();
        row.iter_mut().for_each(|x| *x /= sum);
    }
    Environment::new(n_states, m, t, T::of(gamma), vec![T::one() / T::of(n_states as f64); n_states], [])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyCheck {
    pub passed: bool,
    pub worst_gap: f64,
    pub worst_env: usize,
}

/// Value gap tolerance for the family check.
pub const FAMILY_TOL: f64 = 1e-9;

/// Samples `n_envs` family members, lets the robot act greedily on its own
/// reward, and measures its worst value gap under canonical `[r_true]`.
pub fn family_alignment_check<T: Scalar>(
    r_true: &[T],
    r_robot: &[T],
    epsilon: T,
    n_envs: usize,
    seed: u64,
) -> Result<FamilyCheck> {
    if r_true.len() != r_robot.len() {
        return Err(Error::Dimension {
            what: "robot reward table",
            expected: r_true.len(),
            got: r_robot.len(),
        });
    }
    let canon = canonicalize(r_true)?;
    let n = r_true.len();
    let gaps: Vec<f64> = (0..n_envs)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let env = sample_family_env::<T>(n, cell_seed(seed, &[i as u64]))?;
            let robot = solve_rewards(&env, r_robot)?;
            let policy = Policy::deterministic(&robot.greedy_actions(), env.n_actions());
            Ok(reward_value_gap(&env, &canon, &policy)?.as_f64())
        })
        .collect::<Result<_>>()?;
    let (worst_env, worst_gap) = gaps
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0f64), |acc, (i, g)| if g > acc.1 { (i, g) } else { acc });
    Ok(FamilyCheck {
        passed: worst_gap <= epsilon.as_f64() + FAMILY_TOL,
        worst_gap,
        worst_env,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_examples() {
        assert_eq!(canonicalize(&[0.0f64, 5.0, 10.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(canonicalize(&[2.0f64, 2.0]).is_err());
    }

    #[test]
    fn zero_epsilon_alpha_equals_canonical() {
        let t = build_omni_test(&[0.0f64, 0.3, 1.0, 0.6], 0.0, 0.9).unwrap();
        assert_eq!(t.alpha_l, t.alpha_u);
        assert!((t.alpha_l[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn two_state_reward_wants_the_move() {
        let t = build_omni_test(&[1.0f64, 3.0], 0.1, 0.9).unwrap();
        assert!(verify_robot(&t, &[1.0, 3.0]).unwrap());
        assert!(!verify_robot(&t, &[3.0, 1.0]).unwrap());
    }

    #[test]
    fn precondition_named() {
        assert!(matches!(build_omni_test(&[0.0f64, 1.0, 2.0], 2.0, 0.0), Err(Error::Precondition(_))));
    }
}
