use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::Scalar;

const STOCHASTIC_TOL: f64 = 1e-9;

/// Row-major grid geometry, used only for rendering. State `s` sits at
/// column `s % width`, row `s / width`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub width: usize,
    pub height: usize,
}

/// Tabular dynamics `(S, A, P, S0, γ)` with absorbing terminals.
#[derive(Clone, Debug)]
pub struct Environment<T = f64> {
    n_states: usize,
    n_actions: usize,
    /// Dense `P[s][a][s']`, flattened.
    transitions: Vec<T>,
    gamma: T,
    initial_dist: Vec<T>,
    terminals: BTreeSet<usize>,
    /// Positive-probability successors of each `(s, a)`, flattened like `s * n_actions + a`.
    successors: Vec<Vec<(usize, T)>>,
    layout: Option<GridLayout>,
}

impl<T: Scalar> Environment<T> {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<T>,
        gamma: T,
        initial_dist: Vec<T>,
        terminals: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidEnvironment(
                "environment needs at least one state and one action".into(),
            ));
        }
        let expected = n_states * n_actions * n_states;
        if transitions.len() != expected {
            return Err(Error::Dimension {
                what: "transition tensor",
                expected,
                got: transitions.len(),
            });
        }
        if initial_dist.len() != n_states {
            return Err(Error::Dimension {
                what: "initial distribution",
                expected: n_states,
                got: initial_dist.len(),
            });
        }
        if !(gamma >= T::zero() && gamma < T::one()) {
            return Err(Error::InvalidEnvironment(format!(
                "gamma must lie in [0, 1), got {gamma}"
            )));
        }
        let tol = T::tol(STOCHASTIC_TOL, T::one());
        check_distribution(&initial_dist, tol, "initial distribution")?;
        let mut successors = Vec::with_capacity(n_states * n_actions);
        for sa in 0..n_states * n_actions {
            let row = &transitions[sa * n_states..(sa + 1) * n_states];
            check_distribution(row, tol, "transition row")
                .map_err(|e| Error::InvalidEnvironment(format!("(s={}, a={}): {e}", sa / n_actions, sa % n_actions)))?;
            successors.push(
                row.iter()
                    .enumerate()
                    .filter(|(_, &p)| p > T::zero())
                    .map(|(s2, &p)| (s2, p))
                    .collect(),
            );
        }
        let terminals: BTreeSet<usize> = terminals.into_iter().collect();
        for &t in &terminals {
            if t >= n_states {
                return Err(Error::InvalidEnvironment(format!("terminal {t} out of range")));
            }
            for a in 0..n_actions {
                let p = transitions[(t * n_actions + a) * n_states + t];
                if (p - T::one()).abs() > tol {
                    return Err(Error::InvalidEnvironment(format!(
                        "terminal {t} is not absorbing under action {a}"
                    )));
                }
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions,
            gamma,
            initial_dist,
            terminals,
            successors,
            layout: None,
        })
    }

    pub fn with_layout(mut self, layout: GridLayout) -> Result<Self> {
        if layout.width * layout.height != self.n_states {
            return Err(Error::Dimension {
                what: "grid layout cells",
                expected: self.n_states,
                got: layout.width * layout.height,
            });
        }
        self.layout = Some(layout);
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn initial_dist(&self) -> &[T] {
        &self.initial_dist
    }

    pub fn terminals(&self) -> &BTreeSet<usize> {
        &self.terminals
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminals.contains(&s)
    }

    pub fn layout(&self) -> Option<GridLayout> {
        self.layout
    }

    pub fn prob(&self, s: usize, a: usize, s2: usize) -> T {
        self.transitions[(s * self.n_actions + a) * self.n_states + s2]
    }

    pub fn successors(&self, s: usize, a: usize) -> &[(usize, T)] {
        &self.successors[s * self.n_actions + a]
    }

    /// Maximum number of positive-probability successors over all `(s, a)`.
    pub fn d_max(&self) -> usize {
        self.successors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn is_deterministic(&self) -> bool {
        self.d_max() <= 1
    }

    /// Copy of the dynamics with a different discount.
    pub fn with_gamma(&self, gamma: T) -> Result<Self> {
        let mut env = Self::new(
            self.n_states,
            self.n_actions,
            self.transitions.clone(),
            gamma,
            self.initial_dist.clone(),
            self.terminals.iter().copied(),
        )?;
        env.layout = self.layout;
        Ok(env)
    }
}

fn check_distribution<T: Scalar>(p: &[T], tol: T, what: &str) -> Result<()> {
    if p.iter().any(|&x| !x.is_finite() || x < T::zero()) {
        return Err(Error::InvalidEnvironment(format!("{what} has a negative or non-finite entry")));
    }
    let total: T = p.iter().copied().sum();
    if (total - T::one()).abs() > tol {
        return Err(Error::InvalidEnvironment(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

/// Per-state feature vectors; row `s` is `φ(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T = f64> {
    k: usize,
    phi: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(rows: Vec<Vec<T>>) -> Result<Self> {
        let k = rows.first().map(Vec::len).unwrap_or(0);
        if k == 0 {
            return Err(Error::InvalidEnvironment("feature map needs k >= 1 and at least one state".into()));
        }
        let mut phi = Vec::with_capacity(rows.len() * k);
        for row in &rows {
            if row.len() != k {
                return Err(Error::Dimension {
                    what: "feature row",
                    expected: k,
                    got: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidEnvironment("non-finite feature".into()));
            }
            phi.extend_from_slice(row);
        }
        Ok(Self { k, phi })
    }

    /// One-hot features from a per-state label in `0..k`.
    pub fn one_hot(labels: &[usize], k: usize) -> Result<Self> {
        let rows = labels
            .iter()
            .map(|&l| {
                let mut r = vec![T::zero(); k];
                if l < k {
                    r[l] = T::one();
                }
                r
            })
            .collect();
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidEnvironment(format!("feature label {bad} >= k = {k}")));
        }
        Self::new(rows)
    }

    /// Identity features, so that `w` is a raw per-state reward table.
    pub fn identity(n_states: usize) -> Self {
        let mut phi = vec![T::zero(); n_states * n_states];
        for s in 0..n_states {
            phi[s * n_states + s] = T::one();
        }
        Self { k: n_states, phi }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_states(&self) -> usize {
        self.phi.len() / self.k
    }

    pub fn row(&self, s: usize) -> &[T] {
        &self.phi[s * self.k..(s + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.phi.chunks(self.k)
    }

    pub fn max_norm(&self) -> T {
        self.rows().fold(T::zero(), |m, r| m.max(linalg::norm(r)))
    }

    /// Reward table `R(s) = w·φ(s)`.
    pub fn rewards(&self, w: &RewardWeights<T>) -> Vec<T> {
        self.rows().map(|r| linalg::dot(r, &w.0)).collect()
    }
}

/// Linear reward weights `w`, with `R(s) = w·φ(s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RewardWeights<T = f64>(pub Vec<T>);

impl<T: Scalar> RewardWeights<T> {
    pub fn new(w: Vec<T>) -> Self {
        Self(w)
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![T::zero(); k])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> T {
        linalg::norm(&self.0)
    }

    pub fn scaled(&self, c: T) -> Self {
        Self(linalg::scale(&self.0, c))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Stochastic policy `π(a|s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy<T = f64> {
    n_actions: usize,
    action_probs: Vec<Vec<T>>,
}

impl<T: Scalar> Policy<T> {
    pub fn new(action_probs: Vec<Vec<T>>) -> Result<Self> {
        let n_actions = action_probs.first().map(Vec::len).unwrap_or(0);
        let tol = T::tol(STOCHASTIC_TOL, T::one());
        for (s, row) in action_probs.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::InvalidPolicy(format!("state {s} has {} actions, expected {n_actions}", row.len())));
            }
            check_distribution(row, tol, "policy row").map_err(|e| Error::InvalidPolicy(format!("state {s}: {e}")))?;
        }
        Ok(Self { n_actions, action_probs })
    }

    /// Uniform over the given per-state action sets. Empty sets fall back to uniform over all actions.
    pub fn uniform_over(sets: &[Vec<usize>], n_actions: usize) -> Self {
        let action_probs = sets
            .iter()
            .map(|set| {
                let mut row = vec![T::zero(); n_actions];
                if set.is_empty() {
                    row.iter_mut().for_each(|p| *p = T::one() / T::of(n_actions as f64));
                } else {
                    let p = T::one() / T::of(set.len() as f64);
                    for &a in set {
                        row[a] = p;
                    }
                }
                row
            })
            .collect();
        Self { n_actions, action_probs }
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let sets: Vec<Vec<usize>> = actions.iter().map(|&a| vec![a]).collect();
        Self::uniform_over(&sets, n_actions)
    }

    pub fn uniform_random(n_states: usize, n_actions: usize) -> Self {
        Self::uniform_over(&vec![Vec::new(); n_states], n_actions)
    }

    pub fn n_states(&self) -> usize {
        self.action_probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> T {
        self.action_probs[s][a]
    }

    pub fn row(&self, s: usize) -> &[T] {
        &self.action_probs[s]
    }

    pub fn support(&self, s: usize) -> Vec<usize> {
        self.action_probs[s]
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > T::zero())
            .map(|(a, _)| a)
            .collect()
    }

    pub fn check_for(&self, env: &Environment<T>) -> Result<()> {
        if self.n_states() != env.n_states() || self.n_actions != env.n_actions() {
            return Err(Error::InvalidPolicy(format!(
                "policy is {}x{}, environment is {}x{}",
                self.n_states(),
                self.n_actions,
                env.n_states(),
                env.n_actions()
            )));
        }
        Ok(())
    }
}

/// A finite state/action sequence with its discounted feature sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T = f64> {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    #[serde(skip)]
    pub discounted_features: Vec<T>,
}

impl<T: Scalar> Trajectory<T> {
    /// Builds a trajectory and fills in its discounted features.
    pub fn new(states: Vec<usize>, actions: Vec<usize>, features: &FeatureMap<T>, gamma: T) -> Self {
        let discounted_features = trajectory_features(&states, features, gamma);
        Self {
            states,
            actions,
            discounted_features,
        }
    }

    /// Recomputes `discounted_features`, e.g. after deserialization.
    pub fn refresh(&mut self, features: &FeatureMap<T>, gamma: T) {
        self.discounted_features = trajectory_features(&self.states, features, gamma);
    }
}

/// `Σ_{t=0}^{n-1} γ^t φ(s_t)`.
pub fn trajectory_features<T: Scalar>(states: &[usize], features: &FeatureMap<T>, gamma: T) -> Vec<T> {
    let mut acc = vec![T::zero(); features.k()];
    let mut discount = T::one();
    for &s in states {
        for (a, &f) in acc.iter_mut().zip(features.row(s)) {
            *a += discount * f;
        }
        discount *= gamma;
    }
    acc
}

/// JSON form of an environment together with its feature map.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvDocument<T = f64> {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: T,
    pub transitions: Vec<Vec<Vec<T>>>,
    pub initial_dist: Vec<T>,
    pub terminals: Vec<usize>,
    pub features: Vec<Vec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<GridLayout>,
}

impl<T: Scalar> EnvDocument<T> {
    pub fn from_parts(env: &Environment<T>, features: &FeatureMap<T>) -> Self {
        let (n, m) = (env.n_states, env.n_actions);
        let transitions = (0..n)
            .map(|s| {
                (0..m)
                    .map(|a| env.transitions[(s * m + a) * n..(s * m + a + 1) * n].to_vec())
                    .collect()
            })
            .collect();
        Self {
            n_states: n,
            n_actions: m,
            gamma: env.gamma,
            transitions,
            initial_dist: env.initial_dist.clone(),
            terminals: env.terminals.iter().copied().collect(),
            features: features.rows().map(<[T]>::to_vec).collect(),
            layout: env.layout,
        }
    }

    pub fn into_parts(self) -> Result<(Environment<T>, FeatureMap<T>)> {
        if self.transitions.len() != self.n_states {
            return Err(Error::Dimension {
                what: "transition states",
                expected: self.n_states,
                got: self.transitions.len(),
            });
        }
        let mut flat = Vec::with_capacity(self.n_states * self.n_actions * self.n_states);
        for per_action in &self.transitions {
            if per_action.len() != self.n_actions {
                return Err(Error::Dimension {
                    what: "transition actions",
                    expected: self.n_actions,
                    got: per_action.len(),
                });
            }
            for row in per_action {
                if row.len() != self.n_states {
                    return Err(Error::Dimension {
                        what: "transition row",
                        expected: self.n_states,
                        got: row.len(),
                    });
                }
                flat.extend_from_slice(row);
            }
        }
        let mut env = Environment::new(
            self.n_states,
            self.n_actions,
            flat,
            self.gamma,
            self.initial_dist,
            self.terminals,
        )?;
        if let Some(layout) = self.layout {
            env = env.with_layout(layout)?;
        }
        let features = FeatureMap::new(self.features)?;
        if features.n_states() != env.n_states() {
            return Err(Error::Dimension {
                what: "feature rows",
                expected: env.n_states(),
                got: features.n_states(),
            });
        }
        Ok((env, features))
    }
}
