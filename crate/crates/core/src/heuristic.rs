//! Action-query tests for black-box policies: critical states (CS), ARP
//! black-box probes (ARP-bb), set-cover teaching trajectories (SCOT), and a
//! brute-force search for the smallest test meeting a false-positive bound.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::error::{Error, Result};
use crate::exact::{Failure, Verdict};
use crate::geometry::{build_arp_delta_from, dedup_halfspaces, remove_redundant, HalfspaceSet, DEDUP_TOL};
use crate::linalg;
use crate::mdp::{
    reward_value_gap, rollout_with, sample_action, solve_mdp, successor_features, Environment, FeatureMap, Policy,
    QSolution, RewardWeights,
};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HeuristicSource {
    Cs,
    ArpBb,
    Scot,
    Brute,
}

/// Probe states with the tester's acceptable (optimal) actions at each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionQueryTest {
    pub states: Vec<usize>,
    pub acceptable: Vec<Vec<usize>>,
    pub source: HeuristicSource,
}

impl ActionQueryTest {
    fn from_states(states: Vec<usize>, sol: &QSolution<impl Scalar>, source: HeuristicSource) -> Self {
        let acceptable = states.iter().map(|&s| sol.optimal_set(s).to_vec()).collect();
        Self {
            states,
            acceptable,
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

fn informative<T: Scalar>(sol: &QSolution<T>, s: usize) -> bool {
    sol.optimal_set(s).len() < sol.n_actions()
}

/// `V*(s) - mean_a Q*(s,a)` for every state.
pub fn critical_gaps<T: Scalar>(sol: &QSolution<T>) -> Vec<T> {
    (0..sol.n_states())
        .map(|s| {
            let mean = sol.q_row(s).iter().copied().sum::<T>() / T::of(sol.n_actions() as f64);
            sol.v(s) - mean
        })
        .collect()
}

/// Critical states: gap above `t`, largest gap first. States where every
/// action is optimal are never probed.
pub fn gen_cs<T: Scalar>(env: &Environment<T>, features: &FeatureMap<T>, w: &RewardWeights<T>, t: T) -> Result<ActionQueryTest> {
    let sol = solve_mdp(env, features, w)?;
    Ok(gen_cs_from(&sol, t))
}

pub fn gen_cs_from<T: Scalar>(sol: &QSolution<T>, t: T) -> ActionQueryTest {
    let gaps = critical_gaps(sol);
    let mut states: Vec<usize> = (0..sol.n_states())
        .filter(|&s| informative(sol, s) && gaps[s] > t)
        .collect();
    states.sort_by(|&a, &b| gaps[b].partial_cmp(&gaps[a]).unwrap_or(std::cmp::Ordering::Equal));
    ActionQueryTest::from_states(states, sol, HeuristicSource::Cs)
}

/// Probes at the provenance states of the minimal ARP.
pub fn gen_arp_bb<T: Scalar>(env: &Environment<T>, features: &FeatureMap<T>, w: &RewardWeights<T>) -> Result<ActionQueryTest> {
    let sol = solve_mdp(env, features, w)?;
    let minimal = remove_redundant(&dedup_halfspaces(&build_arp_delta_from(env, features, &sol)?))?;
    Ok(gen_arp_bb_from(&sol, &minimal))
}

pub fn gen_arp_bb_from<T: Scalar>(sol: &QSolution<T>, minimal: &HalfspaceSet<T>) -> ActionQueryTest {
    if minimal.is_empty() {
        log::warn!("ARP-bb on a degenerate reward: empty test");
    }
    ActionQueryTest::from_states(minimal.provenance_states(), sol, HeuristicSource::ArpBb)
}

/// Smallest `H` with `γ^H < 1e-6`.
pub fn scot_horizon<T: Scalar>(env: &Environment<T>) -> usize {
    let g = env.gamma().as_f64();
    if g <= 0.0 {
        return 1;
    }
    ((1e-6f64).ln() / g.ln()).ceil().max(1.0) as usize
}

/// SCOT candidate start states: the initial support, or every non-terminal
/// state when the support is a single state.
pub fn scot_starts<T: Scalar>(env: &Environment<T>) -> Vec<usize> {
    let support: Vec<usize> = (0..env.n_states())
        .filter(|&s| env.initial_dist()[s] > T::zero())
        .collect();
    if support.len() == 1 {
        let all: Vec<usize> = (0..env.n_states()).filter(|&s| !env.is_terminal(s)).collect();
        if !all.is_empty() {
            return all;
        }
    }
    support
}

/// Greedy set cover over optimal demonstrations.
pub fn gen_scot<T: Scalar>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    w: &RewardWeights<T>,
    m: usize,
    horizon: Option<usize>,
    seed: u64,
) -> Result<ActionQueryTest> {
    let sol = solve_mdp(env, features, w)?;
    let minimal = remove_redundant(&dedup_halfspaces(&build_arp_delta_from(env, features, &sol)?))?;
    gen_scot_from(env, features, &sol, &minimal, m, horizon, seed)
}

pub fn gen_scot_from<T: Scalar>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    sol: &QSolution<T>,
    minimal: &HalfspaceSet<T>,
    m: usize,
    horizon: Option<usize>,
    seed: u64,
) -> Result<ActionQueryTest> {
    if m == 0 {
        return Err(Error::Precondition("SCOT needs at least one rollout per start".into()));
    }
    if minimal.is_empty() {
        return Ok(ActionQueryTest::from_states(Vec::new(), sol, HeuristicSource::Scot));
    }
    let policy = sol.canonical_policy();
    let sf = successor_features(env, features, &policy)?;
    let horizon = horizon.unwrap_or_else(|| scot_horizon(env));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<Vec<T>> = minimal.normalized().normals().map(|n| n.to_vec()).collect();
    let tol = T::of(DEDUP_TOL);

    let mut candidates: Vec<(Vec<usize>, Vec<bool>)> = Vec::new();
    for start in scot_starts(env) {
        for _ in 0..m {
            let traj = rollout_with(env, features, &policy, start, None, horizon, &mut rng)?;
            let mut covers = vec![false; targets.len()];
            for (&s, &a) in traj.states.iter().zip(&traj.actions) {
                let opt = sol.optimal_set(s);
                for b in (0..env.n_actions()).filter(|b| !opt.contains(b)) {
                    let Some(row) = linalg::normalized(&linalg::sub(sf.get(s, a), sf.get(s, b))) else {
                        continue;
                    };
                    for (j, t) in targets.iter().enumerate() {
                        if !covers[j] && T::one() - linalg::dot(&row, t) < tol {
                            covers[j] = true;
                        }
                    }
                }
            }
            candidates.push((traj.states, covers));
        }
    }

    let mut covered = vec![false; targets.len()];
    let mut chosen: Vec<usize> = Vec::new();
    while covered.iter().any(|c| !c) {
        let gain = |c: &Vec<bool>| c.iter().zip(&covered).filter(|(x, y)| **x && !**y).count();
        let best = candidates
            .iter()
            .enumerate()
            .filter(|(i, _)| !chosen.contains(i))
            .map(|(i, (_, c))| (i, gain(c)))
            .fold((usize::MAX, 0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best.1 == 0 {
            log::warn!(
                "SCOT cover stalled with {} of {} constraints uncovered",
                covered.iter().filter(|c| !**c).count(),
                covered.len()
            );
            break;
        }
        for (c, &x) in covered.iter_mut().zip(&candidates[best.0].1) {
            *c |= x;
        }
        chosen.push(best.0);
    }

    let mut states: Vec<usize> = Vec::new();
    for &i in &chosen {
        for &s in &candidates[i].0 {
            if informative(sol, s) && !states.contains(&s) {
                states.push(s);
            }
        }
    }
    Ok(ActionQueryTest::from_states(states, sol, HeuristicSource::Scot))
}

/// Draws `queries_per_state` actions at every probe; any action outside the
/// acceptable set fails the test.
pub fn administer_action_test<T: Scalar>(
    test: &ActionQueryTest,
    agent: &dyn Agent<T>,
    queries_per_state: usize,
    rng: &mut dyn RngCore,
) -> Result<Verdict> {
    let mut failures = Vec::new();
    let mut queries = 0;
    for (i, (&s, ok)) in test.states.iter().zip(&test.acceptable).enumerate() {
        for _ in 0..queries_per_state.max(1) {
            let a = agent.action_query(s, rng)?;
            queries += 1;
            if !ok.contains(&a) {
                failures.push(Failure {
                    query: i,
                    state: Some(s),
                    observed: format!("action {a}"),
                    expected: format!("{ok:?}"),
                });
            }
        }
    }
    Ok(Verdict::new(failures, queries))
}

/// Largest number of probe states the brute-force search will consider.
pub const BRUTE_FORCE_SIZE_CAP: usize = 6;

/// Result of [`brute_force_search`]: the test plus the detection table it was
/// chosen from (`detect[c][s]` = chance candidate `c` is caught at state `s`).
#[derive(Clone, Debug)]
pub struct BruteForceReport {
    pub test: ActionQueryTest,
    pub candidates: usize,
    pub detect: Vec<Vec<f64>>,
    pub fpr: f64,
}

/// Worst-case pass probability of the misaligned candidates on `subset`.
pub fn subset_fpr(detect: &[Vec<f64>], subset: &[usize]) -> f64 {
    detect
        .iter()
        .map(|d| subset.iter().map(|&s| 1.0 - d[s]).product::<f64>())
        .fold(0.0, f64::max)
}

#[allow(clippy::too_many_arguments)]
pub fn brute_force_test_search<T: Scalar>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    w: &RewardWeights<T>,
    epsilon: T,
    delta_fpr: f64,
    reward_sample_count: usize,
    rollouts_per_state: usize,
    seed: u64,
) -> Result<ActionQueryTest> {
    brute_force_search(
        env,
        features,
        w,
        epsilon,
        delta_fpr,
        reward_sample_count,
        rollouts_per_state,
        seed,
    )
    .map(|r| r.test)
}

/// Breadth-first search over probe subsets, smallest first. Candidate
/// misaligned policies come from rewards sampled on the unit sphere.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_search<T: Scalar>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    w: &RewardWeights<T>,
    epsilon: T,
    delta_fpr: f64,
    reward_sample_count: usize,
    rollouts_per_state: usize,
    seed: u64,
) -> Result<BruteForceReport> {
    let sol = solve_mdp(env, features, w)?;
    let rewards = features.rewards(w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<(RewardWeights<T>, u64)> = (0..reward_sample_count)
        .map(|_| (random_unit(features.k(), &mut rng), rng.random()))
        .collect();
    let tol = T::tol(1e-9, T::one());
    let evaluated: Vec<Option<(Vec<Vec<usize>>, Vec<f64>)>> = samples
        .par_iter()
        .map(|(wp, sub_seed)| -> Result<_> {
            let cand = solve_mdp(env, features, wp)?;
            let policy = cand.canonical_policy();
            if reward_value_gap(env, &rewards, &policy)? <= epsilon + tol {
                return Ok(None);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*sub_seed);
            let detect = (0..env.n_states())
                .map(|s| detection_ratio(&policy, sol.optimal_set(s), s, rollouts_per_state, &mut rng))
                .collect();
            Ok(Some((cand.optimal_sets().to_vec(), detect)))
        })
        .collect::<Result<_>>()?;
    let mut profiles: Vec<Vec<Vec<usize>>> = Vec::new();
    let mut detect = Vec::new();
    for (profile, d) in evaluated.into_iter().flatten() {
        if !profiles.contains(&profile) {
            profiles.push(profile);
            detect.push(d);
        }
    }

    let pool: Vec<usize> = (0..env.n_states()).filter(|&s| informative(&sol, s)).collect();
    for size in 0..=BRUTE_FORCE_SIZE_CAP.min(pool.len()) {
        let mut found = None;
        for_each_combination(pool.len(), size, |idx| {
            let subset: Vec<usize> = idx.iter().map(|&i| pool[i]).collect();
            let fpr = subset_fpr(&detect, &subset);
            if fpr < delta_fpr {
                found = Some((subset, fpr));
                return true;
            }
            false
        });
        if let Some((states, fpr)) = found {
            return Ok(BruteForceReport {
                test: ActionQueryTest::from_states(states, &sol, HeuristicSource::Brute),
                candidates: detect.len(),
                detect,
                fpr,
            });
        }
    }
    Err(Error::SearchExhausted {
        cap: BRUTE_FORCE_SIZE_CAP.min(pool.len()),
    })
}

/// Fraction of sampled actions from `policy` at `s` that fall outside `ok`;
/// with zero samples the exact probability mass is used.
fn detection_ratio<T: Scalar>(policy: &Policy<T>, ok: &[usize], s: usize, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    if samples == 0 {
        return (0..policy.n_actions())
            .filter(|a| !ok.contains(a))
            .map(|a| policy.prob(s, a).as_f64())
            .sum();
    }
    let caught = (0..samples).filter(|_| !ok.contains(&sample_action(policy, s, rng))).count();
    caught as f64 / samples as f64
}

/// Visits `size`-subsets of `0..n` in lexicographic order until `f` returns true.
pub fn for_each_combination(n: usize, size: usize, mut f: impl FnMut(&[usize]) -> bool) {
    if size > n {
        return;
    }
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        if f(&idx) {
            return;
        }
        let Some(i) = (0..size).rev().find(|&i| idx[i] != i + n - size) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..size {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Uniform draw from the unit sphere in `k` dimensions.
pub fn random_unit<T: Scalar, R: Rng + ?Sized>(k: usize, rng: &mut R) -> RewardWeights<T> {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let v: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return RewardWeights::new(v.iter().map(|x| T::of(x / n)).collect());
        }
    }
}
