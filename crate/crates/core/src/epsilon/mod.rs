//! ε-approximate tests from elicited preferences: active elicitation with a
//! posterior over rewards, question deduplication, ε-filtering, redundancy
//! removal, and balanced evaluation against a known reward.

mod sampler;

pub use sampler::{information_gain, log_sigmoid, sample_posterior, sigmoid, ChainOutput, SamplerOptions};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, Choice};
use crate::error::{Error, Result};
use crate::exact::{Failure, Verdict};
use crate::geometry::{remove_redundant, HalfspaceSet, Provenance, DEDUP_TOL};
use crate::exact::default_horizon;
use crate::heuristic::random_unit;
use crate::linalg;
use crate::mdp::{
    extend_absorbing, policy_value_gap, rollout_with, solve_mdp, Environment, FeatureMap, Policy, RewardWeights,
    Trajectory,
};
use crate::Scalar;

/// A trajectory offered to the oracle, with its discounted feature counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Candidate<T = f64> {
    pub trajectory: Trajectory<T>,
    pub features: Vec<T>,
}

/// An answered question stored winner first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AnsweredPair<T = f64> {
    pub winner: Candidate<T>,
    pub loser: Candidate<T>,
}

impl<T: Scalar> AnsweredPair<T> {
    /// `Φ(winner) - Φ(loser)`.
    pub fn normal(&self) -> Vec<T> {
        linalg::sub(&self.winner.features, &self.loser.features)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PreferenceDataset<T = f64> {
    pub pairs: Vec<AnsweredPair<T>>,
}

impl<T: Scalar> PreferenceDataset<T> {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn normals(&self) -> Vec<Vec<T>> {
        self.pairs.iter().map(|p| p.normal()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PosteriorSamples<T = f64> {
    pub samples: Vec<Vec<T>>,
    pub mean_w: Vec<T>,
    pub acceptance: f64,
}

impl<T: Scalar> PosteriorSamples<T> {
    pub fn new(samples: Vec<Vec<T>>, acceptance: f64) -> Self {
        let k = samples.first().map_or(0, |s| s.len());
        let mut mean_w = vec![T::zero(); k];
        for s in &samples {
            for (m, &x) in mean_w.iter_mut().zip(s) {
                *m += x;
            }
        }
        let n = T::of(samples.len().max(1) as f64);
        mean_w.iter_mut().for_each(|m| *m /= n);
        Self {
            samples,
            mean_w,
            acceptance,
        }
    }

    /// Unit vector along the posterior mean (the mean itself if it vanishes).
    pub fn mean_direction(&self) -> Vec<T> {
        linalg::normalized(&self.mean_w).unwrap_or_else(|| self.mean_w.clone())
    }
}

/// Answers "which of these two trajectories do you prefer?".
pub trait PreferenceOracle<T: Scalar> {
    fn answer(&mut self, first: &Candidate<T>, second: &Candidate<T>) -> Result<Choice>;
}

/// Strict comparison by `w_true · (Φ_first - Φ_second)`; ties go to the first.
pub fn synthetic_oracle<T: Scalar>(w_true: &[T], first: &[T], second: &[T]) -> Choice {
    if linalg::dot(w_true, &linalg::sub(first, second)) >= T::zero() {
        Choice::First
    } else {
        Choice::Second
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticOracle<T = f64> {
    pub w_true: Vec<T>,
}

impl<T: Scalar> PreferenceOracle<T> for SyntheticOracle<T> {
    fn answer(&mut self, first: &Candidate<T>, second: &Candidate<T>) -> Result<Choice> {
        Ok(synthetic_oracle(&self.w_true, &first.features, &second.features))
    }
}

#[derive(Clone, Debug)]
pub struct ElicitOptions {
    /// Candidate pairs scored per question.
    pub pool: usize,
    /// Rollout horizon; `None` uses the exact preference-test default.
    pub horizon: Option<usize>,
    /// Posterior samples that contribute optimal policies to each pool.
    pub policy_samples: usize,
    pub sampler: SamplerOptions,
    /// Keep every generated candidate pair, not just the asked ones.
    pub keep_generated: bool,
}

impl Default for ElicitOptions {
    fn default() -> Self {
        Self {
            pool: 100,
            horizon: None,
            policy_samples: 8,
            sampler: SamplerOptions::default(),
            keep_generated: false,
        }
    }
}

pub struct Elicitation<T = f64> {
    pub dataset: PreferenceDataset<T>,
    pub posterior: PosteriorSamples<T>,
    /// `(Φ_a, Φ_b)` for every candidate pair scored, when requested.
    pub generated: Vec<(Vec<T>, Vec<T>)>,
}

pub fn elicitation_horizon<T: Scalar>(env: &Environment<T>, features: &FeatureMap<T>) -> usize {
    default_horizon(env, features)
}

fn candidate<T: Scalar, R: Rng + ?Sized>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    policy: &Policy<T>,
    start: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Candidate<T>> {
    let mut t = rollout_with(env, features, policy, start, None, horizon, rng)?;
    extend_absorbing(&mut t, env, features, horizon);
    Ok(Candidate {
        features: t.discounted_features.clone(),
        trajectory: t,
    })
}

/// Random trajectory pairs from a shared start: each arm follows one of
/// `policies` chosen uniformly. Pairs with identical features are skipped.
pub fn random_pairs<T: Scalar, R: Rng + ?Sized>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    policies: &[Policy<T>],
    n: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<(Candidate<T>, Candidate<T>)>> {
    let starts: Vec<usize> = (0..env.n_states()).filter(|&s| !env.is_terminal(s)).collect();
    let starts = if starts.is_empty() { (0..env.n_states()).collect() } else { starts };
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n && attempts < 20 * n + 100 {
        attempts += 1;
        let s = starts[rng.random_range(0..starts.len())];
        let pa = &policies[rng.random_range(0..policies.len())];
        let pb = &policies[rng.random_range(0..policies.len())];
        let a = candidate(env, features, pa, s, horizon, rng)?;
        let b = candidate(env, features, pb, s, horizon, rng)?;
        if linalg::normalized(&linalg::sub(&a.features, &b.features)).is_some() {
            out.push((a, b));
        }
    }
    Ok(out)
}

fn pool_policies<T: Scalar, R: Rng + ?Sized>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    samples: &[Vec<T>],
    count: usize,
    rng: &mut R,
) -> Result<Vec<Policy<T>>> {
    let mut out = vec![Policy::uniform_random(env.n_states(), env.n_actions())];
    for _ in 0..count {
        let w = if samples.is_empty() {
            random_unit(features.k(), rng)
        } else {
            RewardWeights::new(samples[rng.random_range(0..samples.len())].clone())
        };
        out.push(solve_mdp(env, features, &w)?.canonical_policy());
    }
    Ok(out)
}

/// Active elicitation: each round scores a fresh candidate pool by expected
/// information gain under the current posterior, asks the best pair, and
/// resamples the posterior.
pub fn elicit<T: Scalar>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    oracle: &mut dyn PreferenceOracle<T>,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<(PreferenceDataset<T>, PosteriorSamples<T>)> {
    let e = elicit_with(env, features, oracle, n, m, seed, &ElicitOptions::default())?;
    Ok((e.dataset, e.posterior))
}

pub fn elicit_with<T: Scalar>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    oracle: &mut dyn PreferenceOracle<T>,
    n: usize,
    m: usize,
    seed: u64,
    opts: &ElicitOptions,
) -> Result<Elicitation<T>> {
    if m == 0 {
        return Err(Error::Precondition("posterior sample count must be positive".into()));
    }
    let k = features.k();
    let horizon = opts.horizon.unwrap_or_else(|| elicitation_horizon(env, features));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = PreferenceDataset::default();
    let mut generated = Vec::new();
    let mut chain = sample_posterior::<T, _>(k, &[], m, None, &opts.sampler, &mut rng);
    let temperature = opts.sampler.temperature;
    for round in 0..n {
        let policies = pool_policies(env, features, &chain.samples, opts.policy_samples, &mut rng)?;
        let pool = random_pairs(env, features, &policies, opts.pool, horizon, &mut rng)?;
        let scores: Vec<f64> = pool
            .par_iter()
            .map(|(a, b)| information_gain(&linalg::sub(&a.features, &b.features), &chain.samples, temperature))
            .collect();
        if opts.keep_generated {
            generated.extend(pool.iter().map(|(a, b)| (a.features.clone(), b.features.clone())));
        }
        let Some(best) = scores
            .iter()
            .enumerate()
            .fold(None, |acc: Option<(usize, f64)>, (i, &s)| match acc {
                Some((_, bs)) if bs >= s => acc,
                _ => Some((i, s)),
            })
            .map(|(i, _)| i)
        else {
            log::warn!("round {round}: no distinct candidate pairs; stopping early");
            break;
        };
        let (a, b) = pool.into_iter().nth(best).expect("best index in pool");
        let pair = match oracle.answer(&a, &b)? {
            Choice::First | Choice::Indifferent => AnsweredPair { winner: a, loser: b },
            Choice::Second => AnsweredPair { winner: b, loser: a },
        };
        data.pairs.push(pair);
        let start = PosteriorSamples::new(chain.samples.clone(), 0.0).mean_w;
        chain = sample_posterior(k, &data.normals(), m, Some(&start), &opts.sampler, &mut rng);
        if !(0.1..=0.6).contains(&chain.acceptance) {
            log::warn!("round {round}: posterior chain acceptance {:.3} outside [0.1, 0.6]", chain.acceptance);
        }
    }
    Ok(Elicitation {
        dataset: data,
        posterior: PosteriorSamples::new(chain.samples, chain.acceptance),
        generated,
    })
}

/// Removes repeated questions (normals within `DEDUP_TOL`, first kept) and
/// questions with zero normal. Contradictory repeats, whose normals point in
/// opposite directions, are dropped together; their indices are returned.
pub fn dedup_questions<T: Scalar>(data: &PreferenceDataset<T>) -> (PreferenceDataset<T>, Vec<usize>) {
    let tol = T::of(DEDUP_TOL);
    let units: Vec<Option<Vec<T>>> = data.pairs.iter().map(|p| linalg::normalized(&p.normal())).collect();
    let mut keep = vec![false; data.pairs.len()];
    let mut contradictory = Vec::new();
    for i in 0..data.pairs.len() {
        let Some(u) = &units[i] else { continue };
        let mut dup = false;
        for j in 0..i {
            let Some(v) = &units[j] else { continue };
            let c = linalg::dot(u, v);
            if T::one() - c < tol {
                dup = true;
            } else if T::one() + c < tol {
                dup = true;
                if !contradictory.contains(&j) {
                    contradictory.push(j);
                }
                contradictory.push(i);
            }
        }
        keep[i] = !dup;
    }
    for &i in &contradictory {
        keep[i] = false;
    }
    if !contradictory.is_empty() {
        log::warn!("dropping {} contradictory answers", contradictory.len());
    }
    let pairs = data
        .pairs
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(p, _)| p.clone())
        .collect();
    (PreferenceDataset { pairs }, contradictory)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "delta")]
pub enum FilterMode {
    /// Keep questions whose gap under the (unit) posterior mean is at least ε.
    Mean,
    /// Keep questions whose gap exceeds ε under at least `1 - δ` of the samples.
    EpsDelta(f64),
}

/// Estimated value gap of a question under the mode's statistic: the gap
/// under the unit posterior mean, or the `δ` lower quantile over samples.
fn keeps<T: Scalar>(d: &[T], post: &PosteriorSamples<T>, mean_dir: &[T], epsilon: T, mode: FilterMode) -> bool {
    match mode {
        FilterMode::Mean => {
            let g = linalg::dot(mean_dir, d);
            g > T::zero() && g >= epsilon
        }
        FilterMode::EpsDelta(delta) => {
            let n = post.samples.len().max(1) as f64;
            let hits = post
                .samples
                .iter()
                .filter(|w| {
                    let g = linalg::dot(w, d);
                    g > epsilon || (epsilon == T::zero() && g > T::zero())
                })
                .count();
            hits as f64 / n >= 1.0 - delta
        }
    }
}

pub fn epsilon_filter<T: Scalar>(
    data: &PreferenceDataset<T>,
    post: &PosteriorSamples<T>,
    epsilon: T,
    mode: FilterMode,
) -> PreferenceDataset<T> {
    let mean_dir = post.mean_direction();
    PreferenceDataset {
        pairs: data
            .pairs
            .iter()
            .filter(|p| keeps(&p.normal(), post, &mean_dir, epsilon, mode))
            .cloned()
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EpsilonTest<T = f64> {
    pub questions: Vec<AnsweredPair<T>>,
    pub epsilon: T,
    pub mode: FilterMode,
}

impl<T: Scalar> EpsilonTest<T> {
    /// Questions with expected answer "winner first", as raw normals.
    pub fn normals(&self) -> Vec<Vec<T>> {
        self.questions.iter().map(|q| q.normal()).collect()
    }
}

/// dedup → ε-filter → redundancy removal on the induced normals.
pub fn build_epsilon_test<T: Scalar>(
    data: &PreferenceDataset<T>,
    post: &PosteriorSamples<T>,
    epsilon: T,
    mode: FilterMode,
) -> Result<EpsilonTest<T>> {
    let (deduped, _) = dedup_questions(data);
    let filtered = epsilon_filter(&deduped, post, epsilon, mode);
    let k = post.mean_w.len();
    let mut set = HalfspaceSet::new(k);
    let mut index = Vec::new();
    for (i, p) in filtered.pairs.iter().enumerate() {
        if set.push(p.normal(), Provenance::TrajectoryPair { first: i, second: i }) {
            index.push(i);
        }
    }
    let minimal = remove_redundant(&set)?;
    let questions: Vec<AnsweredPair<T>> = minimal
        .rows()
        .iter()
        .map(|h| match h.provenance {
            Provenance::TrajectoryPair { first, .. } => filtered.pairs[first].clone(),
            Provenance::StateAction { .. } => unreachable!("question provenance"),
        })
        .collect();
    if questions.is_empty() {
        log::warn!("ε-test at ε = {epsilon} is empty and passes every agent");
    }
    Ok(EpsilonTest {
        questions,
        epsilon,
        mode,
    })
}

pub fn administer_epsilon_test<T: Scalar>(test: &EpsilonTest<T>, agent: &dyn Agent<T>) -> Result<Verdict> {
    let mut failures = Vec::new();
    for (i, q) in test.questions.iter().enumerate() {
        let c = agent.preference_query(&q.winner.features, &q.loser.features)?;
        if c != Choice::First {
            failures.push(Failure {
                query: i,
                state: q.winner.trajectory.states.first().copied(),
                observed: format!("{c:?}"),
                expected: "First".into(),
            });
        }
    }
    Ok(Verdict::new(failures, test.questions.len()))
}

/// Preference-only agent answering by `w · Φ`; cheaper than a rational agent
/// when no MDP queries are needed.
#[derive(Clone, Debug)]
pub struct WeightPreferenceAgent<T = f64> {
    pub w: Vec<T>,
}

impl<T: Scalar> Agent<T> for WeightPreferenceAgent<T> {
    fn weight_query(&self) -> Result<RewardWeights<T>> {
        Ok(RewardWeights::new(self.w.clone()))
    }

    fn preference_query(&self, first: &[T], second: &[T]) -> Result<Choice> {
        let d = linalg::dot(&self.w, &linalg::sub(first, second));
        Ok(if d.abs() < T::of(crate::agent::PREFERENCE_TIE) {
            Choice::Indifferent
        } else if d > T::zero() {
            Choice::First
        } else {
            Choice::Second
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub aligned_fraction: f64,
    pub n: usize,
}

impl Metrics {
    fn from_labels(passed: &[bool], aligned: &[bool]) -> Self {
        let (mut tp, mut fp, mut tn, mut fnn) = (0usize, 0usize, 0usize, 0usize);
        for (&p, &a) in passed.iter().zip(aligned) {
            match (a, p) {
                (true, true) => tp += 1,
                (true, false) => fnn += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
            }
        }
        let r = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            accuracy: r(tp + tn, passed.len()),
            fpr: r(fp, fp + tn),
            fnr: r(fnn, fnn + tp),
            aligned_fraction: r(tp + fnn, passed.len()),
            n: passed.len(),
        }
    }
}

/// Held-out questions and, optionally, the environment for the value-gap label.
pub struct EvalContext<'a, T = f64> {
    /// `(Φ_a, Φ_b)` pairs; the expected answer comes from `w_true`.
    pub held_out: &'a [(Vec<T>, Vec<T>)],
    pub env: Option<(&'a Environment<T>, &'a FeatureMap<T>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Label: agrees with `w_true` on every held-out question whose true gap is at least ε.
    pub protocol: Metrics,
    /// Label: value gap of the reward's optimal policy under `w_true` is at most ε.
    pub value_gap: Option<Metrics>,
    pub sigma: f64,
    pub balanced: bool,
}

/// Draws `n_rewards` unit test rewards from a Gaussian around `w_true`,
/// adapting its spread until 45–55% are labeled aligned, and scores the test.
pub fn evaluate_test<T: Scalar>(
    test: &EpsilonTest<T>,
    ctx: &EvalContext<'_, T>,
    w_true: &[T],
    n_rewards: usize,
    seed: u64,
) -> Result<Evaluation> {
    let epsilon = test.epsilon;
    let compatible: Vec<Vec<T>> = ctx
        .held_out
        .iter()
        .filter_map(|(a, b)| {
            let d = linalg::sub(a, b);
            let g = linalg::dot(w_true, &d);
            if g.abs() >= epsilon && g != T::zero() {
                Some(if g > T::zero() { d } else { d.iter().map(|&x| -x).collect() })
            } else {
                None
            }
        })
        .collect();
    let w_unit = linalg::normalized(w_true).ok_or_else(|| Error::Precondition("w_true must be nonzero".into()))?;
    let draw = |sigma: f64| -> Vec<Vec<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_rewards)
            .map(|_| loop {
                let v: Vec<f64> = w_unit
                    .iter()
                    .map(|x| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        x.as_f64() + sigma * z
                    })
                    .collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 1e-12 {
                    break v.iter().map(|x| T::of(x / n)).collect();
                }
            })
            .collect()
    };
    let label = |w: &Vec<T>| compatible.iter().all(|d| linalg::dot(w, d) > T::zero());
    // aligned fraction falls as sigma grows; bisect on log sigma
    let (mut lo, mut hi) = (1e-4f64.ln(), 10f64.ln());
    let mut sigma = 0.5f64;
    let mut balanced = false;
    let mut rewards = draw(sigma);
    for _ in 0..40 {
        sigma = ((lo + hi) / 2.0).exp();
        rewards = draw(sigma);
        let frac = rewards.iter().filter(|w| label(w)).count() as f64 / n_rewards.max(1) as f64;
        if (0.45..=0.55).contains(&frac) {
            balanced = true;
            break;
        }
        if frac > 0.55 {
            lo = sigma.ln();
        } else {
            hi = sigma.ln();
        }
    }
    if !balanced {
        log::warn!("could not balance aligned test rewards at ε = {epsilon}; using σ = {sigma:.3e}");
    }
    let passed: Vec<bool> = rewards
        .iter()
        .map(|w| {
            administer_epsilon_test(test, &WeightPreferenceAgent { w: w.clone() })
                .map(|v| v.passed)
                .unwrap_or(false)
        })
        .collect();
    let protocol_labels: Vec<bool> = rewards.iter().map(label).collect();
    let value_gap = match ctx.env {
        Some((env, features)) => {
            let wt = RewardWeights::new(w_true.to_vec());
            let labels: Vec<bool> = rewards
                .par_iter()
                .map(|w| -> Result<bool> {
                    let sol = solve_mdp(env, features, &RewardWeights::new(w.clone()))?;
                    Ok(policy_value_gap(env, features, &wt, &sol.canonical_policy())? <= epsilon + T::of(1e-9))
                })
                .collect::<Result<_>>()?;
            Some(Metrics::from_labels(&passed, &labels))
        }
        None => None,
    };
    Ok(Evaluation {
        protocol: Metrics::from_labels(&passed, &protocol_labels),
        value_gap,
        sigma,
        balanced,
    })
}

/// `n` held-out pairs from the elicitation generator with random-reward policies.
pub fn held_out_pairs<T: Scalar>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    n: usize,
    horizon: Option<usize>,
    seed: u64,
) -> Result<Vec<(Vec<T>, Vec<T>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policies = pool_policies(env, features, &[], 8, &mut rng)?;
    let horizon = horizon.unwrap_or_else(|| elicitation_horizon(env, features));
    Ok(random_pairs(env, features, &policies, n, horizon, &mut rng)?
        .into_iter()
        .map(|(a, b)| (a.features, b.features))
        .collect())
}
