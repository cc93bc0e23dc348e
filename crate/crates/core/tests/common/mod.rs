#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vav_core::mdp::{Environment, FeatureMap, Policy};

/// Random stochastic environment with up to `max_succ` successors per pair.
pub fn random_env(n: usize, m: usize, max_succ: usize, gamma: f64, seed: u64) -> Environment<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = vec![0.0; n * m * n];
    for s in 0..n {
        for a in 0..m {
            let succ = rng.random_range(1..=max_succ.min(n));
            let mut ws = vec![0.0; n];
            for _ in 0..succ {
                ws[rng.random_range(0..n)] += rng.random_range(0.1..1.0);
            }
            let z: f64 = ws.iter().sum();
            for (s2, w) in ws.iter().enumerate() {
                t[(s * m + a) * n + s2] = w / z;
            }
        }
    }
    Environment::new(n, m, t, gamma, vec![1.0 / n as f64; n], []).unwrap()
}

pub fn random_features(n: usize, k: usize, seed: u64) -> FeatureMap<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMap::new((0..n).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()).unwrap()
}

pub fn random_policy(n: usize, m: usize, seed: u64) -> Policy<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Policy::new(
        (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
                let z: f64 = v.iter().sum();
                v.iter().map(|x| x / z).collect()
            })
            .collect(),
    )
    .unwrap()
}

/// Dense Gaussian elimination with partial pivoting, `a` row-major `n × n`.
pub fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Vec<f64> {
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs())).unwrap();
        for j in 0..n {
            a.swap(c * n + j, p * n + j);
        }
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r * n + c] / a[c * n + c];
            for j in c..n {
                a[r * n + j] -= f * a[c * n + j];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|j| a[r * n + j] * x[j]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    x
}

/// `V^π = (I - γ P_π)^{-1} R` by direct solve.
pub fn dense_policy_values(env: &Environment<f64>, rewards: &[f64], policy: &Policy<f64>) -> Vec<f64> {
    let n = env.n_states();
    let g = env.gamma();
    let mut a = vec![0.0; n * n];
    for s in 0..n {
        a[s * n + s] += 1.0;
        if env.is_terminal(s) {
            a[s * n + s] -= g;
            continue;
        }
        for act in 0..env.n_actions() {
            let p = policy.prob(s, act);
            for &(s2, q) in env.successors(s, act) {
                a[s * n + s2] -= g * p * q;
            }
        }
    }
    dense_solve(a, rewards.to_vec(), n)
}
