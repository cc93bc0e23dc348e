//! Random-walk Metropolis-Hastings on the unit sphere under a logistic
//! preference likelihood.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Scalar;

#[derive(Clone, Debug)]
pub struct SamplerOptions {
    pub steps: usize,
    /// Fraction of `steps` discarded as burn-in (proposal scale adapts there).
    pub burn_in: f64,
    pub temperature: f64,
    pub initial_scale: f64,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            steps: 20_000,
            burn_in: 0.5,
            temperature: 1.0,
            initial_scale: 0.5,
        }
    }
}

/// `log σ(x)` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_likelihood(w: &[f64], normals: &[Vec<f64>], temperature: f64) -> f64 {
    normals
        .iter()
        .map(|d| log_sigmoid(d.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / temperature))
        .sum()
}

fn unit<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub struct ChainOutput<T> {
    pub samples: Vec<Vec<T>>,
    /// Acceptance rate after burn-in.
    pub acceptance: f64,
    pub scale: f64,
}

/// Draws `m` unit-norm samples from `p(w) ∝ Π σ(w·d / temperature)` over the
/// sphere. With no normals the prior is sampled directly.
pub fn sample_posterior<T: Scalar, R: Rng + ?Sized>(
    k: usize,
    normals: &[Vec<T>],
    m: usize,
    start: Option<&[T]>,
    opts: &SamplerOptions,
    rng: &mut R,
) -> ChainOutput<T> {
    let to_t = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
    if normals.is_empty() {
        return ChainOutput {
            samples: (0..m).map(|_| to_t(&unit(k, rng))).collect(),
            acceptance: 1.0,
            scale: 0.0,
        };
    }
    let normals: Vec<Vec<f64>> = normals.iter().map(|d| d.iter().map(|x| x.as_f64()).collect()).collect();
    let mut w: Vec<f64> = match start {
        Some(s) => {
            let v: Vec<f64> = s.iter().map(|x| x.as_f64()).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                v.into_iter().map(|x| x / n).collect()
            } else {
                unit(k, rng)
            }
        }
        None => unit(k, rng),
    };
    let mut ll = log_likelihood(&w, &normals, opts.temperature);
    let burn = ((opts.steps as f64) * opts.burn_in) as usize;
    let kept_steps = opts.steps.saturating_sub(burn).max(1);
    let thin = (kept_steps / m.max(1)).max(1);
    let mut scale = opts.initial_scale;
    let (mut window_acc, mut window) = (0usize, 0usize);
    let (mut acc_after, mut steps_after) = (0usize, 0usize);
    let mut samples = Vec::with_capacity(m);
    for step in 0..burn + kept_steps {
        let mut prop: Vec<f64> = w
            .iter()
            .map(|&x| {
                let z: f64 = StandardNormal.sample(rng);
                x + scale * z / (k as f64).sqrt()
            })
            .collect();
        let n = prop.iter().map(|x| x * x).sum::<f64>().sqrt();
        let accepted = if n > 1e-12 {
            prop.iter_mut().for_each(|x| *x /= n);
            let ll_prop = log_likelihood(&prop, &normals, opts.temperature);
            if rng.random::<f64>().ln() < ll_prop - ll {
                w = prop;
                ll = ll_prop;
                true
            } else {
                false
            }
        } else {
            false
        };
        if step < burn {
            window += 1;
            window_acc += accepted as usize;
            if window == 200 {
                let rate = window_acc as f64 / window as f64;
                if rate < 0.2 {
                    scale *= 0.7;
                } else if rate > 0.4 {
                    scale *= 1.4;
                }
                scale = scale.clamp(1e-4, 4.0);
                window = 0;
                window_acc = 0;
            }
        } else {
            steps_after += 1;
            acc_after += accepted as usize;
            if (step - burn) % thin == thin - 1 && samples.len() < m {
                samples.push(to_t(&w));
            }
        }
    }
    while samples.len() < m {
        samples.push(to_t(&w));
    }
    ChainOutput {
        samples,
        acceptance: acc_after as f64 / steps_after.max(1) as f64,
        scale,
    }
}

/// Mutual information between the answer to a query with normal `d` and the
/// reward, estimated over posterior samples.
pub fn information_gain<T: Scalar>(d: &[T], samples: &[Vec<T>], temperature: f64) -> f64 {
    let h = |p: f64| {
        let p = p.clamp(1e-15, 1.0 - 1e-15);
        -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
    };
    let ps: Vec<f64> = samples
        .iter()
        .map(|w| sigmoid(d.iter().zip(w).map(|(a, b)| a.as_f64() * b.as_f64()).sum::<f64>() / temperature))
        .collect();
    let n = ps.len().max(1) as f64;
    let mean = ps.iter().sum::<f64>() / n;
    let cond = ps.iter().map(|&p| h(p)).sum::<f64>() / n;
    (h(mean) - cond).max(0.0)
}
