use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{Environment, FeatureMap, GridLayout, RewardWeights};
use crate::Scalar;

/// Discount used for generated grids.
pub const DEFAULT_GAMMA: f64 = 0.95;

/// Grid actions in index order.
pub const ACTION_NAMES: [&str; 4] = ["up", "down", "left", "right"];

/// Deterministic 4-action grid dynamics; off-grid moves stay put and
/// terminals absorb.
pub fn grid_environment<T: Scalar>(width: usize, height: usize, gamma: T, terminals: &[usize], start: Option<usize>) -> Result<Environment<T>> {
    if width == 0 || height == 0 {
        return Err(Error::Precondition("grid needs at least one cell".into()));
    }
    let n = width * height;
    let mut t = vec![T::zero(); n * 4 * n];
    for s in 0..n {
        let (x, y) = (s % width, s / width);
        for a in 0..4 {
            let next = if terminals.contains(&s) {
                s
            } else {
                match a {
                    0 if y > 0 => s - width,
                    1 if y + 1 < height => s + width,
                    2 if x > 0 => s - 1,
                    3 if x + 1 < width => s + 1,
                    _ => s,
                }
            };
            t[(s * 4 + a) * n + next] = T::one();
        }
    }
    let init = match start {
        Some(s0) => (0..n).map(|s| if s == s0 { T::one() } else { T::zero() }).collect(),
        None => vec![T::one() / T::of(n as f64); n],
    };
    Environment::new(n, 4, t, gamma, init, terminals.iter().copied())?.with_layout(GridLayout { width, height })
}

/// Random grid with one-hot color features, each color present at least once.
pub fn gen_random_gridworld<T: Scalar>(
    width: usize,
    height: usize,
    n_features: usize,
    seed: u64,
) -> Result<(Environment<T>, FeatureMap<T>)> {
    if n_features < 2 {
        return Err(Error::Precondition("need at least two features".into()));
    }
    let n = width * height;
    if n_features > n {
        return Err(Error::Precondition(format!(
            "{n_features} features do not fit in {n} cells"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<usize> = (0..n).collect();
    cells.shuffle(&mut rng);
    let mut labels = vec![0; n];
    for (i, &c) in cells.iter().enumerate() {
        labels[c] = if i < n_features { i } else { rng.random_range(0..n_features) };
    }
    let env = grid_environment(width, height, T::of(DEFAULT_GAMMA), &[], None)?;
    Ok((env, FeatureMap::one_hot(&labels, n_features)?))
}

/// A built-in case study: environment, features, tester reward and the color
/// names of the feature channels.
pub struct BuiltinEnv<T = f64> {
    pub env: Environment<T>,
    pub features: FeatureMap<T>,
    pub w: RewardWeights<T>,
    pub colors: [&'static str; 3],
}

const ISLAND: [&str; 4] = ["BBWWWW", "BWWWWW", "BWWWWG", "BBWWWW"];
const LAVA: [&str; 5] = ["WWWWWW", "WWRRWW", "WWRRWG", "WWRRWW", "WWWWWW"];

pub const BUILTIN_NAMES: [&str; 2] = ["island", "lava"];

/// `island`: green/white/blue with weights (50, -1, -50);
/// `lava`: green/white/red with the same weights.
pub fn builtin_env<T: Scalar>(name: &str) -> Result<BuiltinEnv<T>> {
    let (rows, colors, start): (&[&str], _, _) = match name {
        "island" => (&ISLAND, ["green", "white", "blue"], 7),
        "lava" => (&LAVA, ["green", "white", "red"], 12),
        other => return Err(Error::UnknownEnvironment(other.to_string())),
    };
    let (width, height) = (rows[0].len(), rows.len());
    let mut labels = Vec::with_capacity(width * height);
    let mut terminals = Vec::new();
    for row in rows {
        for ch in row.chars() {
            let l = match ch {
                'G' => 0,
                'W' => 1,
                _ => 2,
            };
            if l == 0 {
                terminals.push(labels.len());
            }
            labels.push(l);
        }
    }
    let env = grid_environment(width, height, T::of(DEFAULT_GAMMA), &terminals, Some(start))?;
    Ok(BuiltinEnv {
        env,
        features: FeatureMap::one_hot(&labels, 3)?,
        w: RewardWeights::new(vec![T::of(50.0), T::of(-1.0), T::of(-50.0)]),
        colors,
    })
}
