//! Tableau simplex for the bounded homogeneous-cone LP
//!
//! ```text
//! maximize  c·x   subject to  g·x >= 0 for every g in G,  -1 <= x_i <= 1
//! ```
//!
//! solved through its dual
//!
//! ```text
//! minimize  1·u + 1·v   subject to  -Gᵀλ + u - v = c,  λ, u, v >= 0
//! ```
//!
//! which has only `k` equality rows and a feasible starting basis (`u_i` or
//! `v_i` depending on the sign of `c_i`). Bland's rule guards against cycling
//! on the heavily degenerate origin vertex.

use crate::Scalar;

#[derive(Clone, Debug)]
pub struct ConeLpSolution<T> {
    /// Optimal objective `max c·x`.
    pub value: T,
    /// A maximizing `x`, recovered from the dual multipliers.
    pub x: Vec<T>,
    pub pivots: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LpError {
    IterationLimit(usize),
    Unbounded,
}

impl std::fmt::Display for LpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LpError::IterationLimit(n) => write!(f, "pivot limit of {n} reached"),
            LpError::Unbounded => write!(f, "dual reported unbounded (numerical breakdown)"),
        }
    }
}

pub fn maximize_over_cone<T: Scalar>(objective: &[T], constraints: &[&[T]]) -> Result<ConeLpSolution<T>, LpError> {
    let k = objective.len();
    let r = constraints.len();
    let n_cols = r + 2 * k;
    let width = n_cols + 1;
    let u_col = |i: usize| r + i;
    let v_col = |i: usize| r + k + i;
    let cost = |j: usize| if j < r { T::zero() } else { T::one() };

    let mut tab = vec![T::zero(); k * width];
    let mut basis = Vec::with_capacity(k);
    for i in 0..k {
        let sign = if objective[i] >= T::zero() { T::one() } else { -T::one() };
        let row = &mut tab[i * width..(i + 1) * width];
        for (j, g) in constraints.iter().enumerate() {
            row[j] = -g[i] * sign;
        }
        row[u_col(i)] = sign;
        row[v_col(i)] = -sign;
        row[n_cols] = objective[i] * sign;
        basis.push(if sign > T::zero() { u_col(i) } else { v_col(i) });
    }

    let eps = T::tol(1e-11, T::one());
    let max_pivots = 50 * (n_cols + k) + 1000;
    let mut pivots = 0;
    loop {
        // reduced costs rc_j = cost_j - Σ_i cost_{B_i} tab[i][j]
        let entering = (0..n_cols).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let mut rc = cost(j);
            for i in 0..k {
                rc -= cost(basis[i]) * tab[i * width + j];
            }
            rc < -eps
        });
        let Some(j) = entering else { break };
        let mut leave: Option<(usize, T)> = None;
        for i in 0..k {
            let a = tab[i * width + j];
            if a > eps {
                let ratio = tab[i * width + n_cols] / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - eps || ((ratio - lr).abs() <= eps && basis[i] < basis[li]) {
                            Some((i, ratio))
                        } else {
                            Some((li, lr))
                        }
                    }
                };
            }
        }
        let Some((p, _)) = leave else { return Err(LpError::Unbounded) };
        pivot(&mut tab, width, k, p, j);
        basis[p] = j;
        pivots += 1;
        if pivots > max_pivots {
            return Err(LpError::IterationLimit(max_pivots));
        }
    }

    let value: T = (0..k).map(|i| cost(basis[i]) * tab[i * width + n_cols]).sum();
    // x_i = 1 - rc(u_i)
    let x = (0..k)
        .map(|i| {
            let mut rc = T::one();
            for row in 0..k {
                rc -= cost(basis[row]) * tab[row * width + u_col(i)];
            }
            T::one() - rc
        })
        .collect();
    Ok(ConeLpSolution { value, x, pivots })
}

fn pivot<T: Scalar>(tab: &mut [T], width: usize, rows: usize, p: usize, j: usize) {
    let pv = tab[p * width + j];
    for c in 0..width {
        tab[p * width + c] /= pv;
    }
    for i in 0..rows {
        if i == p {
            continue;
        }
        let f = tab[i * width + j];
        if f == T::zero() {
            continue;
        }
        for c in 0..width {
            let v = tab[p * width + c];
            tab[i * width + c] -= f * v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_box_optimum_is_l1_norm() {
        let sol = maximize_over_cone(&[0.6f64, -0.8], &[]).unwrap();
        assert!((sol.value - 1.4).abs() < 1e-12);
        assert!((sol.x[0] - 1.0).abs() < 1e-12 && (sol.x[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadrant_blocks_negative_direction() {
        // x >= 0, y >= 0; maximize -(x + y) -> 0 at the origin
        let g1 = [1.0f64, 0.0];
        let g2 = [0.0f64, 1.0];
        let sol = maximize_over_cone(&[-1.0, -1.0], &[&g1, &g2]).unwrap();
        assert!(sol.value.abs() < 1e-12);
        // maximize -x subject to y >= 0 only: x = -1 reachable
        let sol = maximize_over_cone(&[-1.0, 0.0], &[&g2]).unwrap();
        assert!((sol.value - 1.0).abs() < 1e-12);
        assert!(sol.x[1] >= -1e-12);
    }

    #[test]
    fn witness_is_feasible_and_attains_value() {
        let g = [[1.0f64, 1.0, 0.0], [0.0, 1.0, -1.0], [0.5, -1.0, 1.0]];
        let rows: Vec<&[f64]> = g.iter().map(|r| r.as_slice()).collect();
        let c = [-1.0, 0.3, 0.2];
        let sol = maximize_over_cone(&c, &rows).unwrap();
        for r in &g {
            assert!(r.iter().zip(&sol.x).map(|(a, b)| a * b).sum::<f64>() >= -1e-9);
        }
        let attained: f64 = c.iter().zip(&sol.x).map(|(a, b)| a * b).sum();
        assert!((attained - sol.value).abs() < 1e-9);
        assert!(sol.x.iter().all(|x| x.abs() <= 1.0 + 1e-9));
    }
}
