//! Small dense vector helpers. Matrices here are at most a few hundred rows by
//! `k` columns, so plain `Vec`s are enough.

use crate::Scalar;

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn sub<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn scale<T: Scalar>(a: &[T], c: T) -> Vec<T> {
    a.iter().map(|&x| x * c).collect()
}

/// Unit vector in the direction of `a`, or `None` for a (numerically) zero vector.
pub fn normalized<T: Scalar>(a: &[T]) -> Option<Vec<T>> {
    let n = norm(a);
    if !n.is_finite() || n <= T::tol(1e-12, T::one()) {
        return None;
    }
    Some(scale(a, T::one() / n))
}

/// `1 - cos(a, b)`; both inputs are assumed nonzero.
pub fn cosine_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    T::one() - dot(a, b) / (norm(a) * norm(b))
}

pub fn max_abs<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

/// Incrementally maintained orthonormal basis of a row space (modified
/// Gram-Schmidt with re-orthogonalization).
#[derive(Clone, Debug)]
pub struct RowBasis<T> {
    dim: usize,
    tol: T,
    rows: Vec<Vec<T>>,
}

impl<T: Scalar> RowBasis<T> {
    pub fn new(dim: usize, tol: T) -> Self {
        Self {
            dim,
            tol,
            rows: Vec::new(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.rows
    }

    /// Component of `v` orthogonal to the current basis.
    pub fn residual(&self, v: &[T]) -> Vec<T> {
        let mut r = v.to_vec();
        for _ in 0..2 {
            for b in &self.rows {
                let c = dot(&r, b);
                for (ri, &bi) in r.iter_mut().zip(b) {
                    *ri -= c * bi;
                }
            }
        }
        r
    }

    /// Adds `v` if it is independent of the basis (residual norm above the
    /// tolerance, relative to `max(1, |v|)`). Returns whether it was added.
    pub fn try_push(&mut self, v: &[T]) -> bool {
        debug_assert_eq!(v.len(), self.dim);
        if self.rows.len() == self.dim {
            return false;
        }
        let r = self.residual(v);
        let rn = norm(&r);
        if rn <= self.tol * norm(v).max(T::one()) {
            return false;
        }
        self.rows.push(scale(&r, T::one() / rn));
        true
    }
}

/// Solves the square system `a x = b` by Gaussian elimination with partial
/// pivoting. `a` is row-major `n x n`. Returns `None` when singular.
pub fn solve_square<T: Scalar>(a: &[T], b: &[T], n: usize) -> Option<Vec<T>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let tiny = T::tol(1e-14, T::one());
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            m[i * n + col]
                .abs()
                .partial_cmp(&m[j * n + col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if m[pivot * n + col].abs() <= tiny {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                m.swap(pivot * n + j, col * n + j);
            }
            x.swap(pivot, col);
        }
        let p = m[col * n + col];
        for i in col + 1..n {
            let f = m[i * n + col] / p;
            if f == T::zero() {
                continue;
            }
            for j in col..n {
                let v = m[col * n + j];
                m[i * n + j] -= f * v;
            }
            let v = x[col];
            x[i] -= f * v;
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for j in col + 1..n {
            acc -= m[col * n + j] * x[j];
        }
        x[col] = acc / m[col * n + col];
    }
    Some(x)
}

/// Minimum-norm least-squares solution of `rows · w ≈ y`.
///
/// The row space is orthonormalized first (`rows = C V`), the reduced normal
/// equations `CᵀC z = Cᵀy` are solved, and `w = Vᵀ z`.
pub fn min_norm_least_squares<T: Scalar>(rows: &[Vec<T>], y: &[T], dim: usize, tol: T) -> Vec<T> {
    let mut basis = RowBasis::new(dim, tol);
    for r in rows {
        basis.try_push(r);
    }
    let r = basis.rank();
    if r == 0 {
        return vec![T::zero(); dim];
    }
    let c: Vec<Vec<T>> = rows
        .iter()
        .map(|row| basis.rows().iter().map(|b| dot(row, b)).collect())
        .collect();
    let mut gram = vec![T::zero(); r * r];
    let mut rhs = vec![T::zero(); r];
    for (ci, &yi) in c.iter().zip(y) {
        for p in 0..r {
            rhs[p] += ci[p] * yi;
            for q in 0..r {
                gram[p * r + q] += ci[p] * ci[q];
            }
        }
    }
    let z = solve_square(&gram, &rhs, r).unwrap_or_else(|| vec![T::zero(); r]);
    let mut w = vec![T::zero(); dim];
    for (zp, b) in z.iter().zip(basis.rows()) {
        for (wi, &bi) in w.iter_mut().zip(b) {
            *wi += *zp * bi;
        }
    }
    w
}
