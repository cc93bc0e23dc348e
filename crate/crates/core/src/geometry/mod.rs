//! Aligned Reward Polytope: strict half-space constraints `Δw > 0`, their
//! deduplication and LP-based minimization, and membership.

mod lp;

pub use lp::{maximize_over_cone, ConeLpSolution, LpError};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{solve_mdp, successor_features, Environment, FeatureMap, QSolution, RewardWeights};
use crate::Scalar;

/// Rows closer than this in cosine distance are treated as the same constraint.
pub const DEDUP_TOL: f64 = 1e-4;
/// A row is redundant when the LP cannot push it below zero by more than this.
pub const TOL_LP: f64 = 1e-7;
/// Margin for the strict inequalities `r·w > 0` on unit rows.
pub const TOL_STRICT: f64 = 1e-8;

/// Where a constraint came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Provenance {
    /// `Φ(s,a) - Φ(s,b)` with `a` optimal and `b` not.
    StateAction { state: usize, optimal: usize, alternative: usize },
    /// `Φ(ξ_first) - Φ(ξ_second)` for a preferred trajectory `first`.
    TrajectoryPair { first: usize, second: usize },
}

impl Provenance {
    pub fn state(&self) -> Option<usize> {
        match *self {
            Provenance::StateAction { state, .. } => Some(state),
            Provenance::TrajectoryPair { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Halfspace<T = f64> {
    pub normal: Vec<T>,
    pub provenance: Provenance,
}

/// The matrix `Δ`, one strict constraint per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "HalfspaceDoc<T>", try_from = "HalfspaceDoc<T>")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct HalfspaceSet<T = f64> {
    k: usize,
    rows: Vec<Halfspace<T>>,
    minimal: bool,
    degenerate: bool,
}

#[derive(Serialize, Deserialize)]
struct HalfspaceDoc<T> {
    k: usize,
    normals: Vec<Vec<T>>,
    provenance: Vec<Provenance>,
    #[serde(default)]
    minimal: bool,
}

impl<T: Scalar> From<HalfspaceSet<T>> for HalfspaceDoc<T> {
    fn from(set: HalfspaceSet<T>) -> Self {
        let (normals, provenance) = set.rows.into_iter().map(|h| (h.normal, h.provenance)).unzip();
        HalfspaceDoc {
            k: set.k,
            normals,
            provenance,
            minimal: set.minimal,
        }
    }
}

impl<T: Scalar> TryFrom<HalfspaceDoc<T>> for HalfspaceSet<T> {
    type Error = String;

    fn try_from(doc: HalfspaceDoc<T>) -> std::result::Result<Self, String> {
        if doc.normals.len() != doc.provenance.len() {
            return Err(format!(
                "{} normals but {} provenance entries",
                doc.normals.len(),
                doc.provenance.len()
            ));
        }
        let mut set = HalfspaceSet::new(doc.k);
        for (normal, provenance) in doc.normals.into_iter().zip(doc.provenance) {
            if normal.len() != doc.k {
                return Err(format!("normal of length {} in a k = {} set", normal.len(), doc.k));
            }
            if normal.iter().any(|x| !x.is_finite()) {
                return Err("non-finite normal".into());
            }
            set.push(normal, provenance);
        }
        set.minimal = doc.minimal;
        set.degenerate = set.rows.is_empty();
        Ok(set)
    }
}

impl<T: Scalar> HalfspaceSet<T> {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            rows: Vec::new(),
            minimal: false,
            degenerate: false,
        }
    }

    /// Appends a row unless it is zero or non-finite. Returns whether it was kept.
    pub fn push(&mut self, normal: Vec<T>, provenance: Provenance) -> bool {
        assert_eq!(normal.len(), self.k, "normal length");
        let n = linalg::norm(&normal);
        if !n.is_finite() || n <= T::tol(1e-12, T::one()) {
            return false;
        }
        self.rows.push(Halfspace { normal, provenance });
        self.minimal = false;
        true
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Halfspace<T>] {
        &self.rows
    }

    pub fn normals(&self) -> impl Iterator<Item = &[T]> {
        self.rows.iter().map(|h| h.normal.as_slice())
    }

    pub fn is_minimal(&self) -> bool {
        self.minimal
    }

    /// Set when the generating reward was trivial (every action optimal), so
    /// the test built from it accepts everything.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Same rows scaled to unit length.
    pub fn normalized(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .filter_map(|h| {
                linalg::normalized(&h.normal).map(|normal| Halfspace {
                    normal,
                    provenance: h.provenance,
                })
            })
            .collect();
        Self { rows, ..self.clone() }
    }

    /// Distinct provenance states in row order.
    pub fn provenance_states(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for s in self.rows.iter().filter_map(|h| h.provenance.state()) {
            if !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }

    /// Indices of rows that `w` fails to satisfy strictly (cosine margin `TOL_STRICT`).
    pub fn violations(&self, w: &[T]) -> Result<Vec<usize>> {
        if w.len() != self.k {
            return Err(Error::Dimension {
                what: "candidate weights",
                expected: self.k,
                got: w.len(),
            });
        }
        let Some(w_hat) = linalg::normalized(w) else {
            return Ok((0..self.rows.len()).collect());
        };
        let tol = T::of(TOL_STRICT);
        Ok(self
            .rows
            .iter()
            .enumerate()
            .filter(|(_, h)| linalg::dot(&h.normal, &w_hat) / linalg::norm(&h.normal) <= tol)
            .map(|(i, _)| i)
            .collect())
    }

    /// `w` satisfies every row strictly; `w = 0` never does unless the set is empty.
    pub fn contains(&self, w: &[T]) -> bool {
        if self.rows.is_empty() {
            return true;
        }
        self.violations(w).map(|v| v.is_empty()).unwrap_or(false)
    }

    fn with_rows(&self, rows: Vec<Halfspace<T>>, minimal: bool) -> Self {
        Self {
            k: self.k,
            rows,
            minimal,
            degenerate: self.degenerate,
        }
    }
}

/// One row per `(s, a, b)` with `a ∈ A_R(s)`, `b ∉ A_R(s)`, computed from the
/// successor features of the uniform-over-optimal-actions policy.
pub fn build_arp_delta<T: Scalar>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    w: &RewardWeights<T>,
) -> Result<HalfspaceSet<T>> {
    let sol = solve_mdp(env, features, w)?;
    build_arp_delta_from(env, features, &sol)
}

/// As [`build_arp_delta`] with an already solved MDP.
pub fn build_arp_delta_from<T: Scalar>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    sol: &QSolution<T>,
) -> Result<HalfspaceSet<T>> {
    let mut set = HalfspaceSet::new(features.k());
    if sol.is_trivial() {
        log::warn!("reward is trivial (every action optimal everywhere); ARP has no constraints");
        set.degenerate = true;
        return Ok(set);
    }
    let sf = successor_features(env, features, &sol.canonical_policy())?;
    for s in 0..env.n_states() {
        let opt = sol.optimal_set(s);
        for &a in opt {
            for b in (0..env.n_actions()).filter(|b| !opt.contains(b)) {
                let row = linalg::sub(sf.get(s, a), sf.get(s, b));
                set.push(
                    row,
                    Provenance::StateAction {
                        state: s,
                        optimal: a,
                        alternative: b,
                    },
                );
            }
        }
    }
    Ok(set)
}

/// Normalizes rows, drops zero rows and keeps the first of any group whose
/// cosine distance is below `DEDUP_TOL`.
pub fn dedup_halfspaces<T: Scalar>(set: &HalfspaceSet<T>) -> HalfspaceSet<T> {
    let tol = T::of(DEDUP_TOL);
    let mut kept: Vec<Halfspace<T>> = Vec::new();
    for h in set.normalized().rows {
        if kept.iter().all(|g| T::one() - linalg::dot(&g.normal, &h.normal) >= tol) {
            kept.push(h);
        }
    }
    set.with_rows(kept, false)
}

/// Drops every row implied by the others, in one ordered pass. Each surviving
/// row comes with an LP witness `x`: all other survivors have `r·x ≥ 0` while
/// the row itself has `r·x < 0`.
pub fn remove_redundant_with_witnesses<T: Scalar>(set: &HalfspaceSet<T>) -> Result<(HalfspaceSet<T>, Vec<Vec<T>>)> {
    let rows = set.normalized().rows;
    let tol = T::of(TOL_LP);
    let mut alive = vec![true; rows.len()];
    let mut witness: Vec<Option<Vec<T>>> = vec![None; rows.len()];
    for i in 0..rows.len() {
        let others: Vec<&[T]> = (0..rows.len())
            .filter(|&j| j != i && alive[j])
            .map(|j| rows[j].normal.as_slice())
            .collect();
        let objective: Vec<T> = rows[i].normal.iter().map(|&x| -x).collect();
        let sol = maximize_over_cone(&objective, &others).map_err(|e| Error::LpFailure {
            row: i,
            reason: e.to_string(),
        })?;
        if sol.value <= tol {
            alive[i] = false;
        } else {
            witness[i] = Some(sol.x);
        }
    }
    // Witnesses found before later rows were dropped stay valid: dropping
    // constraints only enlarges the feasible region.
    let mut kept = Vec::new();
    let mut witnesses = Vec::new();
    for (i, h) in rows.into_iter().enumerate() {
        if alive[i] {
            kept.push(h);
            witnesses.push(witness[i].take().expect("witness for kept row"));
        }
    }
    Ok((set.with_rows(kept, true), witnesses))
}

pub fn remove_redundant<T: Scalar>(set: &HalfspaceSet<T>) -> Result<HalfspaceSet<T>> {
    remove_redundant_with_witnesses(set).map(|(s, _)| s)
}

/// build → dedup → remove_redundant.
pub fn minimal_arp<T: Scalar>(
    env: &Environment<T>,
    features: &FeatureMap<T>,
    w: &RewardWeights<T>,
) -> Result<HalfspaceSet<T>> {
    let raw = build_arp_delta(env, features, w)?;
    remove_redundant(&dedup_halfspaces(&raw))
}

/// `Δw′ > 0` on unit rows with margin `TOL_STRICT`; `w′` is normalized first.
/// An empty set accepts everything (degenerate test).
pub fn arp_membership<T: Scalar>(set: &HalfspaceSet<T>, w_prime: &RewardWeights<T>) -> Result<bool> {
    if w_prime.len() != set.k() {
        return Err(Error::Dimension {
            what: "candidate weights",
            expected: set.k(),
            got: w_prime.len(),
        });
    }
    if set.is_empty() {
        log::warn!("membership against an empty constraint set: degenerate test accepts everything");
        return Ok(true);
    }
    Ok(set.violations(w_prime.as_slice())?.is_empty())
}

/// Random unit probes for cone comparisons. Half are uniform on the sphere;
/// the rest are Gaussian perturbations (at several scales) of the anchors,
/// which concentrates probes near the cones of interest.
pub fn sample_probes<T: Scalar, R: Rng + ?Sized>(k: usize, n: usize, anchors: &[Vec<T>], rng: &mut R) -> Vec<Vec<T>> {
    let mut out = Vec::with_capacity(n);
    let scales = [0.03, 0.1, 0.3, 1.0];
    for i in 0..n {
        let mut v: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        if !anchors.is_empty() && i % 2 == 1 {
            let anchor = &anchors[(i / 2) % anchors.len()];
            let a: Vec<f64> = anchor.iter().map(|x| x.as_f64()).collect();
            let an = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
            let sc = scales[(i / 2) % scales.len()];
            for (x, y) in v.iter_mut().zip(&a) {
                *x = y / an + sc * *x / (k as f64).sqrt();
            }
        }
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nv > 0.0 {
            out.push(v.iter().map(|x| T::of(x / nv)).collect());
        }
    }
    out
}

/// Probes accepted by `inner` but rejected by `outer` (empty iff containment
/// holds on the sample).
pub fn containment_violations<T: Scalar>(inner: &HalfspaceSet<T>, outer: &HalfspaceSet<T>, probes: &[Vec<T>]) -> Vec<usize> {
    probes
        .iter()
        .enumerate()
        .filter(|(_, p)| inner.contains(p) && !outer.contains(p))
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[&[f64]]) -> HalfspaceSet<f64> {
        let mut s = HalfspaceSet::new(rows[0].len());
        for (i, r) in rows.iter().enumerate() {
            s.push(r.to_vec(), Provenance::TrajectoryPair { first: i, second: i });
        }
        s
    }

    #[test]
    fn dedup_examples() {
        assert_eq!(dedup_halfspaces(&set(&[&[1.0, 0.0], &[1.0, 0.0]])).len(), 1);
        assert_eq!(dedup_halfspaces(&set(&[&[1.0, 0.0], &[2.0, 0.0]])).len(), 1);
        assert_eq!(dedup_halfspaces(&set(&[&[1.0, 0.0], &[0.0, 1.0]])).len(), 2);
        // opposite directions are distinct constraints
        assert_eq!(dedup_halfspaces(&set(&[&[1.0, 0.0], &[-1.0, 0.0]])).len(), 2);
    }

    #[test]
    fn zero_rows_never_stored() {
        let s = set(&[&[0.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn implied_row_removed() {
        let s = set(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let (m, wit) = remove_redundant_with_witnesses(&s).unwrap();
        assert_eq!(m.len(), 2);
        assert!(m.is_minimal());
        for (i, x) in wit.iter().enumerate() {
            assert!(linalg::dot(&m.rows()[i].normal, x) < 0.0);
        }
        let single = set(&[&[0.3, -0.7]]);
        assert_eq!(remove_redundant(&single).unwrap().len(), 1);
    }

    #[test]
    fn membership_basics() {
        let s = set(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(arp_membership(&s, &RewardWeights::new(vec![1.0, 1.0])).unwrap());
        assert!(!arp_membership(&s, &RewardWeights::new(vec![0.0, 0.0])).unwrap());
        assert!(!arp_membership(&s, &RewardWeights::new(vec![1.0, 0.0])).unwrap());
        assert!(arp_membership(&HalfspaceSet::<f64>::new(2), &RewardWeights::zeros(2)).unwrap());
        assert!(arp_membership(&s, &RewardWeights::new(vec![1.0])).is_err());
    }

    #[test]
    fn json_shape() {
        let s = set(&[&[1.0, 0.0]]);
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert!(v.get("normals").is_some() && v.get("provenance").is_some());
        let back: HalfspaceSet<f64> = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }
}
