//! Tree-information objective.
//!
//! Each instance contributes `e = s * M h_leaf`, where `s` mixes quality and
//! complexity. A subset is worth `I(D) = sum_j phi((A sum_k e_k)_j)` with
//! `phi(x) = x^gamma`. Greedy selection ranks candidates by the first-order
//! gain `phi'(v)^T A e` and optionally subtracts `lambda * KL(Q || P)` over
//! leaf counts.

use crate::error::{Error, Result};
use crate::model::{AncestryMatrix, PropagationMatrix};

/// Sparse real vector over node ids, sorted by id.
pub type SparseVector = Vec<(usize, f64)>;

/// Floor applied to the accumulated mass before evaluating `phi'`.
pub const GRADIENT_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            gamma: 0.85,
            lambda: 0.0,
            epsilon: 1e-9,
        }
    }
}

impl ObjectiveConfig {
    /// Default aligned-sampling strength.
    pub const ALIGNED_LAMBDA: f64 = 5.0;

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0,1], got {}", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must be in (0,1), got {}", self.gamma)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

pub fn composite_score(quality: f64, complexity: f64, alpha: f64) -> Result<f64> {
    for (name, v) in [("quality", quality), ("complexity", complexity), ("alpha", alpha)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Input(format!("{name} {v} outside [0,1]")));
        }
    }
    Ok(alpha * quality + (1.0 - alpha) * complexity)
}

pub fn raw_info_vector(score: f64, h_tree: &[(usize, u32)]) -> SparseVector {
    h_tree.iter().map(|&(i, c)| (i, score * f64::from(c))).collect()
}

#[inline]
pub fn phi(x: f64, gamma: f64) -> f64 {
    if x > 0.0 {
        x.powf(gamma)
    } else {
        0.0
    }
}

#[inline]
pub fn phi_prime(x: f64, gamma: f64) -> f64 {
    gamma * x.max(GRADIENT_FLOOR).powf(gamma - 1.0)
}

/// `I` of the subset whose information vectors are given.
pub fn subset_information<'a>(
    vectors: impl IntoIterator<Item = &'a SparseVector>,
    a: &PropagationMatrix,
    gamma: f64,
) -> f64 {
    let mut raw = vec![0.0; a.n()];
    let mut support = Vec::new();
    for e in vectors {
        for &(q, x) in e {
            raw[q] += x;
            support.push(q);
        }
    }
    let rows = affected_rows(a, support);
    rows.into_iter().map(|p| phi(a.row_dot(p, &raw), gamma)).sum()
}

/// Rows of `A` with a nonzero in any of the given columns, sorted.
fn affected_rows(a: &PropagationMatrix, columns: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut rows: Vec<usize> = columns
        .into_iter()
        .flat_map(|q| a.col(q).iter().map(|&(p, _)| p))
        .collect();
    rows.sort_unstable();
    rows.dedup();
    rows
}

/// Running state of a selection: `raw = sum e_k`, `accumulated = A raw`,
/// and the leaf histogram.
///
/// Incremental updates recompute only the rows of `accumulated` touched by
/// the new vector, each with the same row reduction a from-scratch product
/// uses, so the two agree bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct InfoState {
    raw: Vec<f64>,
    accumulated: Vec<f64>,
    leaf_counts: Vec<u64>,
    total_leaf_mass: u64,
    size: usize,
}

impl InfoState {
    pub fn new(n_nodes: usize, n_leaves: usize) -> Self {
        Self {
            raw: vec![0.0; n_nodes],
            accumulated: vec![0.0; n_nodes],
            leaf_counts: vec![0; n_leaves],
            total_leaf_mass: 0,
            size: 0,
        }
    }

    /// Builds the state of a whole selection in one pass.
    pub fn from_selection<'a>(
        items: impl IntoIterator<Item = (&'a SparseVector, &'a [usize])>,
        n_leaves: usize,
        a: &PropagationMatrix,
    ) -> Self {
        let mut s = Self::new(a.n(), n_leaves);
        for (e, leaves) in items {
            for &(q, x) in e {
                s.raw[q] += x;
            }
            s.count_leaves(leaves);
            s.size += 1;
        }
        s.accumulated = a.mul_vec(&s.raw);
        s
    }

    pub fn add(&mut self, e: &SparseVector, leaves: &[usize], a: &PropagationMatrix) {
        for &(q, x) in e {
            self.raw[q] += x;
        }
        for p in affected_rows(a, e.iter().map(|&(q, _)| q)) {
            self.accumulated[p] = a.row_dot(p, &self.raw);
        }
        self.count_leaves(leaves);
        self.size += 1;
    }

    fn count_leaves(&mut self, leaves: &[usize]) {
        for &j in leaves {
            self.leaf_counts[j] += 1;
        }
        self.total_leaf_mass += leaves.len() as u64;
    }

    pub fn accumulated(&self) -> &[f64] {
        &self.accumulated
    }

    pub fn leaf_counts(&self) -> &[u64] {
        &self.leaf_counts
    }

    pub fn total_leaf_mass(&self) -> u64 {
        self.total_leaf_mass
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn information(&self, gamma: f64) -> f64 {
        self.accumulated.iter().map(|&x| phi(x, gamma)).sum()
    }
}

/// `G = phi'(v)^T A`. The empty state yields the zero vector, so the first
/// pick is decided by tie-breaking alone.
pub fn gradient_vector(state: &InfoState, a: &PropagationMatrix, gamma: f64) -> Vec<f64> {
    if state.is_empty() {
        return vec![0.0; a.n()];
    }
    let d: Vec<f64> = state.accumulated.iter().map(|&x| phi_prime(x, gamma)).collect();
    a.transpose_mul_vec(&d)
}

pub fn marginal_gain_approx(gradient: &[f64], e: &SparseVector) -> f64 {
    e.iter().map(|&(q, x)| gradient[q] * x).sum()
}

/// `M^T G`: the gradient summed along each leaf's root path, so a candidate's
/// approximate gain is its score times the sum over its active leaves.
pub fn leaf_gradient(gradient: &[f64], m: &AncestryMatrix) -> Vec<f64> {
    (0..m.n_leaves())
        .map(|j| m.column(j).iter().map(|&i| gradient[i]).sum())
        .collect()
}

/// Smoothed leaf distribution of the state with `extra` leaves added.
fn smoothed_mass(state: &InfoState, j: usize, extra: &[usize], epsilon: f64) -> f64 {
    state.leaf_counts[j] as f64 + f64::from(u8::from(extra.contains(&j))) + epsilon
}

/// `KL(Q || P(D_S ∪ {d}))` where `P` is the epsilon-smoothed histogram of the
/// selection plus the candidate's leaves. Only leaves with `Q_j > 0`
/// contribute.
pub fn kl_penalty(target: &[f64], state: &InfoState, candidate_leaves: &[usize], epsilon: f64) -> f64 {
    let z = state.total_leaf_mass as f64
        + candidate_leaves.len() as f64
        + epsilon * target.len() as f64;
    let kl: f64 = target
        .iter()
        .enumerate()
        .filter(|&(_, &q)| q > 0.0)
        .map(|(j, &q)| q * (q / (smoothed_mass(state, j, candidate_leaves, epsilon) / z)).ln())
        .sum();
    kl.max(0.0)
}

/// Per-iteration cache that scores the KL term of any candidate in time
/// proportional to its own leaf count.
pub struct KlScorer<'a> {
    target: &'a [f64],
    base: f64,
    target_mass: f64,
    bonus: Vec<f64>,
    total: f64,
    smoothing_mass: f64,
}

impl<'a> KlScorer<'a> {
    pub fn new(target: &'a [f64], state: &InfoState, epsilon: f64) -> Self {
        let mut base = 0.0;
        let mut target_mass = 0.0;
        let mut bonus = vec![0.0; target.len()];
        for (j, &q) in target.iter().enumerate() {
            if q > 0.0 {
                let c = state.leaf_counts[j] as f64;
                base += q * (q.ln() - (c + epsilon).ln());
                target_mass += q;
                bonus[j] = q * ((c + 1.0 + epsilon).ln() - (c + epsilon).ln());
            }
        }
        Self {
            target,
            base,
            target_mass,
            bonus,
            total: state.total_leaf_mass as f64,
            smoothing_mass: epsilon * target.len() as f64,
        }
    }

    pub fn score(&self, leaves: &[usize]) -> f64 {
        let gain: f64 = leaves.iter().map(|&j| self.bonus[j]).sum();
        let z = self.total + leaves.len() as f64 + self.smoothing_mass;
        (self.base - gain + self.target_mass * z.ln()).max(0.0)
    }

    pub fn target(&self) -> &[f64] {
        self.target
    }
}
