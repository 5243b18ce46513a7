//! Brute-force reference implementations used to check the engine.
//!
//! Everything here works on dense matrices rebuilt from the tree's parent
//! pointers on every call. Nothing is shared with the sparse engine paths in
//! `model`, `objective` or `sampler`.

use crate::error::{Error, Result};
use crate::model::TagTree;

/// One pool item: its active leaves (node ids) and composite score.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleItem {
    pub leaves: Vec<usize>,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleParams {
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl OracleParams {
    pub fn general(gamma: f64) -> Self {
        Self {
            gamma,
            lambda: 0.0,
            epsilon: 1e-9,
        }
    }
}

fn is_leaf(tree: &TagTree, i: usize) -> bool {
    !tree.nodes.iter().any(|n| n.parent == Some(i))
}

fn leaves_in_order(tree: &TagTree) -> Vec<usize> {
    (0..tree.nodes.len()).filter(|&i| is_leaf(tree, i)).collect()
}

fn is_ancestor_or_self(tree: &TagTree, i: usize, j: usize) -> bool {
    let mut cur = Some(j);
    while let Some(c) = cur {
        if c == i {
            return true;
        }
        cur = tree.nodes[c].parent;
    }
    false
}

fn adjacent(tree: &TagTree, p: usize, q: usize) -> bool {
    tree.nodes[q].parent == Some(p) || tree.nodes[p].parent == Some(q)
}

pub fn dense_ancestry(tree: &TagTree) -> Vec<Vec<f64>> {
    let leaves = leaves_in_order(tree);
    (0..tree.nodes.len())
        .map(|i| {
            leaves
                .iter()
                .map(|&j| if is_ancestor_or_self(tree, i, j) { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

pub fn dense_propagation(tree: &TagTree) -> Vec<Vec<f64>> {
    let n = tree.nodes.len();
    let mut a = vec![vec![0.0; n]; n];
    for p in 0..n {
        let mut degree = 0.0;
        for j in 0..n {
            if j != p && adjacent(tree, p, j) {
                degree += 1.0;
            }
        }
        for q in 0..n {
            let link = if q == p || adjacent(tree, p, q) { 1.0 } else { 0.0 };
            a[p][q] = link / (1.0 + degree);
        }
    }
    a
}

/// Dense mirror of the engine's running state, rebuilt on every call.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseState {
    pub raw: Vec<f64>,
    pub accumulated: Vec<f64>,
    pub leaf_counts: Vec<f64>,
}

impl DenseState {
    pub fn compute(tree: &TagTree, items: &[&OracleItem]) -> Self {
        let m = dense_ancestry(tree);
        let a = dense_propagation(tree);
        let leaves = leaves_in_order(tree);
        let n = tree.nodes.len();
        let mut raw = vec![0.0; n];
        let mut leaf_counts = vec![0.0; leaves.len()];
        for item in items {
            let mut h_leaf = vec![0.0; leaves.len()];
            for (k, &l) in leaves.iter().enumerate() {
                if item.leaves.contains(&l) {
                    h_leaf[k] = 1.0;
                }
            }
            for (k, h) in h_leaf.iter().enumerate() {
                leaf_counts[k] += h;
            }
            for i in 0..n {
                let h_tree: f64 = (0..leaves.len()).map(|k| m[i][k] * h_leaf[k]).sum();
                raw[i] += item.score * h_tree;
            }
        }
        let accumulated = (0..n).map(|p| (0..n).map(|q| a[p][q] * raw[q]).sum()).collect();
        Self {
            raw,
            accumulated,
            leaf_counts,
        }
    }
}

pub fn exact_information(tree: &TagTree, subset: &[&OracleItem], gamma: f64) -> f64 {
    DenseState::compute(tree, subset)
        .accumulated
        .iter()
        .map(|&x| if x > 0.0 { x.powf(gamma) } else { 0.0 })
        .sum()
}

pub fn exact_marginal_gain(tree: &TagTree, subset: &[&OracleItem], candidate: &OracleItem, gamma: f64) -> f64 {
    let mut with: Vec<&OracleItem> = subset.to_vec();
    with.push(candidate);
    exact_information(tree, &with, gamma) - exact_information(tree, subset, gamma)
}

/// `KL(Q || P)` with `P` the epsilon-smoothed leaf histogram of `subset`.
/// `target` is dense over leaves in ascending node-id order.
pub fn exact_kl(tree: &TagTree, subset: &[&OracleItem], target: &[f64], epsilon: f64) -> f64 {
    let counts = DenseState::compute(tree, subset).leaf_counts;
    let smoothed: Vec<f64> = counts.iter().map(|c| c + epsilon).collect();
    let z: f64 = smoothed.iter().sum();
    let mut kl = 0.0;
    for (q, c) in target.iter().zip(&smoothed) {
        if *q > 0.0 {
            kl += q * (q / (c / z)).ln();
        }
    }
    kl
}

fn objective_value(tree: &TagTree, subset: &[&OracleItem], params: OracleParams, target: Option<&[f64]>) -> f64 {
    let info = exact_information(tree, subset, params.gamma);
    match target {
        Some(q) if params.lambda > 0.0 => info - params.lambda * exact_kl(tree, subset, q, params.epsilon),
        _ => info,
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub const EXHAUSTIVE_LIMIT: f64 = 1e6;

/// Best subset of exactly `budget` items under `I - lambda * KL`, as pool
/// indices in ascending order. Ties keep the lexicographically first subset.
pub fn exhaustive_optimum(
    tree: &TagTree,
    pool: &[OracleItem],
    budget: usize,
    params: OracleParams,
    target: Option<&[f64]>,
) -> Result<(Vec<usize>, f64)> {
    let n = pool.len();
    if budget > n {
        return Err(Error::Input(format!("budget {budget} exceeds pool size {n}")));
    }
    if binomial(n, budget) > EXHAUSTIVE_LIMIT {
        return Err(Error::Input(format!(
            "C({n}, {budget}) subsets exceeds the enumeration limit"
        )));
    }
    let mut idx: Vec<usize> = (0..budget).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let subset: Vec<&OracleItem> = idx.iter().map(|&i| &pool[i]).collect();
        let v = objective_value(tree, &subset, params, target);
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((idx.clone(), v));
        }
        // Advance to the next combination in lexicographic order.
        let mut k = budget;
        loop {
            if k == 0 {
                return Ok(best.expect("at least one subset"));
            }
            k -= 1;
            if idx[k] < n - budget + k {
                idx[k] += 1;
                for t in k + 1..budget {
                    idx[t] = idx[t - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Joint values this close are ties; dense sums taken in different orders
/// differ by round-off even when the exact values are equal.
const TIE_TOLERANCE: f64 = 1e-12;

/// Greedy selection by exact marginal gain minus `lambda * KL` of the
/// extended set. Ties go to the higher score, then the lower index.
pub fn greedy_exact(
    tree: &TagTree,
    pool: &[OracleItem],
    budget: usize,
    params: OracleParams,
    target: Option<&[f64]>,
) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..budget.min(pool.len()) {
        let subset: Vec<&OracleItem> = chosen.iter().map(|&i| &pool[i]).collect();
        let mut best: Option<(usize, f64)> = None;
        for (i, item) in pool.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let mut joint = exact_marginal_gain(tree, &subset, item, params.gamma);
            if let Some(q) = target {
                if params.lambda > 0.0 {
                    let mut with = subset.clone();
                    with.push(item);
                    joint -= params.lambda * exact_kl(tree, &with, q, params.epsilon);
                }
            }
            let replace = match best {
                None => true,
                Some((b, bj)) => {
                    let tol = TIE_TOLERANCE * bj.abs().max(1.0);
                    joint > bj + tol || ((joint - bj).abs() <= tol && item.score > pool[b].score)
                }
            };
            if replace {
                best = Some((i, joint));
            }
        }
        chosen.push(best.expect("candidate available").0);
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tree::fixtures::three_node;

    #[test]
    fn dense_matrices_three_node() {
        let t = three_node();
        assert_eq!(dense_ancestry(&t), vec![vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let a = dense_propagation(&t);
        assert_eq!(a[1], vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn information_examples() {
        let t = three_node();
        assert_eq!(exact_information(&t, &[], 0.85), 0.0);
        let item = OracleItem { leaves: vec![1], score: 1.0 };
        let i = exact_information(&t, &[&item], 0.85);
        assert!((i - 2.263_256_310_138_457_8).abs() < 1e-12);
    }

    #[test]
    fn duplicate_gain_is_concave() {
        let t = three_node();
        let item = OracleItem { leaves: vec![1], score: 0.8 };
        let single = exact_information(&t, &[&item], 0.85);
        let gain = exact_marginal_gain(&t, &[&item], &item, 0.85);
        assert!(gain > 0.0 && gain < single);
        let zero = OracleItem { leaves: vec![2], score: 0.0 };
        assert_eq!(exact_marginal_gain(&t, &[&item], &zero, 0.85), 0.0);
    }

    #[test]
    fn exhaustive_edges() {
        let t = three_node();
        let pool = vec![
            OracleItem { leaves: vec![1], score: 0.4 },
            OracleItem { leaves: vec![2], score: 0.6 },
        ];
        let p = OracleParams::general(0.85);
        assert_eq!(exhaustive_optimum(&t, &pool, 0, p, None).unwrap(), (vec![], 0.0));
        assert_eq!(exhaustive_optimum(&t, &pool, 2, p, None).unwrap().0, vec![0, 1]);
        assert!(exhaustive_optimum(&t, &vec![pool[0].clone(); 40], 20, p, None).is_err());
    }

    #[test]
    fn kl_point_mass() {
        let t = three_node();
        let items = [OracleItem { leaves: vec![1], score: 1.0 }, OracleItem { leaves: vec![2], score: 1.0 }];
        let refs: Vec<&OracleItem> = items.iter().collect();
        let kl = exact_kl(&t, &refs, &[1.0, 0.0], 1e-9);
        assert!((kl - std::f64::consts::LN_2).abs() < 1e-8);
    }
}
