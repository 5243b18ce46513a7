#![allow(dead_code)]

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tagforest::anchor::AnchoredRecord;
use tagforest::model::{TagTree, TreeNode};
use tagforest::objective::composite_score;
use tagforest::oracle::OracleItem;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tree from a parent list where every parent precedes its children.
pub fn from_parents(parents: &[Option<usize>]) -> TagTree {
    let mut nodes: Vec<TreeNode> = Vec::with_capacity(parents.len());
    for (i, &p) in parents.iter().enumerate() {
        let depth = p.map_or(0, |p| nodes[p].depth + 1);
        if let Some(p) = p {
            nodes[p].children.push(i);
        }
        nodes.push(TreeNode {
            id: i,
            name: format!("n{i}"),
            parent: p,
            children: Vec::new(),
            depth,
            embedding: None,
        });
    }
    TagTree { nodes }
}

/// Random recursive tree: node `i` attaches to a uniform earlier node.
pub fn random_tree(rng: &mut impl Rng, n: usize) -> TagTree {
    let parents: Vec<Option<usize>> = (0..n)
        .map(|i| (i > 0).then(|| rng.random_range(0..i)))
        .collect();
    from_parents(&parents)
}

/// Complete tree with the given fan-out per level.
pub fn balanced_tree(fanout: &[usize]) -> TagTree {
    let mut parents = vec![None];
    let mut level = vec![0usize];
    for &f in fanout {
        let mut next = Vec::with_capacity(level.len() * f);
        for &p in &level {
            for _ in 0..f {
                next.push(parents.len());
                parents.push(Some(p));
            }
        }
        level = next;
    }
    from_parents(&parents)
}

/// Anchored records with 1..=max_leaves distinct random leaves and uniform
/// quality and complexity.
pub fn random_pool(rng: &mut impl Rng, tree: &TagTree, n: usize, max_leaves: usize) -> Vec<AnchoredRecord> {
    let leaves = tree.leaf_ids();
    (0..n)
        .map(|i| {
            let k = rng.random_range(1..=max_leaves.min(leaves.len()));
            let mut picked: Vec<usize> = sample(rng, leaves.len(), k).iter().map(|j| leaves[j]).collect();
            picked.sort_unstable();
            AnchoredRecord {
                id: format!("x{i:06}"),
                leaves: picked,
                dropped: Vec::new(),
                quality: rng.random(),
                complexity: rng.random(),
            }
        })
        .collect()
}

pub fn oracle_items(pool: &[AnchoredRecord], alpha: f64) -> Vec<OracleItem> {
    pool.iter()
        .map(|r| OracleItem {
            leaves: r.leaves.clone(),
            score: composite_score(r.quality, r.complexity, alpha).unwrap(),
        })
        .collect()
}

/// Record whose composite score equals `score` for any alpha.
pub fn record(id: &str, leaves: &[usize], score: f64) -> AnchoredRecord {
    AnchoredRecord {
        id: id.into(),
        leaves: leaves.to_vec(),
        dropped: Vec::new(),
        quality: score,
        complexity: score,
    }
}

/// The 3-node tree: root 0 with leaves 1 (`l1`) and 2 (`l2`).
pub fn three_node() -> TagTree {
    let mut t = from_parents(&[None, Some(0), Some(0)]);
    t.nodes[0].name = "r".into();
    t.nodes[1].name = "l1".into();
    t.nodes[2].name = "l2".into();
    t
}
