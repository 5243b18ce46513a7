//! Bottom-up tag tree construction.
//!
//! Each round clusters the current level's nodes with k-means on
//! unit-normalized embeddings, refines the clusters, and promotes every
//! cluster to a parent node whose embedding is the mean of its members'.
//! Rounds stop at the depth limit or when one node remains; a synthetic root
//! joins whatever is left at the top.

pub mod kmeans;
pub mod refine;

use std::collections::{HashSet, VecDeque};

use crate::error::{Error, Result};
use crate::io::EmbeddingTable;
use crate::model::{validate_tree_with_limit, TagTree, TreeNode};
use crate::report::ValidationReport;
use crate::vector::{fallback_vector, mean, unit};

pub use kmeans::{kmeans, KMeans, KMeansParams};
pub use refine::{
    refine_clusters, ClusterLevel, ClusterView, DefaultRefiner, IdentityRefiner, LevelNodes, RefineFailure, Refiner,
    Topic,
};

pub const SYNTHETIC_ROOT: &str = "root";

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Branching {
    /// At most this many clusters per level; a level already that small is
    /// joined directly under the root.
    Clusters(usize),
    /// `ceil(n / ratio)` clusters for a level of `n` nodes.
    Ratio(f64),
}

impl Branching {
    fn clusters_for(&self, n: usize) -> Option<usize> {
        match *self {
            Branching::Clusters(k) => (n > k).then_some(k),
            Branching::Ratio(r) => Some(((n as f64 / r).ceil() as usize).clamp(1, n - 1)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RefinerKind {
    #[default]
    Default,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeBuildConfig {
    /// Maximum leaf depth (root at depth 0).
    pub depth_limit: usize,
    pub branching: Branching,
    pub seed: u64,
    pub kmeans_iters: usize,
    pub restarts: usize,
    pub refiner: RefinerKind,
}

impl Default for TreeBuildConfig {
    fn default() -> Self {
        Self {
            depth_limit: 10,
            branching: Branching::Ratio(10.0),
            seed: 0,
            kmeans_iters: 100,
            restarts: 3,
            refiner: RefinerKind::Default,
        }
    }
}

impl TreeBuildConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth_limit < 1 {
            return Err(Error::Config("depth limit must be at least 1".into()));
        }
        match self.branching {
            Branching::Clusters(0) => Err(Error::Config("branching cluster count must be at least 1".into())),
            Branching::Ratio(r) if !(r > 1.0 && r.is_finite()) => {
                Err(Error::Config(format!("branching ratio must exceed 1, got {r}")))
            }
            _ => Ok(()),
        }
    }
}

/// Runs k-means over one level and returns the unnamed partition.
pub fn cluster_level(nodes: &LevelNodes, k: usize, seed: u64, iters: usize) -> Result<ClusterLevel> {
    cluster_level_with(nodes, KMeansParams { k, seed, stream: 0, max_iters: iters, restarts: 1 })
}

fn cluster_level_with(nodes: &LevelNodes, params: KMeansParams) -> Result<ClusterLevel> {
    let km = kmeans(&nodes.vectors, params)?;
    let mut members = vec![Vec::new(); params.k];
    for (i, &c) in km.assignment.iter().enumerate() {
        members[c].push(i);
    }
    Ok(ClusterLevel::from_members(members, nodes))
}

struct ProtoNode {
    name: String,
    embedding: Vec<f64>,
    children: Vec<usize>,
}

/// Builds a tree whose leaves are exactly `tags`. Returns warnings for tags
/// that fell back to hashed vectors.
pub fn build_tree(tags: &[String], embeddings: &EmbeddingTable, config: &TreeBuildConfig) -> Result<(TagTree, ValidationReport)> {
    match config.refiner {
        RefinerKind::Default => build_tree_with(tags, embeddings, config, &DefaultRefiner),
        RefinerKind::Identity => build_tree_with(tags, embeddings, config, &IdentityRefiner),
    }
}

pub fn build_tree_with(
    tags: &[String],
    embeddings: &EmbeddingTable,
    config: &TreeBuildConfig,
    refiner: &dyn Refiner,
) -> Result<(TagTree, ValidationReport)> {
    config.validate()?;
    if tags.is_empty() {
        return Err(Error::Input("no tags to build a tree from".into()));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = tags.iter().find(|t| !seen.insert(t.as_str())) {
        return Err(Error::Input(format!("duplicate tag `{dup}`")));
    }

    let mut report = ValidationReport::new();
    let dim = embeddings.dimension();
    let leaves: Vec<ProtoNode> = tags
        .iter()
        .map(|t| {
            let embedding = match embeddings.get(t) {
                Some(e) => e.to_vec(),
                None => {
                    report.warn(format!("tag `{t}`"), "no embedding, using hashed fallback vector");
                    fallback_vector(t, dim)
                }
            };
            ProtoNode {
                name: t.clone(),
                embedding,
                children: Vec::new(),
            }
        })
        .collect();

    let mut levels: Vec<Vec<ProtoNode>> = vec![leaves];
    let mut round = 0;
    while levels[round].len() > 1 && round + 1 < config.depth_limit {
        let current = &levels[round];
        let Some(k) = config.branching.clusters_for(current.len()) else {
            break;
        };
        let nodes = LevelNodes {
            names: current.iter().map(|n| n.name.clone()).collect(),
            vectors: current.iter().map(|n| unit(&n.embedding)).collect(),
        };
        let params = KMeansParams {
            k,
            seed: config.seed,
            stream: round as u64,
            max_iters: config.kmeans_iters,
            restarts: config.restarts,
        };
        let level = refine_clusters(cluster_level_with(&nodes, params)?, &nodes, refiner)?;
        let parents: Vec<ProtoNode> = level
            .members
            .iter()
            .zip(level.names)
            .map(|(members, name)| ProtoNode {
                name,
                embedding: mean(members.iter().map(|&i| current[i].embedding.as_slice()), dim),
                children: members.clone(),
            })
            .collect();
        debug_assert!(parents.len() < current.len());
        levels.push(parents);
        round += 1;
    }

    let top = levels.len() - 1;
    if levels[top].len() > 1 {
        let current = &levels[top];
        let root = ProtoNode {
            name: SYNTHETIC_ROOT.to_string(),
            embedding: mean(current.iter().map(|n| n.embedding.as_slice()), dim),
            children: (0..current.len()).collect(),
        };
        levels.push(vec![root]);
    }

    let tree = finalize(levels);
    let check = validate_tree_with_limit(&tree, Some(config.depth_limit));
    if check.has_errors() {
        return Err(Error::InvalidTree(check));
    }
    Ok((tree, report))
}

/// Assigns breadth-first ids from the root down.
fn finalize(mut levels: Vec<Vec<ProtoNode>>) -> TagTree {
    let top = levels.len() - 1;
    let mut nodes: Vec<TreeNode> = Vec::new();
    // (level, index in level, parent id, depth)
    let mut queue = VecDeque::from([(top, 0usize, None::<usize>, 0usize)]);
    while let Some((lvl, idx, parent, depth)) = queue.pop_front() {
        let id = nodes.len();
        let proto = &mut levels[lvl][idx];
        nodes.push(TreeNode {
            id,
            name: std::mem::take(&mut proto.name),
            parent,
            children: Vec::new(),
            depth,
            embedding: Some(std::mem::take(&mut proto.embedding)),
        });
        if let Some(p) = parent {
            nodes[p].children.push(id);
        }
        for &c in &levels[lvl][idx].children {
            queue.push_back((lvl - 1, c, Some(id), depth + 1));
        }
    }
    TagTree { nodes }
}
