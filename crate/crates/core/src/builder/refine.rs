//! Four-step cluster refinement: summarize, deduplicate, reassign, rename.
//!
//! [`Refiner`] is the seam for alternative implementations (for example one
//! backed by a language model). [`DefaultRefiner`] is offline and
//! deterministic.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::vector::{mean, sq_dist};

/// Nodes of the level being clustered. Vectors are unit-normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelNodes {
    pub names: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl LevelNodes {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }
}

/// A partition of one level's nodes with a centroid and topic name per
/// cluster. Clusters are ordered by their smallest member.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterLevel {
    pub members: Vec<Vec<usize>>,
    pub centroids: Vec<Vec<f64>>,
    pub names: Vec<String>,
}

impl ClusterLevel {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub(crate) fn from_members(mut members: Vec<Vec<usize>>, nodes: &LevelNodes) -> Self {
        members.retain(|m| !m.is_empty());
        for m in &mut members {
            m.sort_unstable();
        }
        members.sort_by_key(|m| m[0]);
        let dim = nodes.dim();
        let centroids = members
            .iter()
            .map(|m| mean(m.iter().map(|&i| nodes.vectors[i].as_slice()), dim))
            .collect();
        let names = vec![String::new(); members.len()];
        Self {
            members,
            centroids,
            names,
        }
    }
}

pub struct ClusterView<'a> {
    pub index: usize,
    pub members: &'a [usize],
    pub centroid: &'a [f64],
    pub nodes: &'a LevelNodes,
}

impl ClusterView<'_> {
    /// Member nearest the centroid, lowest index on ties.
    pub fn medoid(&self) -> usize {
        let mut best = self.members[0];
        let mut best_d = f64::INFINITY;
        for &i in self.members {
            let d = sq_dist(&self.nodes.vectors[i], self.centroid);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

pub struct Topic<'a> {
    pub name: &'a str,
    pub centroid: &'a [f64],
}

#[derive(Debug)]
pub struct RefineFailure(pub String);

pub trait Refiner {
    fn summarize(&self, cluster: &ClusterView<'_>) -> Result<String, RefineFailure>;

    /// Returns a merge map: entry `i` is the index of the cluster that
    /// cluster `i` merges into (itself when kept).
    fn deduplicate(&self, names: &[String]) -> Result<Vec<usize>, RefineFailure>;

    /// Chooses the topic index a node belongs to.
    fn reassign(
        &self,
        node: usize,
        vector: &[f64],
        current: usize,
        topics: &[Topic<'_>],
    ) -> Result<usize, RefineFailure>;

    fn rename(&self, cluster: &ClusterView<'_>, name: &str) -> Result<String, RefineFailure>;
}

fn canonical(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn first_occurrence(names: &[String]) -> Vec<usize> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    names
        .iter()
        .enumerate()
        .map(|(i, n)| *seen.entry(canonical(n)).or_insert(i))
        .collect()
}

fn nearest_topic(vector: &[f64], topics: &[Topic<'_>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (t, topic) in topics.iter().enumerate() {
        let d = sq_dist(vector, topic.centroid);
        if d < best_d {
            best_d = d;
            best = t;
        }
    }
    best
}

/// Medoid names, case/whitespace-insensitive deduplication, nearest-centroid
/// reassignment, identity rename.
#[derive(Clone, Copy, Debug, Default)]
pub struct DefaultRefiner;

impl Refiner for DefaultRefiner {
    fn summarize(&self, cluster: &ClusterView<'_>) -> Result<String, RefineFailure> {
        Ok(cluster.nodes.names[cluster.medoid()].clone())
    }

    fn deduplicate(&self, names: &[String]) -> Result<Vec<usize>, RefineFailure> {
        Ok(first_occurrence(names))
    }

    fn reassign(&self, _node: usize, vector: &[f64], _current: usize, topics: &[Topic<'_>]) -> Result<usize, RefineFailure> {
        Ok(nearest_topic(vector, topics))
    }

    fn rename(&self, _cluster: &ClusterView<'_>, name: &str) -> Result<String, RefineFailure> {
        Ok(name.to_string())
    }
}

/// Names clusters by medoid and changes nothing else.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityRefiner;

impl Refiner for IdentityRefiner {
    fn summarize(&self, cluster: &ClusterView<'_>) -> Result<String, RefineFailure> {
        DefaultRefiner.summarize(cluster)
    }

    fn deduplicate(&self, names: &[String]) -> Result<Vec<usize>, RefineFailure> {
        Ok((0..names.len()).collect())
    }

    fn reassign(&self, _node: usize, _vector: &[f64], current: usize, _topics: &[Topic<'_>]) -> Result<usize, RefineFailure> {
        Ok(current)
    }

    fn rename(&self, _cluster: &ClusterView<'_>, name: &str) -> Result<String, RefineFailure> {
        Ok(name.to_string())
    }
}

fn failure(step: &'static str, location: String) -> impl FnOnce(RefineFailure) -> Error {
    move |RefineFailure(message)| Error::Refiner {
        step,
        location,
        message,
    }
}

fn views<'a>(level: &'a ClusterLevel, nodes: &'a LevelNodes) -> impl Iterator<Item = ClusterView<'a>> {
    level
        .members
        .iter()
        .zip(&level.centroids)
        .enumerate()
        .map(move |(index, (members, centroid))| ClusterView {
            index,
            members,
            centroid,
            nodes,
        })
}

pub fn refine_clusters(level: ClusterLevel, nodes: &LevelNodes, refiner: &dyn Refiner) -> Result<ClusterLevel> {
    let k = level.len();

    let mut names = Vec::with_capacity(k);
    for view in views(&level, nodes) {
        let loc = format!("cluster {}", view.index);
        names.push(refiner.summarize(&view).map_err(failure("summarize", loc))?);
    }

    let merge = refiner
        .deduplicate(&names)
        .map_err(failure("deduplicate", "all clusters".into()))?;
    if merge.len() != k || merge.iter().any(|&r| r >= k || merge[r] != r) {
        return Err(Error::Refiner {
            step: "deduplicate",
            location: "all clusters".into(),
            message: format!("invalid merge map {merge:?}"),
        });
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut topic_names: Vec<String> = Vec::new();
    let mut slot = vec![usize::MAX; k];
    for c in 0..k {
        let rep = merge[c];
        if slot[rep] == usize::MAX {
            slot[rep] = groups.len();
            groups.push(Vec::new());
            topic_names.push(names[rep].clone());
        }
        groups[slot[rep]].extend_from_slice(&level.members[c]);
    }
    let merged = ClusterLevel {
        centroids: groups
            .iter()
            .map(|g| mean(g.iter().map(|&i| nodes.vectors[i].as_slice()), nodes.dim()))
            .collect(),
        members: groups,
        names: topic_names,
    };

    let topics: Vec<Topic<'_>> = merged
        .names
        .iter()
        .zip(&merged.centroids)
        .map(|(name, centroid)| Topic { name, centroid })
        .collect();
    let mut reassigned: Vec<Vec<usize>> = vec![Vec::new(); merged.len()];
    for (t, members) in merged.members.iter().enumerate() {
        for &node in members {
            let to = refiner
                .reassign(node, &nodes.vectors[node], t, &topics)
                .map_err(failure("reassign", format!("cluster {t}")))?;
            if to >= topics.len() {
                return Err(Error::Refiner {
                    step: "reassign",
                    location: format!("cluster {t}"),
                    message: format!("node {node} assigned to unknown topic {to}"),
                });
            }
            reassigned[to].push(node);
        }
    }
    let kept: Vec<(Vec<usize>, String)> = reassigned
        .into_iter()
        .zip(merged.names)
        .filter(|(m, _)| !m.is_empty())
        .collect();
    let mut by_first: Vec<(Vec<usize>, String)> = kept
        .into_iter()
        .map(|(mut m, n)| {
            m.sort_unstable();
            (m, n)
        })
        .collect();
    by_first.sort_by_key(|(m, _)| m[0]);
    let (members, names): (Vec<_>, Vec<_>) = by_first.into_iter().unzip();
    let mut out = ClusterLevel::from_members(members, nodes);
    out.names = names;

    let mut final_names = Vec::with_capacity(out.len());
    for view in views(&out, nodes) {
        let loc = format!("cluster {}", view.index);
        final_names.push(
            refiner
                .rename(&view, &out.names[view.index])
                .map_err(failure("rename", loc))?,
        );
    }
    out.names = final_names;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes() -> LevelNodes {
        LevelNodes {
            names: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vectors: vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0], vec![0.1, 0.9]],
        }
    }

    struct FixedNames(Vec<&'static str>);

    impl Refiner for FixedNames {
        fn summarize(&self, c: &ClusterView<'_>) -> Result<String, RefineFailure> {
            Ok(self.0[c.index].to_string())
        }
        fn deduplicate(&self, names: &[String]) -> Result<Vec<usize>, RefineFailure> {
            DefaultRefiner.deduplicate(names)
        }
        fn reassign(&self, n: usize, v: &[f64], cur: usize, t: &[Topic<'_>]) -> Result<usize, RefineFailure> {
            IdentityRefiner.reassign(n, v, cur, t)
        }
        fn rename(&self, c: &ClusterView<'_>, name: &str) -> Result<String, RefineFailure> {
            DefaultRefiner.rename(c, name)
        }
    }

    struct Failing;

    impl Refiner for Failing {
        fn summarize(&self, c: &ClusterView<'_>) -> Result<String, RefineFailure> {
            if c.index == 1 {
                Err(RefineFailure("model timeout".into()))
            } else {
                Ok("ok".into())
            }
        }
        fn deduplicate(&self, names: &[String]) -> Result<Vec<usize>, RefineFailure> {
            IdentityRefiner.deduplicate(names)
        }
        fn reassign(&self, n: usize, v: &[f64], cur: usize, t: &[Topic<'_>]) -> Result<usize, RefineFailure> {
            IdentityRefiner.reassign(n, v, cur, t)
        }
        fn rename(&self, c: &ClusterView<'_>, name: &str) -> Result<String, RefineFailure> {
            IdentityRefiner.rename(c, name)
        }
    }

    #[test]
    fn colliding_names_merge() {
        let n = nodes();
        let level = ClusterLevel::from_members(vec![vec![0, 1], vec![2, 3]], &n);
        let out = refine_clusters(level, &n, &FixedNames(vec!["Linear Algebra", "linear  algebra"])).unwrap();
        assert_eq!(out.members, vec![vec![0, 1, 2, 3]]);
        assert_eq!(out.names, vec!["Linear Algebra"]);
    }

    #[test]
    fn misplaced_member_moves_to_nearest() {
        let n = nodes();
        let level = ClusterLevel::from_members(vec![vec![0, 1, 3], vec![2]], &n);
        let out = refine_clusters(level, &n, &DefaultRefiner).unwrap();
        assert_eq!(out.members, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn identity_refiner_keeps_partition_with_medoid_names() {
        let n = nodes();
        let level = ClusterLevel::from_members(vec![vec![0, 1, 3], vec![2]], &n);
        let out = refine_clusters(level.clone(), &n, &IdentityRefiner).unwrap();
        assert_eq!(out.members, level.members);
        // Centroid of {a, b, d} is nearest to b.
        assert_eq!(out.names, vec!["b", "c"]);
    }

    #[test]
    fn failure_names_step_and_cluster() {
        let n = nodes();
        let level = ClusterLevel::from_members(vec![vec![0, 1], vec![2, 3]], &n);
        let err = refine_clusters(level, &n, &Failing).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("summarize") && msg.contains("cluster 1"), "{msg}");
    }
}
