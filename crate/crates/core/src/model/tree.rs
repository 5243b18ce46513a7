use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::ValidationReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeNode {
    pub id: usize,
    pub name: String,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
    #[serde(default)]
    pub embedding: Option<Vec<f64>>,
}

/// A single-rooted tag taxonomy. Node ids are dense indices into `nodes`.
///
/// The struct is plain data so that malformed trees can be represented and
/// diagnosed; use [`validate_tree`] before relying on any structural property.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagTree {
    pub nodes: Vec<TreeNode>,
}

impl TagTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> Option<usize> {
        self.nodes.iter().find(|n| n.parent.is_none()).map(|n| n.id)
    }

    /// Leaf node ids in ascending id order. Leaf index `j` throughout the
    /// crate refers to position `j` in this list.
    pub fn leaf_ids(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.children.is_empty())
            .map(|n| n.id)
            .collect()
    }

    /// Maps node id to its leaf index, `None` for internal nodes.
    pub fn leaf_positions(&self) -> Vec<Option<usize>> {
        let mut pos = vec![None; self.nodes.len()];
        for (j, id) in self.leaf_ids().into_iter().enumerate() {
            pos[id] = Some(j);
        }
        pos
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Number of undirected tree neighbors (parent plus children).
    pub fn degree(&self, id: usize) -> usize {
        let n = &self.nodes[id];
        n.children.len() + usize::from(n.parent.is_some())
    }

    /// Node ids from the root down to `id`, inclusive.
    pub fn path_from_root(&self, id: usize) -> Vec<usize> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Looks a node up by name, preferring a leaf when names repeat across
    /// levels (internal nodes inherit member names).
    pub fn find_by_name(&self, name: &str) -> Option<usize> {
        let mut found = None;
        for n in &self.nodes {
            if n.name == name {
                if n.children.is_empty() {
                    return Some(n.id);
                }
                found.get_or_insert(n.id);
            }
        }
        found
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_tree(self);
        if report.has_errors() {
            return Err(Error::InvalidTree(report));
        }
        Ok(())
    }
}

pub fn validate_tree(tree: &TagTree) -> ValidationReport {
    validate_tree_with_limit(tree, None)
}

/// Checks every structural invariant of a [`TagTree`]; `depth_limit`, when
/// given, bounds the deepest node.
pub fn validate_tree_with_limit(tree: &TagTree, depth_limit: Option<usize>) -> ValidationReport {
    let mut report = ValidationReport::new();
    let n = tree.nodes.len();
    if n == 0 {
        report.error("tree", "node list is empty");
        return report;
    }

    let mut ids_ok = true;
    for (i, node) in tree.nodes.iter().enumerate() {
        if node.id != i {
            report.error(
                format!("nodes[{i}]"),
                format!("id {} does not match position {i}", node.id),
            );
            ids_ok = false;
        }
    }
    if !ids_ok {
        return report;
    }

    let mut refs_ok = true;
    for node in &tree.nodes {
        let loc = format!("node {}", node.id);
        if let Some(p) = node.parent {
            if p >= n {
                report.error(&loc, format!("parent {p} out of range"));
                refs_ok = false;
            } else if p == node.id {
                report.error(&loc, "node is its own parent");
                refs_ok = false;
            }
        }
        let mut seen = HashSet::new();
        for &c in &node.children {
            if c >= n {
                report.error(&loc, format!("child {c} out of range"));
                refs_ok = false;
            } else if !seen.insert(c) {
                report.error(&loc, format!("child {c} listed twice"));
                refs_ok = false;
            }
        }
    }
    if !refs_ok {
        return report;
    }

    let roots: Vec<usize> = tree
        .nodes
        .iter()
        .filter(|n| n.parent.is_none())
        .map(|n| n.id)
        .collect();
    match roots.len() {
        0 => report.error("tree", "no root (every node has a parent)"),
        1 => {}
        _ => report.error("tree", format!("multiple roots: {roots:?}")),
    }

    for node in &tree.nodes {
        for &c in &node.children {
            let cp = tree.nodes[c].parent;
            if cp != Some(node.id) {
                report.error(
                    format!("node {}", node.id),
                    format!("lists child {c} whose parent is {cp:?}"),
                );
            }
        }
        if let Some(p) = node.parent {
            if !tree.nodes[p].children.contains(&node.id) {
                report.error(
                    format!("node {}", node.id),
                    format!("parent {p} does not list it as a child"),
                );
            }
        }
    }

    if roots.len() == 1 {
        let root = roots[0];
        let mut visited = vec![false; n];
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(u) = queue.pop_front() {
            for &c in &tree.nodes[u].children {
                if visited[c] {
                    report.error(format!("node {c}"), "reached twice (cycle or shared child)");
                    continue;
                }
                visited[c] = true;
                queue.push_back(c);
            }
        }
        let unreachable: Vec<usize> = (0..n).filter(|&i| !visited[i]).collect();
        if !unreachable.is_empty() {
            report.error(
                "tree",
                format!("nodes unreachable from root (cycle): {unreachable:?}"),
            );
        }

        if tree.nodes[root].depth != 0 {
            report.error(format!("node {root}"), "root depth must be 0");
        }
    }

    for node in &tree.nodes {
        if let Some(p) = node.parent {
            if node.depth != tree.nodes[p].depth + 1 {
                report.error(
                    format!("node {}", node.id),
                    format!(
                        "depth {} but parent depth is {}",
                        node.depth, tree.nodes[p].depth
                    ),
                );
            }
        }
        if let Some(limit) = depth_limit {
            if node.depth > limit {
                report.error(
                    format!("node {}", node.id),
                    format!("depth {} exceeds limit {limit}", node.depth),
                );
            }
        }
    }

    let mut dim = None;
    for node in &tree.nodes {
        if let Some(e) = &node.embedding {
            let loc = format!("node {}", node.id);
            if e.iter().any(|x| !x.is_finite()) {
                report.error(&loc, "embedding has non-finite component");
            }
            match dim {
                None => dim = Some(e.len()),
                Some(d) if d != e.len() => report.error(
                    &loc,
                    format!("embedding dimension {} differs from {d}", e.len()),
                ),
                _ => {}
            }
        }
    }

    let mut leaf_names = HashSet::new();
    for node in tree.nodes.iter().filter(|n| n.children.is_empty()) {
        if !leaf_names.insert(node.name.as_str()) {
            report.error(
                format!("node {}", node.id),
                format!("duplicate leaf name `{}`", node.name),
            );
        }
    }

    report
}
