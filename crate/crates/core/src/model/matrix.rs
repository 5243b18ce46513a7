//! Structural matrices derived from a validated [`TagTree`].
//!
//! The ancestry matrix marks, for each leaf, every node on its root path
//! (the leaf included). The propagation matrix spreads mass between tree
//! neighbors: row `p` holds `1 / (1 + deg(p))` on `p` itself and on each of
//! its undirected neighbors, so every row sums to one.

use crate::error::Result;
use crate::model::tree::TagTree;

/// Binary `|V| x |V_leaf|` matrix stored column-wise: column `j` lists the
/// node ids on the root-to-leaf path of leaf `j`, root first.
#[derive(Clone, Debug, PartialEq)]
pub struct AncestryMatrix {
    n_nodes: usize,
    leaf_nodes: Vec<usize>,
    columns: Vec<Vec<usize>>,
}

impl AncestryMatrix {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_nodes.len()
    }

    /// Node id of leaf index `j`.
    pub fn leaf_node(&self, j: usize) -> usize {
        self.leaf_nodes[j]
    }

    pub fn leaf_nodes(&self) -> &[usize] {
        &self.leaf_nodes
    }

    pub fn column(&self, j: usize) -> &[usize] {
        &self.columns[j]
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        u8::from(self.columns[j].contains(&i))
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    /// `M · h` for a binary leaf vector given by its support. Returns a
    /// sparse integer vector sorted by node id.
    pub fn propagate(&self, leaves: &[usize]) -> Vec<(usize, u32)> {
        let mut out: Vec<(usize, u32)> = Vec::new();
        for &j in leaves {
            for &i in &self.columns[j] {
                out.push((i, 1));
            }
        }
        out.sort_unstable_by_key(|&(i, _)| i);
        out.dedup_by(|later, kept| {
            if later.0 == kept.0 {
                kept.1 += later.1;
                true
            } else {
                false
            }
        });
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let mut m = vec![vec![0u8; self.n_leaves()]; self.n_nodes];
        for (j, col) in self.columns.iter().enumerate() {
            for &i in col {
                m[i][j] = 1;
            }
        }
        m
    }
}

pub fn build_ancestry_matrix(tree: &TagTree) -> Result<AncestryMatrix> {
    tree.ensure_valid()?;
    let leaf_nodes = tree.leaf_ids();
    let columns = leaf_nodes.iter().map(|&l| tree.path_from_root(l)).collect();
    Ok(AncestryMatrix {
        n_nodes: tree.len(),
        leaf_nodes,
        columns,
    })
}

/// Row-stochastic `|V| x |V|` matrix kept in both row and column form.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationMatrix {
    rows: Vec<Vec<(usize, f64)>>,
    cols: Vec<Vec<(usize, f64)>>,
}

impl PropagationMatrix {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Nonzeros of row `p`, sorted by column.
    pub fn row(&self, p: usize) -> &[(usize, f64)] {
        &self.rows[p]
    }

    /// Nonzeros of column `q`, sorted by row.
    pub fn col(&self, q: usize) -> &[(usize, f64)] {
        &self.cols[q]
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.rows[p]
            .binary_search_by_key(&q, |&(c, _)| c)
            .map(|k| self.rows[p][k].1)
            .unwrap_or(0.0)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// `(A x)_p` for one row against a dense vector.
    pub fn row_dot(&self, p: usize, x: &[f64]) -> f64 {
        self.rows[p].iter().map(|&(q, a)| a * x[q]).sum()
    }

    /// `A x` for a dense vector.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n()).map(|p| self.row_dot(p, x)).collect()
    }

    /// `yᵀ A` for a dense vector, reduced column by column in row order.
    pub fn transpose_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        self.cols
            .iter()
            .map(|col| col.iter().map(|&(p, a)| y[p] * a).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut m = vec![vec![0.0; n]; n];
        for (p, row) in self.rows.iter().enumerate() {
            for &(q, a) in row {
                m[p][q] = a;
            }
        }
        m
    }
}

pub fn build_propagation_matrix(tree: &TagTree) -> Result<PropagationMatrix> {
    tree.ensure_valid()?;
    let n = tree.len();
    let mut rows = Vec::with_capacity(n);
    for node in &tree.nodes {
        let mut pattern: Vec<usize> = node.children.clone();
        pattern.extend(node.parent);
        pattern.push(node.id);
        pattern.sort_unstable();
        let w = 1.0 / (1.0 + tree.degree(node.id) as f64);
        rows.push(pattern.into_iter().map(|q| (q, w)).collect::<Vec<_>>());
    }
    let mut cols = vec![Vec::new(); n];
    for (p, row) in rows.iter().enumerate() {
        for &(q, a) in row {
            cols[q].push((p, a));
        }
    }
    Ok(PropagationMatrix { rows, cols })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tree::fixtures::{node, three_node};
    use crate::model::tree::TagTree;

    #[test]
    fn ancestry_three_node() {
        let m = build_ancestry_matrix(&three_node()).unwrap();
        assert_eq!(m.to_dense(), vec![vec![1, 1], vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn ancestry_single_node() {
        let t = TagTree {
            nodes: vec![node(0, "x", None, &[], 0)],
        };
        assert_eq!(build_ancestry_matrix(&t).unwrap().to_dense(), vec![vec![1]]);
        let a = build_propagation_matrix(&t).unwrap();
        assert_eq!(a.to_dense(), vec![vec![1.0]]);
    }

    #[test]
    fn ancestry_chain() {
        let t = TagTree {
            nodes: vec![
                node(0, "r", None, &[1], 0),
                node(1, "m", Some(0), &[2], 1),
                node(2, "l", Some(1), &[], 2),
            ],
        };
        let m = build_ancestry_matrix(&t).unwrap();
        assert_eq!(m.n_leaves(), 1);
        assert_eq!(m.to_dense(), vec![vec![1], vec![1], vec![1]]);
    }

    #[test]
    fn propagation_three_node() {
        let a = build_propagation_matrix(&three_node()).unwrap().to_dense();
        let third = 1.0 / 3.0;
        assert_eq!(a[0], vec![third, third, third]);
        assert_eq!(a[1], vec![0.5, 0.5, 0.0]);
        assert_eq!(a[2], vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn propagation_star() {
        let k = 7;
        let mut nodes = vec![node(0, "r", None, &(1..=k).collect::<Vec<_>>(), 0)];
        for i in 1..=k {
            nodes.push(node(i, &format!("l{i}"), Some(0), &[], 1));
        }
        let a = build_propagation_matrix(&TagTree { nodes }).unwrap();
        for &(_, w) in a.row(0) {
            assert_eq!(w, 1.0 / (k as f64 + 1.0));
        }
        assert_eq!(a.row(0).len(), k + 1);
    }

    #[test]
    fn propagate_counts_shared_ancestors() {
        let m = build_ancestry_matrix(&three_node()).unwrap();
        assert_eq!(m.propagate(&[0]), vec![(0, 1), (1, 1)]);
        assert_eq!(m.propagate(&[0, 1]), vec![(0, 2), (1, 1), (2, 1)]);
    }

    #[test]
    fn invalid_tree_rejected() {
        let mut t = three_node();
        t.nodes[1].parent = None;
        assert!(build_ancestry_matrix(&t).is_err());
        assert!(build_propagation_matrix(&t).is_err());
    }
}
