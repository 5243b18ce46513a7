//! Maps instance tags onto tree leaves and derives activation profiles.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::EmbeddingTable;
use crate::model::{build_ancestry_matrix, AncestryMatrix, Instance, TagTree};
use crate::report::ValidationReport;
use crate::vector::{dot, fallback_vector, unit};

pub const DEFAULT_MIN_SIMILARITY: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagMatch {
    pub tag: String,
    /// Node id of the matched leaf.
    pub leaf: usize,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationProfile {
    pub instance_id: String,
    /// Active leaf indices, sorted and unique.
    pub h_leaf: Vec<usize>,
    /// `M h_leaf` as sorted `(node id, count)` pairs.
    pub h_tree: Vec<(usize, u32)>,
    pub matched: Vec<TagMatch>,
    pub dropped: Vec<String>,
}

impl ActivationProfile {
    pub fn is_anchorable(&self) -> bool {
        !self.h_leaf.is_empty()
    }
}

/// One line of `anchored.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchoredRecord {
    pub id: String,
    /// Node ids of activated leaves.
    pub leaves: Vec<usize>,
    pub dropped: Vec<String>,
    pub quality: f64,
    pub complexity: f64,
}

impl AnchoredRecord {
    pub fn new(profile: &ActivationProfile, instance: &Instance, m: &AncestryMatrix) -> Self {
        Self {
            id: profile.instance_id.clone(),
            leaves: profile.h_leaf.iter().map(|&j| m.leaf_node(j)).collect(),
            dropped: profile.dropped.clone(),
            quality: instance.quality,
            complexity: instance.complexity,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnchorReport {
    /// `(instance id, tag)` pairs whose best similarity fell below threshold.
    pub dropped: Vec<(String, String)>,
    pub unanchorable: Vec<String>,
    pub diagnostics: ValidationReport,
}

impl AnchorReport {
    pub fn is_empty(&self) -> bool {
        self.dropped.is_empty() && self.unanchorable.is_empty() && self.diagnostics.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct LeafHit {
    leaf: usize,
    similarity: f64,
}

/// Precomputed leaf lookup for a tree: unit leaf vectors, names, and the
/// ancestry matrix.
pub struct Anchorer<'a> {
    ancestry: AncestryMatrix,
    leaf_vectors: Vec<Vec<f64>>,
    leaf_by_name: HashMap<&'a str, usize>,
    embeddings: &'a EmbeddingTable,
    diagnostics: ValidationReport,
}

impl<'a> Anchorer<'a> {
    pub fn new(tree: &'a TagTree, embeddings: &'a EmbeddingTable) -> Result<Self> {
        let ancestry = build_ancestry_matrix(tree)?;
        let dim = embeddings.dimension();
        let mut diagnostics = ValidationReport::new();
        let mut leaf_vectors = Vec::with_capacity(ancestry.n_leaves());
        let mut leaf_by_name = HashMap::new();
        for (j, &id) in ancestry.leaf_nodes().iter().enumerate() {
            let node = &tree.nodes[id];
            leaf_by_name.insert(node.name.as_str(), j);
            let v = match (&node.embedding, embeddings.get(&node.name)) {
                (Some(e), _) => {
                    if e.len() != dim {
                        return Err(Error::Dimension {
                            key: node.name.clone(),
                            expected: dim,
                            found: e.len(),
                        });
                    }
                    unit(e)
                }
                (None, Some(e)) => unit(e),
                (None, None) => {
                    diagnostics.warn(
                        format!("leaf `{}`", node.name),
                        "no embedding, using hashed fallback vector",
                    );
                    fallback_vector(&node.name, dim)
                }
            };
            leaf_vectors.push(v);
        }
        Ok(Self {
            ancestry,
            leaf_vectors,
            leaf_by_name,
            embeddings,
            diagnostics,
        })
    }

    pub fn ancestry(&self) -> &AncestryMatrix {
        &self.ancestry
    }

    /// Best leaf for a tag: verbatim name match first, then the highest
    /// cosine similarity with ties going to the lowest leaf index.
    fn best_leaf(&self, tag: &str) -> LeafHit {
        if let Some(&leaf) = self.leaf_by_name.get(tag) {
            return LeafHit { leaf, similarity: 1.0 };
        }
        let v = match self.embeddings.get(tag) {
            Some(e) => unit(e),
            None => fallback_vector(tag, self.embeddings.dimension()),
        };
        let mut best = LeafHit {
            leaf: 0,
            similarity: f64::NEG_INFINITY,
        };
        for (j, lv) in self.leaf_vectors.iter().enumerate() {
            let sim = dot(&v, lv);
            if sim > best.similarity {
                best = LeafHit { leaf: j, similarity: sim };
            }
        }
        best
    }

    fn profile(
        &self,
        instance: &Instance,
        hits: &HashMap<&str, LeafHit>,
        min_similarity: f64,
    ) -> ActivationProfile {
        let mut leaves = BTreeSet::new();
        let mut matched = Vec::new();
        let mut dropped = Vec::new();
        for tag in &instance.tags {
            let hit = hits[tag.as_str()];
            if hit.similarity >= min_similarity {
                leaves.insert(hit.leaf);
                matched.push(TagMatch {
                    tag: tag.clone(),
                    leaf: self.ancestry.leaf_node(hit.leaf),
                    similarity: hit.similarity,
                });
            } else {
                dropped.push(tag.clone());
            }
        }
        let h_leaf: Vec<usize> = leaves.into_iter().collect();
        let h_tree = self.ancestry.propagate(&h_leaf);
        ActivationProfile {
            instance_id: instance.id.clone(),
            h_leaf,
            h_tree,
            matched,
            dropped,
        }
    }

    pub fn anchor_instance(&self, instance: &Instance, min_similarity: f64) -> ActivationProfile {
        let hits = instance
            .tags
            .iter()
            .map(|t| (t.as_str(), self.best_leaf(t)))
            .collect();
        self.profile(instance, &hits, min_similarity)
    }

    /// Anchors a pool, matching each distinct tag once. Output order follows
    /// the input.
    pub fn anchor_pool(&self, pool: &[Instance], min_similarity: f64) -> (Vec<ActivationProfile>, AnchorReport) {
        let mut tags: Vec<&str> = pool.iter().flat_map(|i| i.tags.iter().map(String::as_str)).collect();
        tags.sort_unstable();
        tags.dedup();
        let hits: HashMap<&str, LeafHit> = tags
            .par_iter()
            .map(|&t| (t, self.best_leaf(t)))
            .collect();

        let profiles: Vec<ActivationProfile> = pool
            .par_iter()
            .map(|inst| self.profile(inst, &hits, min_similarity))
            .collect();

        let mut report = AnchorReport {
            diagnostics: self.diagnostics.clone(),
            ..AnchorReport::default()
        };
        for &t in &tags {
            if self.embeddings.get(t).is_none() && !self.leaf_by_name.contains_key(t) {
                report
                    .diagnostics
                    .warn(format!("tag `{t}`"), "no embedding, using hashed fallback vector");
            }
        }
        for p in &profiles {
            for tag in &p.dropped {
                report.dropped.push((p.instance_id.clone(), tag.clone()));
            }
            if !p.is_anchorable() {
                report.unanchorable.push(p.instance_id.clone());
            }
        }
        (profiles, report)
    }
}

pub fn anchor_instance(
    instance: &Instance,
    tree: &TagTree,
    embeddings: &EmbeddingTable,
    min_similarity: f64,
) -> Result<ActivationProfile> {
    Ok(Anchorer::new(tree, embeddings)?.anchor_instance(instance, min_similarity))
}

pub fn anchor_pool(
    pool: &[Instance],
    tree: &TagTree,
    embeddings: &EmbeddingTable,
    min_similarity: f64,
) -> Result<(Vec<ActivationProfile>, AnchorReport)> {
    let anchorer = Anchorer::new(tree, embeddings)?;
    let (profiles, mut report) = anchorer.anchor_pool(pool, min_similarity);
    if pool.is_empty() {
        report = AnchorReport::default();
    }
    Ok((profiles, report))
}
