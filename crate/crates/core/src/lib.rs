//! Hierarchical tag trees and tree-aware greedy subset selection for
//! instruction-tuning pools.
//!
//! The pipeline is: build a tag tree from a tag vocabulary and embeddings
//! ([`builder`]), anchor each instance's tags to leaves ([`anchor`]), then
//! greedily select a subset that maximizes a concave information measure
//! propagated over the tree, optionally pulled toward a target leaf
//! distribution ([`sampler`]). [`oracle`] holds brute-force references.

pub mod anchor;
pub mod builder;
pub mod error;
pub mod io;
pub mod model;
pub mod objective;
pub mod oracle;
pub mod report;
pub mod sampler;
pub mod vector;

pub use anchor::{anchor_instance, anchor_pool, ActivationProfile, AnchorReport, AnchoredRecord, Anchorer};
pub use builder::{build_tree, Branching, TreeBuildConfig};
pub use error::{Error, Result};
pub use io::{EmbeddingTable, TargetDistribution};
pub use model::{Instance, TagTree, TreeNode};
pub use objective::ObjectiveConfig;
pub use report::ValidationReport;
pub use sampler::{sample, Mode, Sampler, SamplerConfig, SelectionTrace, StateUpdate};
