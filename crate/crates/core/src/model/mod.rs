pub mod instance;
pub mod matrix;
pub mod tree;

pub use instance::Instance;
pub use matrix::{build_ancestry_matrix, build_propagation_matrix, AncestryMatrix, PropagationMatrix};
pub use tree::{validate_tree, validate_tree_with_limit, TagTree, TreeNode};
