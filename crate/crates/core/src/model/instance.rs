use serde::{Deserialize, Serialize};

/// One query/response pair with its fine-grained tags and raw or normalized
/// quality and complexity scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub query: String,
    pub response: String,
    pub tags: Vec<String>,
    pub quality: f64,
    pub complexity: f64,
}
