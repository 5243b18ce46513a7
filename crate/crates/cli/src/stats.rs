use std::io::BufRead;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use tagforest::io::TargetDistribution;
use tagforest::model::{build_ancestry_matrix, build_propagation_matrix, TagTree};
use tagforest::objective::{composite_score, kl_penalty, raw_info_vector, InfoState, ObjectiveConfig};

use crate::UsageError;

/// One selected or anchored line reduced to what the report needs.
pub struct Row {
    pub leaves: Vec<usize>,
    pub score: f64,
}

fn field<'a>(v: &'a Value, key: &str) -> Option<&'a Value> {
    v.get("selection").and_then(|s| s.get(key)).or_else(|| v.get(key))
}

fn row(v: &Value, alpha: f64) -> Result<Row, String> {
    let leaves = field(v, "leaves")
        .and_then(Value::as_array)
        .ok_or("missing `leaves` array")?
        .iter()
        .map(|x| x.as_u64().map(|n| n as usize).ok_or("leaf ids must be nonnegative integers"))
        .collect::<Result<Vec<_>, _>>()?;
    let score = match field(v, "score").and_then(Value::as_f64) {
        Some(s) => s,
        None => {
            let q = v.get("quality").and_then(Value::as_f64).ok_or("missing `quality`")?;
            let c = v.get("complexity").and_then(Value::as_f64).ok_or("missing `complexity`")?;
            composite_score(q, c, alpha).map_err(|e| e.to_string())?
        }
    };
    Ok(Row { leaves, score })
}

pub fn read_rows(path: &Path, alpha: f64) -> Result<Vec<Row>> {
    let file = std::fs::File::open(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Value>(&line)
            .map_err(|e| e.to_string())
            .and_then(|v| row(&v, alpha));
        match parsed {
            Ok(r) => rows.push(r),
            Err(msg) => return Err(UsageError(format!("{}:{}: {msg}", path.display(), i + 1)).into()),
        }
    }
    Ok(rows)
}

#[derive(Serialize)]
pub struct LevelCoverage {
    pub depth: usize,
    pub covered: usize,
    pub total: usize,
}

#[derive(Serialize)]
pub struct Quantiles {
    pub min: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub max: f64,
}

#[derive(Serialize)]
pub struct StatsReport {
    pub instances: usize,
    pub leaves: Vec<String>,
    pub leaf_histogram: Vec<u64>,
    pub information: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    pub coverage: Vec<LevelCoverage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score_quantiles: Option<Quantiles>,
}

/// Linear interpolation between closest ranks.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn compute(
    rows: &[Row],
    tree: &TagTree,
    target: Option<&TargetDistribution>,
    objective: ObjectiveConfig,
) -> Result<StatsReport> {
    let m = build_ancestry_matrix(tree)?;
    let a = build_propagation_matrix(tree)?;
    let positions = tree.leaf_positions();

    let mut items = Vec::with_capacity(rows.len());
    for (k, r) in rows.iter().enumerate() {
        let mut idx = Vec::with_capacity(r.leaves.len());
        for &id in &r.leaves {
            let j = positions
                .get(id)
                .copied()
                .flatten()
                .ok_or_else(|| UsageError(format!("row {}: node {id} is not a leaf of the tree", k + 1)))?;
            idx.push(j);
        }
        idx.sort_unstable();
        idx.dedup();
        items.push((raw_info_vector(r.score, &m.propagate(&idx)), idx));
    }
    let state = InfoState::from_selection(items.iter().map(|(e, l)| (e, l.as_slice())), m.n_leaves(), &a);

    // A node is covered when any leaf below it was activated.
    let mut covered = vec![false; tree.len()];
    for (j, &count) in state.leaf_counts().iter().enumerate() {
        if count > 0 {
            for &node in m.column(j) {
                covered[node] = true;
            }
        }
    }
    let mut coverage: Vec<LevelCoverage> = (0..=tree.max_depth())
        .map(|depth| LevelCoverage { depth, covered: 0, total: 0 })
        .collect();
    for node in &tree.nodes {
        let level = &mut coverage[node.depth];
        level.total += 1;
        level.covered += usize::from(covered[node.id]);
    }

    let mut scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    scores.sort_by(f64::total_cmp);
    let score_quantiles = (!scores.is_empty()).then(|| Quantiles {
        min: scores[0],
        p25: quantile(&scores, 0.25),
        p50: quantile(&scores, 0.5),
        p75: quantile(&scores, 0.75),
        max: scores[scores.len() - 1],
    });

    Ok(StatsReport {
        instances: rows.len(),
        leaves: m.leaf_nodes().iter().map(|&id| tree.nodes[id].name.clone()).collect(),
        leaf_histogram: state.leaf_counts().to_vec(),
        information: state.information(objective.gamma),
        kl: target.map(|t| kl_penalty(&t.dense(m.leaf_nodes()), &state, &[], objective.epsilon)),
        coverage,
        score_quantiles,
    })
}
