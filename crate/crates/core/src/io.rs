//! File formats: `pool.jsonl`, `embeddings.tsv`, `tree.json`, `target.json`
//! and `anchored.jsonl`.
//!
//! Floats are written with serde_json's shortest round-trip representation,
//! so every value read back is bit-identical to the one written.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::anchor::AnchoredRecord;
use crate::error::{Error, Result};
use crate::model::{Instance, TagTree};
use crate::report::ValidationReport;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// Result of a total parse: every non-blank line lands in exactly one of the
/// two lists.
#[derive(Debug, Default)]
pub struct ParsedPool {
    pub instances: Vec<Instance>,
    pub errors: Vec<LineError>,
    pub lines: usize,
}

pub fn parse_instances<R: BufRead>(reader: R) -> std::io::Result<ParsedPool> {
    let mut out = ParsedPool::default();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        out.lines += 1;
        match serde_json::from_str::<Instance>(&line) {
            Ok(inst) => {
                if !seen.insert(inst.id.clone()) {
                    out.errors.push(LineError {
                        line: lineno,
                        message: format!("duplicate instance id `{}`", inst.id),
                    });
                } else {
                    out.instances.push(inst);
                }
            }
            Err(e) => out.errors.push(LineError {
                line: lineno,
                message: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Loads a JSONL pool, failing on the first malformed line or duplicate id.
/// Scores are kept on their raw scale.
pub fn load_instances(path: impl AsRef<Path>) -> Result<Vec<Instance>> {
    let path = path.as_ref();
    let parsed = parse_instances(open(path)?).map_err(|e| Error::io(path, e))?;
    if let Some(err) = parsed.errors.into_iter().next() {
        if let Some(id) = err
            .message
            .strip_prefix("duplicate instance id `")
            .and_then(|s| s.strip_suffix('`'))
        {
            return Err(Error::DuplicateId {
                id: id.to_string(),
                line: err.line,
            });
        }
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: err.line,
            message: err.message,
        });
    }
    Ok(parsed.instances)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_instances(path: impl AsRef<Path>, pool: &[Instance]) -> Result<()> {
    write_jsonl(path, pool)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    MinMax,
}

/// Rescales quality and complexity independently onto `[0, 1]`. A constant
/// column maps to 0.5.
pub fn normalize_scores(pool: &mut [Instance], method: Normalization) -> Result<()> {
    let Normalization::MinMax = method;
    if pool.is_empty() {
        return Err(Error::Input("cannot normalize an empty pool".into()));
    }
    for inst in pool.iter() {
        if !inst.quality.is_finite() {
            return Err(Error::NonFiniteScore {
                id: inst.id.clone(),
                field: "quality",
            });
        }
        if !inst.complexity.is_finite() {
            return Err(Error::NonFiniteScore {
                id: inst.id.clone(),
                field: "complexity",
            });
        }
    }
    min_max(pool, |i| &mut i.quality);
    min_max(pool, |i| &mut i.complexity);
    Ok(())
}

fn min_max(pool: &mut [Instance], field: impl Fn(&mut Instance) -> &mut f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for inst in pool.iter_mut() {
        let v = *field(inst);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    for inst in pool.iter_mut() {
        let v = field(inst);
        *v = if span > 0.0 { (*v - lo) / span } else { 0.5 };
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Input("embedding dimension must be positive".into()));
        }
        Ok(Self {
            dimension,
            entries: BTreeMap::new(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let key = key.into();
        if vector.len() != self.dimension {
            return Err(Error::Dimension {
                key,
                expected: self.dimension,
                found: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input(format!("embedding `{key}` has a non-finite component")));
        }
        if self.entries.contains_key(&key) {
            return Err(Error::DuplicateKey { key });
        }
        self.entries.insert(key, vector);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut dim = None;
    let mut count = None;
    for part in line.split_whitespace() {
        if let Some(v) = part.strip_prefix("dim=") {
            dim = v.parse().ok();
        } else if let Some(v) = part.strip_prefix("count=") {
            count = v.parse().ok();
        } else {
            return None;
        }
    }
    Some((dim?, count?))
}

pub fn read_embeddings<R: BufRead>(reader: R, path: &Path) -> Result<EmbeddingTable> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(parse_err(1, "missing `dim=<d> count=<n>` header".into())),
    };
    let (dim, count) = parse_header(&header)
        .ok_or_else(|| parse_err(1, format!("bad header `{header}`, expected `dim=<d> count=<n>`")))?;
    let mut table = EmbeddingTable::new(dim)?;
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (key, values) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(i + 1, "expected `key<TAB>values`".into()))?;
        let vector = values
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(i + 1, format!("key `{key}`: {e}")))?;
        table.insert(key, vector)?;
    }
    if table.len() != count {
        return Err(parse_err(
            1,
            format!("header declares {count} rows, found {}", table.len()),
        ));
    }
    Ok(table)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    read_embeddings(open(path)?, path)
}

pub fn save_embeddings(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "dim={} count={}", table.dimension(), table.len()).map_err(io)?;
    for (key, v) in table.iter() {
        let values: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
        writeln!(w, "{key}\t{}", values.join(" ")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn tree_to_string(tree: &TagTree) -> String {
    let mut s = serde_json::to_string_pretty(tree).expect("tree serializes");
    s.push('\n');
    s
}

pub fn save_tree(tree: &TagTree, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, tree_to_string(tree)).map_err(|e| Error::io(path, e))
}

/// Parses and validates a tree. Violations are reported, never repaired.
pub fn tree_from_str(text: &str, path: &Path) -> Result<TagTree> {
    let tree: TagTree = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    tree.ensure_valid()?;
    Ok(tree)
}

pub fn load_tree(path: impl AsRef<Path>) -> Result<TagTree> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    tree_from_str(&text, path)
}

/// Probability vector over leaves, keyed by leaf node id.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetDistribution {
    weights: BTreeMap<usize, f64>,
}

const TARGET_SUM_TOLERANCE: f64 = 1e-3;

impl TargetDistribution {
    /// Validates weights against `tree`: keys must be leaves, weights
    /// nonnegative, and the total within 1e-3 of one. The result is
    /// renormalized.
    pub fn from_weights(tree: &TagTree, weights: BTreeMap<usize, f64>) -> Result<Self> {
        for (&id, &w) in &weights {
            let node = tree
                .nodes
                .get(id)
                .ok_or_else(|| Error::Target(format!("node id {id} not in tree")))?;
            if !node.children.is_empty() {
                return Err(Error::Target(format!("`{}` (node {id}) is not a leaf", node.name)));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Target(format!("`{}` has invalid weight {w}", node.name)));
            }
        }
        let sum: f64 = weights.values().sum();
        if !((1.0 - TARGET_SUM_TOLERANCE)..=(1.0 + TARGET_SUM_TOLERANCE)).contains(&sum) {
            return Err(Error::Target(format!("weights sum to {sum}, expected 1")));
        }
        let weights = weights.into_iter().map(|(k, w)| (k, w / sum)).collect();
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &BTreeMap<usize, f64> {
        &self.weights
    }

    /// Dense vector over leaf indices, given the leaf node ids in index order.
    pub fn dense(&self, leaf_nodes: &[usize]) -> Vec<f64> {
        leaf_nodes
            .iter()
            .map(|id| self.weights.get(id).copied().unwrap_or(0.0))
            .collect()
    }
}

pub fn target_from_str(text: &str, tree: &TagTree, path: &Path) -> Result<TargetDistribution> {
    let named: BTreeMap<String, f64> = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut weights = BTreeMap::new();
    for (name, w) in named {
        let id = tree
            .find_by_name(&name)
            .ok_or_else(|| Error::Target(format!("unknown node `{name}`")))?;
        if weights.insert(id, w).is_some() {
            return Err(Error::Target(format!("`{name}` listed twice")));
        }
    }
    TargetDistribution::from_weights(tree, weights)
}

pub fn load_target(path: impl AsRef<Path>, tree: &TagTree) -> Result<TargetDistribution> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    target_from_str(&text, tree, path)
}

pub fn save_target(target: &TargetDistribution, tree: &TagTree, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let named: BTreeMap<&str, f64> = target
        .weights()
        .iter()
        .map(|(&id, &w)| (tree.nodes[id].name.as_str(), w))
        .collect();
    let mut s = serde_json::to_string_pretty(&named).expect("target serializes");
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_anchored(path: impl AsRef<Path>) -> Result<Vec<AnchoredRecord>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnchoredRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId { id: rec.id, line: i + 1 });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn save_anchored(path: impl AsRef<Path>, records: &[AnchoredRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn save_report(path: impl AsRef<Path>, report: &ValidationReport) -> Result<()> {
    let path = path.as_ref();
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// `<dir>/<stem>.manifest.json` for an output path.
pub fn manifest_path(output: &Path) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    output.with_file_name(format!("{stem}.manifest.json"))
}
