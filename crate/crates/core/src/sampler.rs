//! Greedy budgeted selection over an anchored pool.
//!
//! Every iteration recomputes the gradient `G` from the current state, scores
//! all remaining candidates by `G e_d - lambda * KL(Q || P(D_S ∪ {d}))`, and
//! moves the best one into the selection. Candidates are compared under a
//! fixed total order (joint score desc, composite score desc, id asc), so the
//! result does not depend on how scoring is split across workers.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchor::AnchoredRecord;
use crate::error::{Error, Result};
use crate::io::{write_jsonl, TargetDistribution};
use crate::model::{build_ancestry_matrix, build_propagation_matrix, AncestryMatrix, PropagationMatrix, TagTree};
use crate::objective::{
    composite_score, gradient_vector, kl_penalty, leaf_gradient, raw_info_vector, InfoState, KlScorer,
    ObjectiveConfig, SparseVector,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    General,
    Aligned,
}

/// How the selection state is advanced after each pick.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StateUpdate {
    #[default]
    Incremental,
    /// Rebuild the state from the full selection every iteration.
    Recompute,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub budget: usize,
    pub objective: ObjectiveConfig,
    pub seed: u64,
    pub mode: Mode,
    pub candidate_parallelism: usize,
    pub update: StateUpdate,
    /// Re-score only candidates whose stale gain could still win. Applies
    /// only when no KL term is scored; the selection is unchanged.
    pub lazy: bool,
}

impl SamplerConfig {
    pub fn general(budget: usize) -> Self {
        Self {
            budget,
            objective: ObjectiveConfig::default(),
            seed: 0,
            mode: Mode::General,
            candidate_parallelism: 1,
            update: StateUpdate::Incremental,
            lazy: true,
        }
    }

    pub fn aligned(budget: usize, lambda: f64) -> Self {
        Self {
            objective: ObjectiveConfig {
                lambda,
                ..ObjectiveConfig::default()
            },
            mode: Mode::Aligned,
            ..Self::general(budget)
        }
    }

    pub fn validate(&self, target: Option<&TargetDistribution>) -> Result<()> {
        self.objective.validate()?;
        match self.mode {
            Mode::Aligned if target.is_none() => {
                Err(Error::Config("aligned mode requires a target distribution".into()))
            }
            Mode::General if self.objective.lambda != 0.0 => Err(Error::Config(
                "lambda > 0 requires aligned mode with a target distribution".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub iteration: usize,
    pub id: String,
    /// Composite score `s`.
    pub score: f64,
    pub gain: f64,
    pub kl: Option<f64>,
    pub joint: f64,
    /// Node ids of the pick's active leaves.
    pub leaves: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub mode: Mode,
    pub requested_budget: usize,
    pub objective: TraceObjective,
    pub picks: Vec<Pick>,
    pub final_information: f64,
    pub final_kl: Option<f64>,
    pub excluded: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceObjective {
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl From<ObjectiveConfig> for TraceObjective {
    fn from(c: ObjectiveConfig) -> Self {
        Self {
            alpha: c.alpha,
            gamma: c.gamma,
            lambda: c.lambda,
            epsilon: c.epsilon,
        }
    }
}

impl SelectionTrace {
    pub fn selected_ids(&self) -> impl Iterator<Item = &str> {
        self.picks.iter().map(|p| p.id.as_str())
    }
}

/// Candidate pool in structure-of-arrays form.
struct Candidates {
    ids: Vec<String>,
    scores: Vec<f64>,
    leaf_start: Vec<usize>,
    leaf_index: Vec<usize>,
    info: Vec<SparseVector>,
}

impl Candidates {
    fn leaves(&self, c: usize) -> &[usize] {
        &self.leaf_index[self.leaf_start[c]..self.leaf_start[c + 1]]
    }

    fn len(&self) -> usize {
        self.ids.len()
    }
}

fn leaf_indices(record: &AnchoredRecord, positions: &[Option<usize>]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(record.leaves.len());
    for &id in &record.leaves {
        match positions.get(id).copied().flatten() {
            Some(j) => out.push(j),
            None => {
                return Err(Error::Input(format!(
                    "instance `{}`: node {id} is not a leaf of the tree",
                    record.id
                )))
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[derive(Clone, Copy)]
struct Scored {
    pos: usize,
    joint: f64,
    gain: f64,
    kl: f64,
}

/// The engine behind [`sample`], holding the structural matrices for one tree.
pub struct Sampler {
    ancestry: AncestryMatrix,
    propagation: PropagationMatrix,
    positions: Vec<Option<usize>>,
}

impl Sampler {
    pub fn new(tree: &TagTree) -> Result<Self> {
        Ok(Self {
            ancestry: build_ancestry_matrix(tree)?,
            propagation: build_propagation_matrix(tree)?,
            positions: tree.leaf_positions(),
        })
    }

    pub fn ancestry(&self) -> &AncestryMatrix {
        &self.ancestry
    }

    pub fn propagation(&self) -> &PropagationMatrix {
        &self.propagation
    }

    fn candidates(&self, pool: &[AnchoredRecord], alpha: f64, excluded: &mut Vec<String>) -> Result<Candidates> {
        let mut c = Candidates {
            ids: Vec::new(),
            scores: Vec::new(),
            leaf_start: vec![0],
            leaf_index: Vec::new(),
            info: Vec::new(),
        };
        let mut seen = HashSet::with_capacity(pool.len());
        for rec in pool {
            if !seen.insert(rec.id.as_str()) {
                return Err(Error::Input(format!("duplicate instance id `{}`", rec.id)));
            }
            let leaves = leaf_indices(rec, &self.positions)?;
            if leaves.is_empty() {
                excluded.push(rec.id.clone());
                continue;
            }
            let s = composite_score(rec.quality, rec.complexity, alpha)
                .map_err(|e| Error::Input(format!("instance `{}`: {e}", rec.id)))?;
            c.info.push(raw_info_vector(s, &self.ancestry.propagate(&leaves)));
            c.leaf_index.extend_from_slice(&leaves);
            c.leaf_start.push(c.leaf_index.len());
            c.ids.push(rec.id.clone());
            c.scores.push(s);
        }
        Ok(c)
    }

    pub fn sample(
        &self,
        pool: &[AnchoredRecord],
        config: &SamplerConfig,
        target: Option<&TargetDistribution>,
    ) -> Result<SelectionTrace> {
        config.validate(target)?;
        let obj = config.objective;
        let mut excluded = Vec::new();
        let cands = self.candidates(pool, obj.alpha, &mut excluded)?;
        let q_dense = target.map(|t| t.dense(self.ancestry.leaf_nodes()));
        let kl_target = match config.mode {
            Mode::Aligned => q_dense.as_deref(),
            Mode::General => None,
        };

        let mut warnings = Vec::new();
        if !excluded.is_empty() {
            warnings.push(format!("{} unanchorable instances excluded", excluded.len()));
        }
        let budget = if config.budget > cands.len() {
            warnings.push(format!(
                "budget {} exceeds {} anchorable candidates; selecting all",
                config.budget,
                cands.len()
            ));
            cands.len()
        } else {
            config.budget
        };

        let run = || match kl_target {
            None if config.lazy => self.greedy_lazy(&cands, budget, config),
            _ => self.greedy(&cands, budget, config, kl_target),
        };
        let (picks, state) = if config.candidate_parallelism > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(config.candidate_parallelism)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(run)
        } else {
            run()
        };

        let final_kl = q_dense
            .as_deref()
            .map(|q| kl_penalty(q, &state, &[], obj.epsilon));
        Ok(SelectionTrace {
            mode: config.mode,
            requested_budget: config.budget,
            objective: obj.into(),
            final_information: state.information(obj.gamma),
            final_kl,
            picks,
            excluded,
            warnings,
        })
    }

    fn greedy(
        &self,
        cands: &Candidates,
        budget: usize,
        config: &SamplerConfig,
        kl_target: Option<&[f64]>,
    ) -> (Vec<Pick>, InfoState) {
        let obj = config.objective;
        let n_leaves = self.ancestry.n_leaves();
        let parallel = config.candidate_parallelism > 1;
        let mut state = InfoState::new(self.propagation.n(), n_leaves);
        let mut remaining: Vec<usize> = (0..cands.len()).collect();
        let mut chosen: Vec<usize> = Vec::with_capacity(budget);
        let mut picks = Vec::with_capacity(budget);

        for iteration in 0..budget {
            let g = gradient_vector(&state, &self.propagation, obj.gamma);
            let leaf_g = leaf_gradient(&g, &self.ancestry);
            let kl = kl_target.map(|q| KlScorer::new(q, &state, obj.epsilon));

            let score = |pos: usize| -> Scored {
                let c = remaining[pos];
                let leaves = cands.leaves(c);
                let gain = cands.scores[c] * leaves.iter().map(|&j| leaf_g[j]).sum::<f64>();
                let (joint, kl) = match &kl {
                    Some(k) => {
                        let d = k.score(leaves);
                        (gain - obj.lambda * d, d)
                    }
                    None => (gain, 0.0),
                };
                Scored { pos, joint, gain, kl }
            };
            let better = |a: Scored, b: Scored| -> Scored {
                if compare(cands, &remaining, &a, &b) == Ordering::Greater {
                    a
                } else {
                    b
                }
            };
            let best = if parallel {
                (0..remaining.len())
                    .into_par_iter()
                    .map(score)
                    .reduce_with(better)
            } else {
                (0..remaining.len()).map(score).reduce(better)
            }
            .expect("budget never exceeds the candidate count");

            let c = remaining.swap_remove(best.pos);
            chosen.push(c);
            self.advance(&mut state, cands, &chosen, config.update);
            picks.push(self.pick(cands, iteration, c, best.gain, kl.as_ref().map(|_| best.kl), best.joint));
        }
        (picks, state)
    }

    /// Lazy greedy for the pure information objective. After the first pick
    /// every entry of `G` can only shrink as the state grows, so a gain
    /// computed in an earlier iteration bounds the current one from above.
    /// A candidate is picked once its fresh gain tops every stale bound under
    /// the same total order the eager scan uses.
    fn greedy_lazy(&self, cands: &Candidates, budget: usize, config: &SamplerConfig) -> (Vec<Pick>, InfoState) {
        let gamma = config.objective.gamma;
        let n_leaves = self.ancestry.n_leaves();
        let mut state = InfoState::new(self.propagation.n(), n_leaves);
        let mut chosen: Vec<usize> = Vec::with_capacity(budget);
        let mut picks = Vec::with_capacity(budget);
        if budget == 0 {
            return (picks, state);
        }

        let mut by_id: Vec<usize> = (0..cands.len()).collect();
        by_id.sort_unstable_by(|&a, &b| cands.ids[a].cmp(&cands.ids[b]));
        let mut id_rank = vec![0; cands.len()];
        for (rank, &c) in by_id.iter().enumerate() {
            id_rank[c] = rank;
        }
        let key = |c: usize, gain: f64, fresh_at: usize| LazyEntry {
            gain,
            score: cands.scores[c],
            id_rank: id_rank[c],
            candidate: c,
            fresh_at,
        };

        // The zero gradient of the empty state ties every gain at zero.
        let first = (0..cands.len())
            .map(|c| key(c, 0.0, 0))
            .max()
            .expect("budget never exceeds the candidate count")
            .candidate;
        chosen.push(first);
        self.advance(&mut state, cands, &chosen, config.update);
        picks.push(self.pick(cands, 0, first, 0.0, None, 0.0));

        let mut heap = BinaryHeap::with_capacity(cands.len());
        for iteration in 1..budget {
            let g = gradient_vector(&state, &self.propagation, gamma);
            let leaf_g = leaf_gradient(&g, &self.ancestry);
            let gain = |c: usize| cands.scores[c] * cands.leaves(c).iter().map(|&j| leaf_g[j]).sum::<f64>();
            if iteration == 1 {
                let fresh: Vec<LazyEntry> = if config.candidate_parallelism > 1 {
                    (0..cands.len())
                        .into_par_iter()
                        .filter(|&c| c != first)
                        .map(|c| key(c, gain(c), 1))
                        .collect()
                } else {
                    (0..cands.len())
                        .filter(|&c| c != first)
                        .map(|c| key(c, gain(c), 1))
                        .collect()
                };
                heap.extend(fresh);
            }
            let best = loop {
                let top = heap.pop().expect("budget never exceeds the candidate count");
                if top.fresh_at == iteration {
                    break top;
                }
                heap.push(key(top.candidate, gain(top.candidate), iteration));
            };
            chosen.push(best.candidate);
            self.advance(&mut state, cands, &chosen, config.update);
            picks.push(self.pick(cands, iteration, best.candidate, best.gain, None, best.gain));
        }
        (picks, state)
    }

    fn advance(&self, state: &mut InfoState, cands: &Candidates, chosen: &[usize], update: StateUpdate) {
        let c = *chosen.last().expect("advance follows a pick");
        match update {
            StateUpdate::Incremental => state.add(&cands.info[c], cands.leaves(c), &self.propagation),
            StateUpdate::Recompute => {
                *state = InfoState::from_selection(
                    chosen.iter().map(|&k| (&cands.info[k], cands.leaves(k))),
                    self.ancestry.n_leaves(),
                    &self.propagation,
                )
            }
        }
    }

    fn pick(&self, cands: &Candidates, iteration: usize, c: usize, gain: f64, kl: Option<f64>, joint: f64) -> Pick {
        Pick {
            iteration,
            id: cands.ids[c].clone(),
            score: cands.scores[c],
            gain,
            kl,
            joint,
            leaves: cands.leaves(c).iter().map(|&j| self.ancestry.leaf_node(j)).collect(),
        }
    }
}

/// Heap entry ordered like the eager comparison: gain, then composite
/// score, then lower id first.
#[derive(Clone, Copy)]
struct LazyEntry {
    gain: f64,
    score: f64,
    id_rank: usize,
    candidate: usize,
    fresh_at: usize,
}

impl Ord for LazyEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then(self.score.total_cmp(&other.score))
            .then(other.id_rank.cmp(&self.id_rank))
    }
}

impl PartialOrd for LazyEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for LazyEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for LazyEntry {}

fn compare(cands: &Candidates, remaining: &[usize], a: &Scored, b: &Scored) -> Ordering {
    let (ca, cb) = (remaining[a.pos], remaining[b.pos]);
    a.joint
        .total_cmp(&b.joint)
        .then(cands.scores[ca].total_cmp(&cands.scores[cb]))
        .then_with(|| cands.ids[cb].cmp(&cands.ids[ca]))
}

pub fn sample(
    pool: &[AnchoredRecord],
    tree: &TagTree,
    config: &SamplerConfig,
    target: Option<&TargetDistribution>,
) -> Result<SelectionTrace> {
    Sampler::new(tree)?.sample(pool, config, target)
}

/// Target proportional to leaf hits across an anchored reference set.
pub fn derive_target(reference: &[AnchoredRecord], tree: &TagTree) -> Result<TargetDistribution> {
    tree.ensure_valid()?;
    let positions = tree.leaf_positions();
    let leaf_ids = tree.leaf_ids();
    let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
    for rec in reference {
        for j in leaf_indices(rec, &positions)? {
            *counts.entry(leaf_ids[j]).or_default() += 1;
        }
    }
    let total: u64 = counts.values().sum();
    if total == 0 {
        return Err(Error::Target("reference set activates no leaves".into()));
    }
    let weights = counts
        .into_iter()
        .map(|(id, c)| (id, c as f64 / total as f64))
        .collect();
    TargetDistribution::from_weights(tree, weights)
}

#[derive(Serialize)]
struct SelectionFields<'a> {
    rank: usize,
    score: f64,
    gain: f64,
    joint: f64,
    leaves: &'a [usize],
}

#[derive(Serialize)]
struct ExportLine<'a, T> {
    #[serde(flatten)]
    record: &'a T,
    selection: SelectionFields<'a>,
}

/// Writes the picks in order, each as the original record plus a
/// `selection` object. Records are matched to picks by id.
pub fn export_subset<T: Serialize>(
    trace: &SelectionTrace,
    original: &[T],
    id_of: impl Fn(&T) -> &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    let by_id: HashMap<&str, &T> = original.iter().map(|r| (id_of(r), r)).collect();
    let mut lines = Vec::with_capacity(trace.picks.len());
    for p in &trace.picks {
        let record = by_id
            .get(p.id.as_str())
            .ok_or_else(|| Error::Input(format!("selected id `{}` missing from original pool", p.id)))?;
        lines.push(ExportLine {
            record: *record,
            selection: SelectionFields {
                rank: p.iteration,
                score: p.score,
                gain: p.gain,
                joint: p.joint,
                leaves: &p.leaves,
            },
        });
    }
    write_jsonl(path, &lines)
}

pub fn save_trace(trace: &SelectionTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = serde_json::to_string_pretty(trace).expect("trace serializes");
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
