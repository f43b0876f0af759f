//! Staged scoring around a sentinel tree index.
//!
//! A query group is scored with the first `s` trees, an exit strategy marks
//! each document as continuing or exiting, and only the continuing documents
//! are scored with trees `s..T`. Both traversal backends sum each document's
//! tree outputs in ascending tree order, so they agree bit for bit.

use std::ops::{Add, AddAssign};

use thiserror::Error;

use crate::data::QueryGroup;
use crate::ensemble::{Ensemble, EnsembleError};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("sentinel {s} outside 1..={trees}")]
    Sentinel { s: usize, trees: usize },
    #[error("document {doc_index} of query {query_id} has no exit decision")]
    MissingDecision { query_id: u64, doc_index: usize },
    #[error("decision vector has {actual} entries for {expected} documents")]
    DecisionLength { expected: usize, actual: usize },
    #[error("query {query_id} is incomplete: {reason}")]
    Incomplete { query_id: u64, reason: String },
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

/// Number of trees evaluated before the exit decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sentinel(usize);

impl Sentinel {
    pub fn new(s: usize, ens: &Ensemble) -> Result<Self, ScoringError> {
        if s == 0 || s > ens.num_trees() {
            return Err(ScoringError::Sentinel {
                s,
                trees: ens.num_trees(),
            });
        }
        Ok(Sentinel(s))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    /// Each document walks trees `0..s` before the next document starts.
    #[default]
    DocumentMajor,
    /// Each tree scores the whole query block before the next tree.
    TreeMajor,
}

/// Exact traversal counters. Additive across queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TraversalCost {
    pub ranker_trees: u64,
    pub strategy_trees: u64,
    /// Wall-clock time spent in the exit strategy, when measured.
    pub strategy_overhead_ns: Option<u64>,
}

impl Add for TraversalCost {
    type Output = TraversalCost;

    fn add(self, rhs: Self) -> Self {
        let overhead = match (self.strategy_overhead_ns, rhs.strategy_overhead_ns) {
            (None, None) => None,
            (a, b) => Some(a.unwrap_or(0) + b.unwrap_or(0)),
        };
        TraversalCost {
            ranker_trees: self.ranker_trees + rhs.ranker_trees,
            strategy_trees: self.strategy_trees + rhs.strategy_trees,
            strategy_overhead_ns: overhead,
        }
    }
}

impl AddAssign for TraversalCost {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TraversalCost {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(TraversalCost::default(), Add::add)
    }
}

/// Per-query scoring state at and after the sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringState {
    pub query_id: u64,
    pub sentinel: usize,
    /// `base + Σ_{t<s} tree_t(d)`, indexed by doc_index.
    pub partial_score: Vec<f64>,
    /// 1-based rank by descending partial score, ties by ascending doc_index.
    pub sentinel_rank: Vec<usize>,
    pub continued: Option<Vec<bool>>,
    pub full_score: Vec<Option<f64>>,
    pub cost: TraversalCost,
}

impl ScoringState {
    pub fn n_candidates(&self) -> usize {
        self.partial_score.len()
    }

    pub fn set_decisions(&mut self, continued: Vec<bool>) -> Result<(), ScoringError> {
        if continued.len() != self.partial_score.len() {
            return Err(ScoringError::DecisionLength {
                expected: self.partial_score.len(),
                actual: continued.len(),
            });
        }
        self.continued = Some(continued);
        Ok(())
    }

    pub fn num_continued(&self) -> usize {
        self.continued.as_ref().map_or(0, |c| c.iter().filter(|&&b| b).count())
    }

    /// Document ids ordered by sentinel rank.
    pub fn sentinel_order(&self) -> Vec<usize> {
        let mut order = vec![0; self.sentinel_rank.len()];
        for (d, &r) in self.sentinel_rank.iter().enumerate() {
            order[r - 1] = d;
        }
        order
    }
}

/// Document ids sorted by descending score, ties by ascending id.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// 1-based ranks matching [`rank_order`].
pub fn ranks_from_scores(scores: &[f64]) -> Vec<usize> {
    let mut ranks = vec![0; scores.len()];
    for (pos, d) in rank_order(scores).into_iter().enumerate() {
        ranks[d] = pos + 1;
    }
    ranks
}

fn check_group(ens: &Ensemble, group: &QueryGroup) -> Result<(), ScoringError> {
    for d in &group.documents {
        ens.check_features(&d.features)?;
    }
    Ok(())
}

fn prefix_scores(ens: &Ensemble, group: &QueryGroup, s: usize, backend: Backend) -> Vec<f64> {
    match backend {
        Backend::DocumentMajor => group
            .documents
            .iter()
            .map(|d| ens.score_prefix_unchecked(&d.features, s))
            .collect(),
        Backend::TreeMajor => {
            let mut acc = vec![ens.base_score(); group.len()];
            for tree in &ens.trees()[..s] {
                for (a, d) in acc.iter_mut().zip(&group.documents) {
                    *a += tree.eval(&d.features);
                }
            }
            acc
        }
    }
}

/// Scores every document with trees `0..s` and ranks the query at the sentinel.
pub fn score_prefix(
    ens: &Ensemble,
    group: &QueryGroup,
    s: Sentinel,
    backend: Backend,
) -> Result<ScoringState, ScoringError> {
    check_group(ens, group)?;
    let s = s.get();
    let partial_score = prefix_scores(ens, group, s, backend);
    let sentinel_rank = ranks_from_scores(&partial_score);
    let n = group.len();
    Ok(ScoringState {
        query_id: group.query_id,
        sentinel: s,
        partial_score,
        sentinel_rank,
        continued: None,
        full_score: vec![None; n],
        cost: TraversalCost {
            ranker_trees: (n * s) as u64,
            ..TraversalCost::default()
        },
    })
}

/// Finishes scoring continued documents with trees `s..T`.
pub fn resume_scoring(
    ens: &Ensemble,
    group: &QueryGroup,
    state: &mut ScoringState,
    backend: Backend,
) -> Result<(), ScoringError> {
    let continued = state.continued.as_ref().ok_or(ScoringError::MissingDecision {
        query_id: state.query_id,
        doc_index: 0,
    })?;
    if continued.len() != group.len() {
        return Err(ScoringError::DecisionLength {
            expected: group.len(),
            actual: continued.len(),
        });
    }
    let s = state.sentinel;
    let t = ens.num_trees();
    let live: Vec<usize> = (0..group.len()).filter(|&d| continued[d]).collect();

    match backend {
        Backend::DocumentMajor => {
            for &d in &live {
                let x = &group.documents[d].features;
                state.full_score[d] = Some(ens.accumulate(state.partial_score[d], x, s..t));
            }
        }
        Backend::TreeMajor => {
            let mut acc: Vec<f64> = live.iter().map(|&d| state.partial_score[d]).collect();
            for tree in &ens.trees()[s..t] {
                for (a, &d) in acc.iter_mut().zip(&live) {
                    *a += tree.eval(&group.documents[d].features);
                }
            }
            for (a, &d) in acc.into_iter().zip(&live) {
                state.full_score[d] = Some(a);
            }
        }
    }
    state.cost.ranker_trees += (live.len() * (t - s)) as u64;
    Ok(())
}

/// Runs both backends on the same prefix and reports whether their partial
/// scores are bit-identical.
pub fn backend_equivalence(ens: &Ensemble, group: &QueryGroup, s: Sentinel) -> Result<bool, ScoringError> {
    let a = score_prefix(ens, group, s, Backend::DocumentMajor)?;
    let b = score_prefix(ens, group, s, Backend::TreeMajor)?;
    Ok(a.partial_score
        .iter()
        .zip(&b.partial_score)
        .all(|(x, y)| x.to_bits() == y.to_bits()))
}

/// Full-ensemble scores for a group, checked.
pub fn full_scores(ens: &Ensemble, group: &QueryGroup) -> Result<Vec<f64>, ScoringError> {
    group
        .documents
        .iter()
        .map(|d| ens.score_full(&d.features).map_err(ScoringError::from))
        .collect()
}
