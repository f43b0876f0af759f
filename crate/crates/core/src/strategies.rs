//! Exit strategies applied at the sentinel, and the end-to-end pipeline.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::data::{Dataset, QueryGroup};
use crate::ensemble::Ensemble;
use crate::exitset::{augment_group, AUGMENTED_EXTRA};
use crate::gbdt::{Forest, GbdtError};
use crate::scorer::{self, Backend, ScoringError, ScoringState, Sentinel, TraversalCost};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("invalid strategy parameters: {0}")]
    Params(String),
    #[error("classifier expects {actual} features, augmented layout has {expected}")]
    Arity { expected: usize, actual: usize },
    #[error("doc_index {0} is not part of the query")]
    UnknownDocument(usize),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Classifier(#[from] GbdtError),
}

#[derive(Debug, Clone)]
pub enum StrategyParams {
    /// No early exit: every document traverses the whole ensemble.
    Full,
    /// Keep the top `k_s` documents at the sentinel.
    Ert { k_s: usize },
    /// Keep documents scoring at least `σ_{k_s} − p`.
    Ept { k_s: usize, p: f64 },
    /// Keep documents whose predicted Continue probability is at least `tau`.
    Lear { classifier: Arc<Forest>, tau: f64 },
    /// Oracle: the shortest sentinel prefix holding the full top-`k`.
    Ideal { k: usize },
}

impl StrategyParams {
    pub fn validate(&self) -> Result<(), StrategyError> {
        let bad = |m: &str| Err(StrategyError::Params(m.to_string()));
        match self {
            StrategyParams::Full => Ok(()),
            StrategyParams::Ert { k_s } if *k_s < 1 => bad("k_s must be >= 1"),
            StrategyParams::Ept { k_s, .. } if *k_s < 1 => bad("k_s must be >= 1"),
            StrategyParams::Ept { p, .. } if p.is_nan() || *p < 0.0 => bad("p must be >= 0"),
            StrategyParams::Lear { tau, .. } if !(*tau > 0.0 && *tau < 1.0) => bad("tau must be in (0, 1)"),
            StrategyParams::Ideal { k } if *k < 1 => bad("k must be >= 1"),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StrategyParams::Full => "full",
            StrategyParams::Ert { .. } => "ert",
            StrategyParams::Ept { .. } => "ept",
            StrategyParams::Lear { .. } => "lear",
            StrategyParams::Ideal { .. } => "ideal",
        }
    }

    /// The knob a sweep varies: k_s for ERT, p for EPT, tau for LEAR, k for the oracle.
    pub fn threshold(&self) -> Option<f64> {
        match self {
            StrategyParams::Full => None,
            StrategyParams::Ert { k_s } => Some(*k_s as f64),
            StrategyParams::Ept { p, .. } => Some(*p),
            StrategyParams::Lear { tau, .. } => Some(*tau),
            StrategyParams::Ideal { k } => Some(*k as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExitDecision {
    pub continue_: Vec<bool>,
    /// The oracle's per-query cut `k_s^q`.
    pub ideal_cut: Option<usize>,
}

impl ExitDecision {
    fn from_mask(continue_: Vec<bool>) -> Self {
        ExitDecision {
            continue_,
            ideal_cut: None,
        }
    }

    pub fn num_continued(&self) -> usize {
        self.continue_.iter().filter(|&&c| c).count()
    }
}

pub fn apply_ert(state: &ScoringState, k_s: usize) -> ExitDecision {
    ExitDecision::from_mask(state.sentinel_rank.iter().map(|&r| r <= k_s).collect())
}

pub fn apply_ept(state: &ScoringState, k_s: usize, p: f64) -> ExitDecision {
    let n = state.n_candidates();
    let sigma = if n < k_s {
        state.partial_score.iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        let at = state
            .sentinel_rank
            .iter()
            .position(|&r| r == k_s)
            .expect("ranks are a permutation");
        state.partial_score[at]
    };
    let bound = sigma - p;
    ExitDecision::from_mask(state.partial_score.iter().map(|&s| s >= bound).collect())
}

/// Continue probabilities for every document of the query.
pub fn lear_probabilities(
    state: &ScoringState,
    group: &QueryGroup,
    classifier: &Forest,
) -> Result<Vec<f64>, StrategyError> {
    let expected = group.documents.first().map_or(0, |d| d.features.len()) + AUGMENTED_EXTRA;
    if classifier.num_features() != expected {
        return Err(StrategyError::Arity {
            expected,
            actual: classifier.num_features(),
        });
    }
    augment_group(&group.documents, state)
        .iter()
        .map(|x| classifier.predict_proba(x).map_err(StrategyError::from))
        .collect()
}

/// Thresholds the classifier at `tau` (inclusive) and charges its trees to
/// the state's strategy cost.
pub fn apply_lear(
    state: &mut ScoringState,
    group: &QueryGroup,
    classifier: &Forest,
    tau: f64,
) -> Result<ExitDecision, StrategyError> {
    let probs = lear_probabilities(state, group, classifier)?;
    state.cost.strategy_trees += (classifier.num_trees() * group.len()) as u64;
    Ok(ExitDecision::from_mask(probs.iter().map(|&p| p >= tau).collect()))
}

/// `full_top_k` holds the doc indices of the full ensemble's top `k`.
pub fn ideal_cut(state: &ScoringState, full_top_k: &[usize], k: usize) -> Result<(ExitDecision, usize), StrategyError> {
    let n = state.n_candidates();
    if let Some(&d) = full_top_k.iter().find(|&&d| d >= n) {
        return Err(StrategyError::UnknownDocument(d));
    }
    let cut = if n <= k {
        n
    } else {
        full_top_k.iter().map(|&d| state.sentinel_rank[d]).max().unwrap_or(0)
    };
    let mut decision = ExitDecision::from_mask(state.sentinel_rank.iter().map(|&r| r <= cut).collect());
    decision.ideal_cut = Some(cut);
    Ok((decision, cut))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergeRule {
    /// Continued documents by full score, then exited ones by partial score.
    #[default]
    TwoSegment,
    /// One pool ordered by full score if continued, partial score otherwise.
    MergeByScore,
}

pub fn assemble_ranking(state: &ScoringState, merge: MergeRule) -> Result<Vec<usize>, ScoringError> {
    let incomplete = |reason: &str| ScoringError::Incomplete {
        query_id: state.query_id,
        reason: reason.to_string(),
    };
    let continued = state.continued.as_ref().ok_or_else(|| incomplete("no decisions"))?;
    let n = state.n_candidates();
    let mut key = Vec::with_capacity(n);
    for (d, (&cont, full)) in continued.iter().zip(&state.full_score).enumerate() {
        let v = match (cont, *full) {
            (true, Some(f)) => f,
            (true, None) => return Err(incomplete("continued document without full score")),
            (false, _) => state.partial_score[d],
        };
        key.push(v);
    }
    let mut order: Vec<usize> = (0..n).collect();
    match merge {
        MergeRule::TwoSegment => order.sort_by(|&a, &b| {
            continued[b]
                .cmp(&continued[a])
                .then(key[b].total_cmp(&key[a]))
                .then(a.cmp(&b))
        }),
        MergeRule::MergeByScore => order.sort_by(|&a, &b| key[b].total_cmp(&key[a]).then(a.cmp(&b))),
    }
    Ok(order)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PipelineOptions {
    pub backend: Backend,
    pub merge: MergeRule,
    /// Record the wall-clock time spent inside the strategy.
    pub time_strategy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub query_id: u64,
    pub ranking: Vec<usize>,
    pub decision: ExitDecision,
    pub cost: TraversalCost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub queries: Vec<QueryOutcome>,
    pub cost: TraversalCost,
}

impl PipelineResult {
    pub fn continued_counts(&self) -> Vec<usize> {
        self.queries.iter().map(|q| q.decision.num_continued()).collect()
    }
}

/// Scores one query: prefix, exit decision, resume, final ranking.
pub fn run_query(
    ens: &Ensemble,
    group: &QueryGroup,
    s: Sentinel,
    params: &StrategyParams,
    opts: PipelineOptions,
) -> Result<QueryOutcome, StrategyError> {
    let mut state = scorer::score_prefix(ens, group, s, opts.backend)?;
    let started = opts.time_strategy.then(Instant::now);
    let decision = match params {
        StrategyParams::Full => ExitDecision::from_mask(vec![true; group.len()]),
        StrategyParams::Ert { k_s } => apply_ert(&state, *k_s),
        StrategyParams::Ept { k_s, p } => apply_ept(&state, *k_s, *p),
        StrategyParams::Lear { classifier, tau } => apply_lear(&mut state, group, classifier, *tau)?,
        StrategyParams::Ideal { k } => {
            // The oracle's view of the full scores is not charged.
            let full = scorer::full_scores(ens, group)?;
            let top: Vec<usize> = scorer::rank_order(&full).into_iter().take(*k).collect();
            ideal_cut(&state, &top, *k)?.0
        }
    };
    if let Some(t0) = started {
        state.cost.strategy_overhead_ns = Some(t0.elapsed().as_nanos() as u64);
    }
    state.set_decisions(decision.continue_.clone())?;
    scorer::resume_scoring(ens, group, &mut state, opts.backend)?;
    let ranking = assemble_ranking(&state, opts.merge)?;
    Ok(QueryOutcome {
        query_id: group.query_id,
        ranking,
        decision,
        cost: state.cost,
    })
}

/// Runs every query (in parallel on the current rayon pool). Outcomes and the
/// aggregate cost are in dataset order.
pub fn run_pipeline(
    ens: &Ensemble,
    ds: &Dataset,
    s: Sentinel,
    params: &StrategyParams,
    opts: PipelineOptions,
) -> Result<PipelineResult, StrategyError> {
    params.validate()?;
    let queries: Vec<QueryOutcome> = ds
        .groups
        .par_iter()
        .map(|g| run_query(ens, g, s, params, opts))
        .collect::<Result<_, _>>()?;
    let cost = queries.iter().map(|q| q.cost).sum();
    Ok(PipelineResult { queries, cost })
}

/// Set view of a decision, handy for nesting checks.
pub fn continued_set(decision: &ExitDecision) -> HashSet<usize> {
    decision
        .continue_
        .iter()
        .enumerate()
        .filter_map(|(d, &c)| c.then_some(d))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Document;
    use crate::ensemble::Tree;
    use crate::gbdt::Loss;
    use crate::metrics::ndcg_at_k;
    use proptest::prelude::*;

    fn state(partial: Vec<f64>) -> ScoringState {
        let n = partial.len();
        ScoringState {
            query_id: 0,
            sentinel: 1,
            sentinel_rank: scorer::ranks_from_scores(&partial),
            partial_score: partial,
            continued: None,
            full_score: vec![None; n],
            cost: TraversalCost::default(),
        }
    }

    fn group(n: usize, width: usize) -> QueryGroup {
        QueryGroup {
            query_id: 3,
            documents: (0..n)
                .map(|i| Document {
                    doc_index: i,
                    relevance: 0,
                    features: vec![i as f64; width],
                })
                .collect(),
        }
    }

    fn constant_classifier(width: usize) -> Forest {
        Forest {
            ensemble: Ensemble::new(vec![Tree::constant(0.0)], width, 0.0).unwrap(),
            loss: Loss::WeightedLogistic,
            degenerate: false,
        }
    }

    #[test]
    fn ert_rules() {
        let st = state(vec![3.0, 2.0, 1.0]);
        assert_eq!(apply_ert(&st, 1).continue_, vec![true, false, false]);
        assert_eq!(apply_ert(&st, 7).continue_, vec![true; 3]);
        let st = state(vec![3.0, 1.0, 2.0]);
        assert_eq!(apply_ert(&st, 2).continue_, vec![true, false, true]);
    }

    #[test]
    fn ept_rules() {
        let st = state(vec![5.0, 4.0, 3.5, 1.0]);
        assert_eq!(apply_ept(&st, 2, 0.5).continue_, vec![true, true, true, false]);
        assert_eq!(apply_ept(&st, 2, f64::INFINITY).continue_, vec![true; 4]);
        // p = 0 keeps ERT's set plus exact ties with sigma
        let st = state(vec![5.0, 4.0, 4.0, 1.0]);
        assert_eq!(apply_ert(&st, 2).continue_, vec![true, true, false, false]);
        assert_eq!(apply_ept(&st, 2, 0.0).continue_, vec![true, true, true, false]);
        // fewer documents than k_s: everything continues
        let st = state(vec![1.0, -4.0]);
        assert_eq!(apply_ept(&st, 5, 0.0).continue_, vec![true, true]);
    }

    #[test]
    fn lear_boundary_is_inclusive() {
        let g = group(3, 2);
        let clf = constant_classifier(6);
        let mut st = state(vec![1.0, 2.0, 3.0]);
        assert_eq!(apply_lear(&mut st, &g, &clf, 0.5).unwrap().continue_, vec![true; 3]);
        assert_eq!(st.cost.strategy_trees, 3);
        assert_eq!(apply_lear(&mut st, &g, &clf, 0.51).unwrap().continue_, vec![false; 3]);
        let wrong = constant_classifier(5);
        assert!(matches!(
            apply_lear(&mut st, &g, &wrong, 0.5),
            Err(StrategyError::Arity { expected: 6, actual: 5 })
        ));
    }

    #[test]
    fn ideal_cut_rules() {
        // sentinel ranks of the full top-2 are {1, 5}
        let st = state(vec![9.0, 1.0, 8.0, 7.0, 6.0, 5.0, 0.0]);
        assert_eq!(st.sentinel_rank[0], 1);
        assert_eq!(st.sentinel_rank[5], 5);
        let (dec, cut) = ideal_cut(&st, &[5, 0], 2).unwrap();
        assert_eq!(cut, 5);
        assert_eq!(dec.num_continued(), 5);
        assert_eq!(dec.ideal_cut, Some(5));

        let (_, cut) = ideal_cut(&st, &[0, 2, 3], 3).unwrap();
        assert_eq!(cut, 3);

        let st3 = state(vec![1.0, 2.0, 3.0]);
        let (dec, cut) = ideal_cut(&st3, &[2, 1, 0], 10).unwrap();
        assert_eq!(cut, 3);
        assert_eq!(dec.num_continued(), 3);

        assert!(matches!(
            ideal_cut(&st3, &[7], 1),
            Err(StrategyError::UnknownDocument(7))
        ));
    }

    #[test]
    fn assembly() {
        let mut st = state(vec![9.0, 2.0, 0.5]);
        assert!(assemble_ranking(&st, MergeRule::TwoSegment).is_err());
        st.continued = Some(vec![false, false, true]);
        st.full_score = vec![None, None, Some(1.0)];
        assert_eq!(assemble_ranking(&st, MergeRule::TwoSegment).unwrap(), vec![2, 0, 1]);
        assert_eq!(assemble_ranking(&st, MergeRule::MergeByScore).unwrap(), vec![0, 1, 2]);

        st.continued = Some(vec![false; 3]);
        assert_eq!(
            assemble_ranking(&st, MergeRule::TwoSegment).unwrap(),
            st.sentinel_order()
        );

        st.continued = Some(vec![true, false, true]);
        st.full_score = vec![None, None, Some(1.0)];
        assert!(assemble_ranking(&st, MergeRule::TwoSegment).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(StrategyParams::Ert { k_s: 0 }.validate().is_err());
        assert!(StrategyParams::Ept { k_s: 2, p: -0.1 }.validate().is_err());
        assert!(StrategyParams::Ept { k_s: 2, p: f64::NAN }.validate().is_err());
        assert!(StrategyParams::Ideal { k: 0 }.validate().is_err());
        let c = Arc::new(constant_classifier(5));
        assert!(StrategyParams::Lear {
            classifier: c.clone(),
            tau: 1.0
        }
        .validate()
        .is_err());
        assert!(StrategyParams::Lear {
            classifier: c,
            tau: 0.3
        }
        .validate()
        .is_ok());
    }

    /// Three queries scored by x0 through four unit stumps at 0.5, 1.5, 2.5, 3.5.
    fn fixture() -> (Ensemble, Dataset) {
        let trees = (0..4).map(|i| Tree::stump(0, i as f64 + 0.5, 0.0, 1.0)).collect();
        let ens = Ensemble::new(trees, 2, 0.0).unwrap();
        let mk = |qid, docs: &[(u8, f64, f64)]| QueryGroup {
            query_id: qid,
            documents: docs
                .iter()
                .enumerate()
                .map(|(i, &(r, a, b))| Document {
                    doc_index: i,
                    relevance: r,
                    features: vec![a, b],
                })
                .collect(),
        };
        let ds = Dataset {
            groups: vec![
                mk(1, &[(0, 0.0, 0.0), (2, 4.0, 0.0), (1, 2.0, 0.0)]),
                mk(2, &[(1, 3.0, 0.0), (0, 1.0, 0.0)]),
                mk(3, &[(0, 1.0, 0.0), (0, 1.2, 0.0), (3, 2.0, 0.0), (0, 3.0, 0.0)]),
            ],
            num_features: 2,
        };
        (ens, ds)
    }

    #[test]
    fn pipeline_ept_fixture() {
        let (ens, ds) = fixture();
        let s = Sentinel::new(2, &ens).unwrap();
        let out = run_pipeline(
            &ens,
            &ds,
            s,
            &StrategyParams::Ept { k_s: 2, p: 0.1 },
            PipelineOptions::default(),
        )
        .unwrap();
        // sentinel partials (first two stumps, capped at 2):
        //   q1 (0, 2, 2) -> sigma 2 -> {1, 2}
        //   q2 (2, 1)    -> sigma 1 -> {0, 1}
        //   q3 (1, 1, 2, 2) -> sigma 2 -> {2, 3}
        assert_eq!(out.continued_counts(), vec![2, 2, 2]);
        assert_eq!(out.cost.ranker_trees, (9 * 2 + 6 * 2) as u64);
        assert_eq!(out.queries[0].ranking, vec![1, 2, 0]);
        assert_eq!(out.queries[2].ranking, vec![3, 2, 0, 1]);
    }

    #[test]
    fn pipeline_degenerate_ert_matches_full() {
        let (ens, ds) = fixture();
        let s = Sentinel::new(2, &ens).unwrap();
        let ert = run_pipeline(
            &ens,
            &ds,
            s,
            &StrategyParams::Ert { k_s: 10 },
            PipelineOptions::default(),
        )
        .unwrap();
        let full = run_pipeline(&ens, &ds, s, &StrategyParams::Full, PipelineOptions::default()).unwrap();
        assert_eq!(ert.cost, full.cost);
        for (a, b) in ert.queries.iter().zip(&full.queries) {
            assert_eq!(a.ranking, b.ranking);
        }
    }

    #[test]
    fn pipeline_ideal_preserves_ndcg() {
        let (ens, ds) = fixture();
        let s = Sentinel::new(1, &ens).unwrap();
        let opts = PipelineOptions::default();
        let ideal = run_pipeline(&ens, &ds, s, &StrategyParams::Ideal { k: 1 }, opts).unwrap();
        let full = run_pipeline(&ens, &ds, s, &StrategyParams::Full, opts).unwrap();
        for ((a, b), g) in ideal.queries.iter().zip(&full.queries).zip(&ds.groups) {
            let rel = g.relevances();
            assert_eq!(
                ndcg_at_k(&a.ranking, &rel, 1).unwrap(),
                ndcg_at_k(&b.ranking, &rel, 1).unwrap()
            );
        }
        // oracle scores are free: cost counts only s + continued * (T - s)
        let continued: usize = ideal.continued_counts().iter().sum();
        assert_eq!(ideal.cost.ranker_trees, (9 + continued * 3) as u64);
    }

    proptest! {
        #[test]
        fn nesting_properties(
            partial in proptest::collection::vec(-3i32..3, 1..30),
            k_s in 1usize..10,
            p1 in 0.0f64..2.0,
            dp in 0.0f64..2.0,
        ) {
            // integer-valued scores force plenty of ties
            let st = state(partial.into_iter().map(f64::from).collect());
            let ert = continued_set(&apply_ert(&st, k_s));
            let ert_next = continued_set(&apply_ert(&st, k_s + 1));
            prop_assert!(ert.is_subset(&ert_next));
            let a = continued_set(&apply_ept(&st, k_s, p1));
            let b = continued_set(&apply_ept(&st, k_s, p1 + dp));
            prop_assert!(a.is_subset(&b));
            prop_assert!(ert.is_subset(&a));
        }

        #[test]
        fn ideal_minimality(partial in proptest::collection::vec(-5.0f64..5.0, 2..25), full in proptest::collection::vec(-5.0f64..5.0, 25), k in 1usize..6) {
            let st = state(partial);
            let n = st.n_candidates();
            let top: Vec<usize> = scorer::rank_order(&full[..n]).into_iter().take(k).collect();
            let (dec, cut) = ideal_cut(&st, &top, k).unwrap();
            for &d in &top {
                prop_assert!(dec.continue_[d]);
            }
            if n > k {
                let shorter = apply_ert(&st, cut - 1);
                prop_assert!(top.iter().any(|&d| !shorter.continue_[d]));
            }
        }
    }
}
