//! Ranking quality, classifier quality and cost metrics.

use serde::Serialize;
use thiserror::Error;

use crate::exitset::ExitLabel;
use crate::scorer::TraversalCost;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("ranking is not a permutation of {n} documents")]
    NotPermutation { n: usize },
    #[error("cut statistics need at least one query")]
    NoQueries,
    #[error("speedup denominator is zero")]
    ZeroCost,
    #[error("wall-clock speedup requested but no timings were recorded")]
    NoTimings,
    #[error("{0} and {1} labels")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    /// `2^rel − 1`
    #[default]
    Exponential,
    /// `rel`
    Linear,
}

/// What to do with queries that have no relevant documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroIdcg {
    #[default]
    ScoreOne,
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct NdcgConfig {
    pub gain: Gain,
    pub zero_idcg: ZeroIdcg,
}

fn gain(rel: u8, kind: Gain) -> f64 {
    match kind {
        Gain::Exponential => 2f64.powi(rel as i32) - 1.0,
        Gain::Linear => rel as f64,
    }
}

fn dcg(rels: impl Iterator<Item = u8>, k: usize, kind: Gain) -> f64 {
    rels.take(k)
        .enumerate()
        .map(|(i, r)| gain(r, kind) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k with the default conventions (exponential gain, zero-IDCG scores 1).
pub fn ndcg_at_k(ranking: &[usize], relevances: &[u8], k: usize) -> Result<f64, MetricsError> {
    Ok(ndcg_with(ranking, relevances, k, NdcgConfig::default())?.unwrap_or(1.0))
}

/// NDCG@k; `None` for a zero-IDCG query under [`ZeroIdcg::Skip`].
pub fn ndcg_with(ranking: &[usize], relevances: &[u8], k: usize, cfg: NdcgConfig) -> Result<Option<f64>, MetricsError> {
    let n = relevances.len();
    let mut seen = vec![false; n];
    if ranking.len() != n || ranking.iter().any(|&d| d >= n || std::mem::replace(&mut seen[d], true)) {
        return Err(MetricsError::NotPermutation { n });
    }
    let mut ideal = relevances.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter(), k, cfg.gain);
    if idcg == 0.0 {
        return Ok(match cfg.zero_idcg {
            ZeroIdcg::ScoreOne => Some(1.0),
            ZeroIdcg::Skip => None,
        });
    }
    Ok(Some(dcg(ranking.iter().map(|&d| relevances[d]), k, cfg.gain) / idcg))
}

/// Mean over queries, summed in query order; skipped queries are left out.
pub fn mean_ndcg(per_query: &[Option<f64>]) -> f64 {
    let kept: Vec<f64> = per_query.iter().flatten().copied().collect();
    if kept.is_empty() {
        return 0.0;
    }
    kept.iter().sum::<f64>() / kept.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassReport {
    #[serde(rename = "continue")]
    pub continue_: PrecisionRecall,
    pub exit: PrecisionRecall,
}

fn per_class(truth: &[ExitLabel], pred: &[ExitLabel], class: ExitLabel) -> PrecisionRecall {
    let tp = truth
        .iter()
        .zip(pred)
        .filter(|(t, p)| **t == class && **p == class)
        .count();
    let predicted = pred.iter().filter(|p| **p == class).count();
    let actual = truth.iter().filter(|t| **t == class).count();
    PrecisionRecall {
        precision: if predicted == 0 {
            1.0
        } else {
            tp as f64 / predicted as f64
        },
        recall: if actual == 0 { 1.0 } else { tp as f64 / actual as f64 },
        support: actual,
    }
}

/// Per-class precision and recall. A class never predicted has precision 1;
/// a class never present has recall 1.
pub fn precision_recall(truth: &[ExitLabel], pred: &[ExitLabel]) -> Result<ClassReport, MetricsError> {
    if truth.len() != pred.len() {
        return Err(MetricsError::LengthMismatch(truth.len(), pred.len()));
    }
    Ok(ClassReport {
        continue_: per_class(truth, pred, ExitLabel::Continue),
        exit: per_class(truth, pred, ExitLabel::Exit),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    #[default]
    TreeCount,
    WallClock,
}

/// Measured latency of a whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Latency {
    pub nanos: u64,
}

/// Tree-count speedup: full ranker traversals over early-exit ranker plus
/// classifier traversals.
pub fn speedup(ee: &TraversalCost, full: &TraversalCost) -> Result<f64, MetricsError> {
    let denom = ee.ranker_trees + ee.strategy_trees;
    if denom == 0 {
        return Err(MetricsError::ZeroCost);
    }
    Ok(full.ranker_trees as f64 / denom as f64)
}

pub fn speedup_with(
    mode: CostMode,
    ee: &TraversalCost,
    full: &TraversalCost,
    timings: Option<(Latency, Latency)>,
) -> Result<f64, MetricsError> {
    match mode {
        CostMode::TreeCount => speedup(ee, full),
        CostMode::WallClock => {
            let (ee_t, full_t) = timings.ok_or(MetricsError::NoTimings)?;
            if ee_t.nanos == 0 {
                return Err(MetricsError::ZeroCost);
            }
            Ok(full_t.nanos as f64 / ee_t.nanos as f64)
        }
    }
}

/// Population mean and standard deviation of per-query continued counts.
pub fn cut_statistics(counts: &[usize]) -> Result<(f64, f64), MetricsError> {
    if counts.is_empty() {
        return Err(MetricsError::NoQueries);
    }
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// One point on an efficiency/effectiveness curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub strategy: String,
    pub sentinel: usize,
    pub threshold: Option<f64>,
    pub ndcg: f64,
    pub delta_pct: f64,
    pub speedup: f64,
    pub ks_mu: f64,
    pub ks_sigma: f64,
}

pub fn delta_pct(ndcg: f64, ndcg_full: f64) -> f64 {
    if ndcg_full == 0.0 {
        return 0.0;
    }
    100.0 * (ndcg - ndcg_full) / ndcg_full
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ExitLabel::*;

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[0, 1], &[3, 2], 2).unwrap(), 1.0);
        let v = ndcg_at_k(&[0, 1], &[0, 3], 2).unwrap();
        assert_abs_diff_eq!(v, 1.0 / 3f64.log2(), epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.6309, epsilon = 1e-4);
        assert_eq!(ndcg_at_k(&[1, 0], &[0, 0], 10).unwrap(), 1.0);
    }

    #[test]
    fn ndcg_conventions() {
        let skip = NdcgConfig {
            zero_idcg: ZeroIdcg::Skip,
            ..NdcgConfig::default()
        };
        assert_eq!(ndcg_with(&[0], &[0], 10, skip).unwrap(), None);
        assert_eq!(mean_ndcg(&[Some(1.0), None, Some(0.5)]), 0.75);

        let lin = NdcgConfig {
            gain: Gain::Linear,
            ..NdcgConfig::default()
        };
        // rels (0,3) linear: (3/log2 3) / 3
        let v = ndcg_with(&[0, 1], &[0, 3], 2, lin).unwrap().unwrap();
        assert_abs_diff_eq!(v, 1.0 / 3f64.log2(), epsilon = 1e-12);
        // rels (1, 2) linear vs exponential differ
        let e = ndcg_at_k(&[0, 1], &[1, 2], 2).unwrap();
        let l = ndcg_with(&[0, 1], &[1, 2], 2, lin).unwrap().unwrap();
        assert!(e < l);
    }

    #[test]
    fn ndcg_cutoff_ignores_tail() {
        assert_eq!(ndcg_at_k(&[0, 1, 2], &[2, 0, 4], 1).unwrap(), 3.0 / 15.0);
    }

    #[test]
    fn ndcg_rejects_non_permutations() {
        assert!(ndcg_at_k(&[0, 0], &[1, 1], 2).is_err());
        assert!(ndcg_at_k(&[0], &[1, 1], 2).is_err());
        assert!(ndcg_at_k(&[0, 2], &[1, 1], 2).is_err());
    }

    #[test]
    fn pr_examples() {
        let r = precision_recall(&[Continue, Exit], &[Continue, Exit]).unwrap();
        assert_eq!((r.continue_.precision, r.continue_.recall), (1.0, 1.0));
        assert_eq!((r.exit.precision, r.exit.recall), (1.0, 1.0));

        let r = precision_recall(&[Continue, Continue, Exit, Exit], &[Continue, Exit, Exit, Exit]).unwrap();
        assert_eq!((r.continue_.precision, r.continue_.recall), (1.0, 0.5));
        assert_abs_diff_eq!(r.exit.precision, 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(r.exit.recall, 1.0);

        let r = precision_recall(&[Continue, Exit], &[Exit, Exit]).unwrap();
        assert_eq!(r.continue_.recall, 0.0);
        assert_eq!(r.continue_.precision, 1.0);

        let r = precision_recall(&[Exit, Exit], &[Exit, Continue]).unwrap();
        assert_eq!(r.continue_.recall, 1.0);
    }

    #[test]
    fn speedup_examples() {
        // T=100, s=50, two documents, one continues, 10-tree classifier
        let full = TraversalCost {
            ranker_trees: 200,
            ..Default::default()
        };
        let ee = TraversalCost {
            ranker_trees: 50 + 50 + 50,
            strategy_trees: 20,
            strategy_overhead_ns: None,
        };
        assert_eq!(speedup(&ee, &full).unwrap(), 200.0 / 170.0);
        assert_eq!(speedup(&full, &full).unwrap(), 1.0);
        let half = TraversalCost {
            ranker_trees: 100,
            ..Default::default()
        };
        assert_eq!(speedup(&half, &full).unwrap(), 2.0);
        assert_eq!(speedup(&TraversalCost::default(), &full), Err(MetricsError::ZeroCost));
    }

    #[test]
    fn wall_clock_speedup() {
        let c = TraversalCost::default();
        assert_eq!(
            speedup_with(CostMode::WallClock, &c, &c, None),
            Err(MetricsError::NoTimings)
        );
        let t = Some((Latency { nanos: 50 }, Latency { nanos: 150 }));
        assert_eq!(speedup_with(CostMode::WallClock, &c, &c, t).unwrap(), 3.0);
    }

    #[test]
    fn cut_stats() {
        assert_eq!(cut_statistics(&[10, 10, 10]).unwrap(), (10.0, 0.0));
        assert_eq!(cut_statistics(&[10, 30]).unwrap(), (20.0, 10.0));
        assert_eq!(cut_statistics(&[]), Err(MetricsError::NoQueries));
    }

    #[test]
    fn delta() {
        assert_eq!(delta_pct(0.5, 0.5), 0.0);
        assert_abs_diff_eq!(delta_pct(0.5169, 0.5249), -1.524, epsilon = 1e-3);
    }
}
