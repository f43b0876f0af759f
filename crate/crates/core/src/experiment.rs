//! Evaluation of exit strategies against the full ensemble: NDCG, speedup and
//! cut statistics per (strategy, sentinel, threshold), plus classifier reports.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::ensemble::Ensemble;
use crate::exitset::{self, ExitLabel};
use crate::gbdt::Forest;
use crate::metrics::{self, ClassReport, CostMode, Latency, NdcgConfig, TradeoffPoint};
use crate::scorer::{Sentinel, TraversalCost};
use crate::strategies::{run_pipeline, PipelineOptions, PipelineResult, StrategyParams};
use crate::Error;

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub ndcg_k: usize,
    pub ndcg: NdcgConfig,
    pub pipeline: PipelineOptions,
    pub cost_mode: CostMode,
    /// Repetitions for wall-clock timing; the median is reported.
    pub timing_reps: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ndcg_k: 10,
            ndcg: NdcgConfig::default(),
            pipeline: PipelineOptions::default(),
            cost_mode: CostMode::TreeCount,
            timing_reps: 5,
        }
    }
}

/// The full-ensemble reference every strategy is compared against.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub per_query_ndcg: Vec<Option<f64>>,
    pub ndcg: f64,
    pub cost: TraversalCost,
    pub latency: Option<Latency>,
}

pub fn per_query_ndcg(ds: &Dataset, result: &PipelineResult, opts: &EvalOptions) -> Result<Vec<Option<f64>>, Error> {
    ds.groups
        .iter()
        .zip(&result.queries)
        .map(|(g, q)| metrics::ndcg_with(&q.ranking, &g.relevances(), opts.ndcg_k, opts.ndcg).map_err(Error::from))
        .collect()
}

fn median_latency(reps: usize, mut run: impl FnMut() -> Result<(), Error>) -> Result<Latency, Error> {
    let mut samples = Vec::with_capacity(reps.max(5));
    for _ in 0..reps.max(5) {
        let t0 = Instant::now();
        run()?;
        samples.push(t0.elapsed().as_nanos() as u64);
    }
    samples.sort_unstable();
    Ok(Latency {
        nanos: samples[samples.len() / 2],
    })
}

pub fn baseline(ens: &Ensemble, ds: &Dataset, opts: &EvalOptions) -> Result<Baseline, Error> {
    let s = Sentinel::new(ens.num_trees(), ens)?;
    let result = run_pipeline(ens, ds, s, &StrategyParams::Full, opts.pipeline)?;
    let per_query_ndcg = per_query_ndcg(ds, &result, opts)?;
    let latency = match opts.cost_mode {
        CostMode::TreeCount => None,
        CostMode::WallClock => Some(median_latency(opts.timing_reps, || {
            run_pipeline(ens, ds, s, &StrategyParams::Full, opts.pipeline)?;
            Ok(())
        })?),
    };
    Ok(Baseline {
        ndcg: metrics::mean_ndcg(&per_query_ndcg),
        per_query_ndcg,
        cost: result.cost,
        latency,
    })
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub point: TradeoffPoint,
    pub per_query_ndcg: Vec<Option<f64>>,
    pub result: PipelineResult,
}

pub fn evaluate(
    ens: &Ensemble,
    ds: &Dataset,
    s: Sentinel,
    params: &StrategyParams,
    base: &Baseline,
    opts: &EvalOptions,
) -> Result<Evaluation, Error> {
    let result = run_pipeline(ens, ds, s, params, opts.pipeline)?;
    let per_query = per_query_ndcg(ds, &result, opts)?;
    let ndcg = metrics::mean_ndcg(&per_query);
    let timings = match opts.cost_mode {
        CostMode::TreeCount => None,
        CostMode::WallClock => {
            let ee = median_latency(opts.timing_reps, || {
                run_pipeline(ens, ds, s, params, opts.pipeline)?;
                Ok(())
            })?;
            Some((ee, base.latency.ok_or(metrics::MetricsError::NoTimings)?))
        }
    };
    let speedup = metrics::speedup_with(opts.cost_mode, &result.cost, &base.cost, timings)?;
    let (ks_mu, ks_sigma) = metrics::cut_statistics(&result.continued_counts())?;
    Ok(Evaluation {
        point: TradeoffPoint {
            strategy: params.name().to_string(),
            sentinel: s.get(),
            threshold: params.threshold(),
            ndcg,
            delta_pct: metrics::delta_pct(ndcg, base.ndcg),
            speedup,
            ks_mu,
            ks_sigma,
        },
        per_query_ndcg: per_query,
        result,
    })
}

pub const CSV_HEADER: &str = "strategy,sentinel,threshold,ndcg,delta_pct,speedup,ks_mu,ks_sigma";

pub fn csv_row(p: &TradeoffPoint) -> String {
    let threshold = p.threshold.map(|t| t.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{}",
        p.strategy, p.sentinel, threshold, p.ndcg, p.delta_pct, p.speedup, p.ks_mu, p.ks_sigma
    )
}

/// Threshold grid `start, start+step, ..., end` computed as integer multiples
/// so values print cleanly (0.3, not 0.30000000000000004).
pub fn grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0);
    let scale = 1e9;
    let (a, b, h) = (
        (start * scale).round() as i64,
        (end * scale).round() as i64,
        (step * scale).round() as i64,
    );
    (0..)
        .map(|i| a + i * h)
        .take_while(|&v| v <= b)
        .map(|v| {
            let x = v as f64 / scale;
            // snap to the shortest decimal of at most nine places
            format!("{x:.9}").parse::<f64>().unwrap_or(x)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TauRow {
    pub tau: f64,
    #[serde(flatten)]
    pub report: ClassReport,
    pub continued_fraction: f64,
}

/// Labels and Continue probabilities of every document in `ds` at sentinel `s`.
pub fn classifier_outputs(
    ens: &Ensemble,
    ds: &Dataset,
    s: Sentinel,
    k_label: usize,
    classifier: &Forest,
) -> Result<(Vec<ExitLabel>, Vec<f64>), Error> {
    let examples = exitset::build_exit_training_set(ens, ds, s, k_label)?;
    let probs = examples
        .par_iter()
        .map(|e| classifier.predict_proba(&e.features))
        .collect::<Result<Vec<f64>, _>>()?;
    Ok((examples.iter().map(|e| e.label).collect(), probs))
}

pub fn tau_report(truth: &[ExitLabel], probs: &[f64], taus: &[f64]) -> Result<Vec<TauRow>, Error> {
    taus.iter()
        .map(|&tau| {
            let pred: Vec<ExitLabel> = probs
                .iter()
                .map(|&p| if p >= tau { ExitLabel::Continue } else { ExitLabel::Exit })
                .collect();
            let kept = pred.iter().filter(|l| l.is_continue()).count();
            Ok(TauRow {
                tau,
                report: metrics::precision_recall(truth, &pred)?,
                continued_fraction: if pred.is_empty() {
                    0.0
                } else {
                    kept as f64 / pred.len() as f64
                },
            })
        })
        .collect()
}

/// Highest Continue recall among rows meeting the Exit-recall floor; ties go
/// to the larger tau.
pub fn pick_tau(rows: &[TauRow], exit_recall_floor: f64) -> Option<f64> {
    rows.iter()
        .filter(|r| r.report.exit.recall >= exit_recall_floor)
        .fold(None::<&TauRow>, |best, r| match best {
            Some(b) if b.report.continue_.recall > r.report.continue_.recall => Some(b),
            Some(b) if b.report.continue_.recall == r.report.continue_.recall && b.tau > r.tau => Some(b),
            _ => Some(r),
        })
        .map(|r| r.tau)
}
