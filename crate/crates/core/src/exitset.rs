//! Training examples for the learned exit classifier.
//!
//! A document is labelled Continue when the full ensemble ranks it within the
//! top `k` and it is relevant; every other document is Exit. Each example
//! carries the raw features plus four values known at the sentinel:
//!
//! | index | value |
//! |-------|-------|
//! | `F`   | partial score |
//! | `F+1` | per-query min-max normalised partial score |
//! | `F+2` | sentinel rank (1-based) |
//! | `F+3` | number of candidates in the query |

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::data::{Dataset, Document};
use crate::ensemble::Ensemble;
use crate::scorer::{self, Backend, ScoringError, ScoringState, Sentinel};

pub const AUGMENTED_EXTRA: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExitLabel {
    Exit = 0,
    Continue = 1,
}

impl ExitLabel {
    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn is_continue(self) -> bool {
        self == ExitLabel::Continue
    }
}

#[derive(Debug, Error)]
pub enum ExitSetError {
    #[error("label cutoff k must be >= 1")]
    Cutoff,
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitExample {
    pub features: Vec<f64>,
    pub label: ExitLabel,
    pub weight: f64,
    pub query_id: u64,
    pub doc_index: usize,
}

/// Labels documents of one query from its full-ensemble ranking.
pub fn label_documents(full_ranking: &[usize], relevances: &[u8], k: usize) -> Result<Vec<ExitLabel>, ExitSetError> {
    if k < 1 {
        return Err(ExitSetError::Cutoff);
    }
    let mut labels = vec![ExitLabel::Exit; relevances.len()];
    for &d in full_ranking.iter().take(k) {
        if relevances[d] >= 1 {
            labels[d] = ExitLabel::Continue;
        }
    }
    Ok(labels)
}

/// Appends the sentinel features of `doc` to its raw features.
pub fn augment_features(doc: &Document, state: &ScoringState) -> Vec<f64> {
    let (lo, hi) = min_max(&state.partial_score);
    augment_with(doc, state, lo, hi)
}

fn min_max(scores: &[f64]) -> (f64, f64) {
    scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
        (lo.min(s), hi.max(s))
    })
}

fn augment_with(doc: &Document, state: &ScoringState, lo: f64, hi: f64) -> Vec<f64> {
    let d = doc.doc_index;
    let score = state.partial_score[d];
    let minmax = if hi == lo { 0.5 } else { (score - lo) / (hi - lo) };
    let mut out = Vec::with_capacity(doc.features.len() + AUGMENTED_EXTRA);
    out.extend_from_slice(&doc.features);
    out.extend_from_slice(&[
        score,
        minmax,
        state.sentinel_rank[d] as f64,
        state.n_candidates() as f64,
    ]);
    out
}

/// Augmented vectors for every document of the query, in doc_index order.
pub fn augment_group(docs: &[Document], state: &ScoringState) -> Vec<Vec<f64>> {
    let (lo, hi) = min_max(&state.partial_score);
    docs.iter().map(|d| augment_with(d, state, lo, hi)).collect()
}

/// `2^relevance / f_q(label)` where `f_q` is the share of the query's
/// candidates carrying `label`.
pub fn compute_weight(relevance: u8, label: ExitLabel, counts: (usize, usize), n: usize) -> f64 {
    let own = match label {
        ExitLabel::Continue => counts.0,
        ExitLabel::Exit => counts.1,
    };
    let freq = own as f64 / n as f64;
    2f64.powi(relevance as i32) / freq
}

/// One example per document, ordered by query (dataset order) then doc_index.
pub fn build_exit_training_set(
    ens: &Ensemble,
    ds: &Dataset,
    s: Sentinel,
    k: usize,
) -> Result<Vec<ExitExample>, ExitSetError> {
    if k < 1 {
        return Err(ExitSetError::Cutoff);
    }
    let per_query: Vec<Vec<ExitExample>> = ds
        .groups
        .par_iter()
        .map(|g| -> Result<Vec<ExitExample>, ExitSetError> {
            let full = scorer::full_scores(ens, g)?;
            let ranking = scorer::rank_order(&full);
            let labels = label_documents(&ranking, &g.relevances(), k)?;
            let n_cont = labels.iter().filter(|l| l.is_continue()).count();
            let counts = (n_cont, g.len() - n_cont);
            let state = scorer::score_prefix(ens, g, s, Backend::DocumentMajor)?;
            let feats = augment_group(&g.documents, &state);
            Ok(g.documents
                .iter()
                .zip(feats)
                .map(|(d, features)| ExitExample {
                    features,
                    label: labels[d.doc_index],
                    weight: compute_weight(d.relevance, labels[d.doc_index], counts, g.len()),
                    query_id: g.query_id,
                    doc_index: d.doc_index,
                })
                .collect())
        })
        .collect::<Result<_, _>>()?;
    Ok(per_query.into_iter().flatten().collect())
}

/// Splits examples into the parallel arrays expected by the trainer.
pub fn to_training_arrays(examples: &[ExitExample]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let rows = examples.iter().map(|e| e.features.clone()).collect();
    let labels = examples.iter().map(|e| e.label.as_f64()).collect();
    let weights = examples.iter().map(|e| e.weight).collect();
    (rows, labels, weights)
}

/// Writes the examples as LETOR lines (label 0/1) and the weights as a sidecar,
/// one value per line in the same order.
pub fn write_dump<W1: Write, W2: Write>(
    examples: &[ExitExample],
    mut letor: W1,
    mut weights: W2,
) -> std::io::Result<()> {
    for e in examples {
        write!(letor, "{} qid:{}", e.label as u8, e.query_id)?;
        for (i, v) in e.features.iter().enumerate() {
            if *v != 0.0 {
                write!(letor, " {}:{}", i + 1, v)?;
            }
        }
        writeln!(letor, " # doc {}", e.doc_index)?;
        writeln!(weights, "{}", e.weight)?;
    }
    Ok(())
}
