//! Small gradient-boosted forests: the weighted-logistic exit classifier and a
//! pointwise squared-loss ranker.
//!
//! Trees are grown best-first with exact greedy split search. For a node with
//! gradient/hessian sums `G`, `H` and a candidate split into `(G_L, H_L)` and
//! `(G_R, H_R)`, the gain is
//!
//! ```text
//! ½ [ G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ) ]
//! ```
//!
//! and a finished leaf outputs `−η · G/(H+λ)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{self, Ensemble, EnsembleError, Tree, DEFAULT_MAX_LEAVES};

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("invalid training parameters: {0}")]
    Params(String),
    #[error("invalid training data: {0}")]
    Data(String),
    #[error("squared-loss forest has no probability output")]
    NotProbabilistic,
    #[error("unknown loss `{0}`")]
    UnknownLoss(String),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    WeightedLogistic,
    Squared,
}

impl Loss {
    pub fn tag(self) -> &'static str {
        match self {
            Loss::WeightedLogistic => "logistic",
            Loss::Squared => "squared",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self, GbdtError> {
        match tag {
            "logistic" => Ok(Loss::WeightedLogistic),
            "squared" => Ok(Loss::Squared),
            other => Err(GbdtError::UnknownLoss(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub num_trees: usize,
    pub max_leaves: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub min_examples_per_leaf: usize,
    pub loss: Loss,
    /// Restricts split search to these features. `None` uses all of them.
    #[serde(default)]
    pub allowed_features: Option<Vec<usize>>,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            num_trees: 10,
            max_leaves: 32,
            learning_rate: 0.1,
            l2_lambda: 1.0,
            min_examples_per_leaf: 5,
            loss: Loss::WeightedLogistic,
            allowed_features: None,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<(), GbdtError> {
        let bad = |m: &str| Err(GbdtError::Params(m.to_string()));
        if self.num_trees < 1 {
            return bad("num_trees must be >= 1");
        }
        if !(2..=DEFAULT_MAX_LEAVES).contains(&self.max_leaves) {
            return bad("max_leaves must be in 2..=64");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("l2_lambda must be >= 0");
        }
        if self.min_examples_per_leaf < 1 {
            return bad("min_examples_per_leaf must be >= 1");
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(raw: f64) -> f64 {
    1.0 / (1.0 + (-raw).exp())
}

/// First and second derivative of the weighted log-loss w.r.t. the raw score.
#[inline]
pub fn logistic_grad_hess(raw: f64, label: f64, weight: f64) -> (f64, f64) {
    let p = sigmoid(raw);
    (weight * (p - label), weight * p * (1.0 - p))
}

#[inline]
pub fn squared_grad_hess(raw: f64, target: f64, weight: f64) -> (f64, f64) {
    (weight * (raw - target), weight)
}

/// `w · [log(1 + e^raw) − y·raw]`, computed without overflow.
#[inline]
pub fn weighted_log_loss(raw: f64, label: f64, weight: f64) -> f64 {
    let softplus = raw.max(0.0) + (-raw.abs()).exp().ln_1p();
    weight * (softplus - label * raw)
}

pub fn weighted_loss(loss: Loss, raw: &[f64], labels: &[f64], weights: &[f64]) -> f64 {
    raw.iter()
        .zip(labels)
        .zip(weights)
        .map(|((&r, &y), &w)| match loss {
            Loss::WeightedLogistic => weighted_log_loss(r, y, w),
            Loss::Squared => 0.5 * w * (r - y) * (r - y),
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub ensemble: Ensemble,
    pub loss: Loss,
    /// Set when training saw a single label value and produced a constant model.
    pub degenerate: bool,
}

impl Forest {
    pub fn num_trees(&self) -> usize {
        self.ensemble.num_trees()
    }

    pub fn num_features(&self) -> usize {
        self.ensemble.num_features()
    }

    pub fn predict_raw(&self, x: &[f64]) -> Result<f64, GbdtError> {
        Ok(self.ensemble.score_full(x)?)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, GbdtError> {
        if self.loss != Loss::WeightedLogistic {
            return Err(GbdtError::NotProbabilistic);
        }
        Ok(sigmoid(self.predict_raw(x)?))
    }

    /// Total split gain per feature, largest first. Unused features are absent.
    pub fn feature_importance(&self) -> Vec<(usize, f64)> {
        let mut totals = std::collections::BTreeMap::new();
        for t in self.ensemble.trees() {
            for (&f, &g) in t.split_feature.iter().zip(&t.split_gain) {
                *totals.entry(f).or_insert(0.0) += g;
            }
        }
        let mut out: Vec<(usize, f64)> = totals.into_iter().collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    pub fn to_json(&self) -> String {
        let doc = ensemble::to_native(&self.ensemble, Some(self.loss.tag()));
        serde_json::to_string_pretty(&doc).expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GbdtError> {
        let doc = ensemble::parse_native(text)?;
        let loss = match doc.loss.as_deref() {
            Some(tag) => Loss::from_tag(tag)?,
            None => Loss::Squared,
        };
        Ok(Forest {
            ensemble: ensemble::ensemble_from_native(doc, DEFAULT_MAX_LEAVES)?,
            loss,
            degenerate: false,
        })
    }
}

/// Progress report passed to the training observer after each round.
pub struct RoundInfo<'a> {
    /// 1-based round number.
    pub round: usize,
    pub train_loss: f64,
    pub trees: &'a [Tree],
}

pub fn train_forest(
    rows: &[Vec<f64>],
    labels: &[f64],
    weights: &[f64],
    params: &TrainParams,
) -> Result<Forest, GbdtError> {
    train_forest_observed(rows, labels, weights, params, |_| {})
}

pub fn train_forest_observed(
    rows: &[Vec<f64>],
    labels: &[f64],
    weights: &[f64],
    params: &TrainParams,
    mut observer: impl FnMut(&RoundInfo<'_>),
) -> Result<Forest, GbdtError> {
    params.validate()?;
    let n = rows.len();
    if labels.len() != n || weights.len() != n {
        return Err(GbdtError::Data(format!(
            "{n} rows, {} labels, {} weights",
            labels.len(),
            weights.len()
        )));
    }
    if n < 2 * params.min_examples_per_leaf {
        return Err(GbdtError::Data(format!(
            "{n} examples is fewer than 2 x min_examples_per_leaf"
        )));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(GbdtError::Data("rows have different lengths".into()));
    }
    if rows.iter().flatten().any(|v| v.is_nan()) {
        return Err(GbdtError::Data("NaN feature value".into()));
    }
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(GbdtError::Data("weights must be positive and finite".into()));
    }
    if params.loss == Loss::WeightedLogistic && labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(GbdtError::Data("logistic labels must be 0 or 1".into()));
    }
    let features: Vec<usize> = match &params.allowed_features {
        Some(list) => {
            if let Some(f) = list.iter().find(|&&f| f >= width) {
                return Err(GbdtError::Params(format!("allowed feature {f} >= {width}")));
            }
            let mut list = list.clone();
            list.sort_unstable();
            list.dedup();
            list
        }
        None => (0..width).collect(),
    };

    let degenerate = labels.iter().all(|&y| y == labels[0]);
    if degenerate {
        log::warn!("all training labels equal {}; model is constant", labels[0]);
        if params.loss == Loss::WeightedLogistic {
            let ensemble = Ensemble::new(vec![Tree::constant(0.0)], width, 0.0)?;
            return Ok(Forest {
                ensemble,
                loss: params.loss,
                degenerate,
            });
        }
    }

    let columns: Vec<Vec<f64>> = (0..width).map(|f| rows.iter().map(|r| r[f]).collect()).collect();
    let presorted: Vec<Vec<u32>> = features
        .iter()
        .map(|&f| {
            let col = &columns[f];
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut raw = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.num_trees);
    let mut grower = Grower {
        columns: &columns,
        features: &features,
        params,
        go_left: vec![false; n],
    };

    for round in 1..=params.num_trees {
        for i in 0..n {
            let (g, h) = match params.loss {
                Loss::WeightedLogistic => logistic_grad_hess(raw[i], labels[i], weights[i]),
                Loss::Squared => squared_grad_hess(raw[i], labels[i], weights[i]),
            };
            grad[i] = g;
            hess[i] = h;
        }
        let (tree, assignment) = grower.grow(&presorted, &grad, &hess);
        for (leaf, members) in assignment.iter().enumerate() {
            let v = tree.leaf_value[leaf];
            for &i in members {
                raw[i as usize] += v;
            }
        }
        trees.push(tree);
        observer(&RoundInfo {
            round,
            train_loss: weighted_loss(params.loss, &raw, labels, weights),
            trees: &trees,
        });
    }

    Ok(Forest {
        ensemble: Ensemble::new(trees, width, 0.0)?,
        loss: params.loss,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Candidate leaf during growth.
struct Node {
    /// Per allowed feature, member rows sorted by that feature's value.
    sorted: Vec<Vec<u32>>,
    rows: Vec<u32>,
    grad_sum: f64,
    hess_sum: f64,
    best: Option<SplitChoice>,
    /// Slot in the parent that points at this leaf: (node, is_left).
    parent: Option<(usize, bool)>,
}

struct Grower<'a> {
    columns: &'a [Vec<f64>],
    features: &'a [usize],
    params: &'a TrainParams,
    go_left: Vec<bool>,
}

#[inline]
fn gain_of(gl: f64, hl: f64, gr: f64, hr: f64, g: f64, h: f64, lambda: f64) -> f64 {
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda))
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m < b {
        m
    } else {
        a
    }
}

impl Grower<'_> {
    fn make_node(
        &self,
        sorted: Vec<Vec<u32>>,
        rows: Vec<u32>,
        grad: &[f64],
        hess: &[f64],
        parent: Option<(usize, bool)>,
    ) -> Node {
        let grad_sum = rows.iter().map(|&i| grad[i as usize]).sum();
        let hess_sum = rows.iter().map(|&i| hess[i as usize]).sum();
        let mut node = Node {
            sorted,
            rows,
            grad_sum,
            hess_sum,
            best: None,
            parent,
        };
        node.best = self.best_split(&node, grad, hess);
        node
    }

    fn best_split(&self, node: &Node, grad: &[f64], hess: &[f64]) -> Option<SplitChoice> {
        let min = self.params.min_examples_per_leaf;
        let lambda = self.params.l2_lambda;
        let n = node.rows.len();
        if n < 2 * min {
            return None;
        }
        let (g, h) = (node.grad_sum, node.hess_sum);
        let mut best: Option<SplitChoice> = None;
        for (slot, &f) in self.features.iter().enumerate() {
            let col = &self.columns[f];
            let order = &node.sorted[slot];
            let (mut gl, mut hl) = (0.0, 0.0);
            for j in 0..n - 1 {
                let i = order[j] as usize;
                gl += grad[i];
                hl += hess[i];
                let count = j + 1;
                let (v, next) = (col[i], col[order[j + 1] as usize]);
                if v == next || count < min || n - count < min {
                    continue;
                }
                let (gr, hr) = (g - gl, h - hl);
                if hl + lambda <= 0.0 || hr + lambda <= 0.0 {
                    continue;
                }
                let gain = gain_of(gl, hl, gr, hr, g, h, lambda);
                if best.is_none_or(|b| gain > b.gain) {
                    best = Some(SplitChoice {
                        feature: f,
                        threshold: midpoint(v, next),
                        gain,
                    });
                }
            }
        }
        best.filter(|b| b.gain > 0.0)
    }

    /// Grows one tree; returns it with the member rows of each leaf.
    fn grow(&mut self, presorted: &[Vec<u32>], grad: &[f64], hess: &[f64]) -> (Tree, Vec<Vec<u32>>) {
        let all: Vec<u32> = (0..grad.len() as u32).collect();
        let mut leaves = vec![self.make_node(presorted.to_vec(), all, grad, hess, None)];
        let mut tree = Tree::constant(0.0);
        tree.leaf_value.clear();

        while leaves.len() < self.params.max_leaves {
            // highest gain, earliest leaf on ties
            let pick = leaves
                .iter()
                .enumerate()
                .filter_map(|(i, l)| l.best.map(|b| (i, b.gain)))
                .fold(None::<(usize, f64)>, |acc, (i, g)| match acc {
                    Some((_, bg)) if bg >= g => acc,
                    _ => Some((i, g)),
                });
            let Some((victim, _)) = pick else { break };

            let split = leaves[victim].best.expect("picked leaf has a split");
            let parent_node = tree.split_feature.len();
            let left_leaf = victim;
            let right_leaf = leaves.len();
            if let Some((p, is_left)) = leaves[victim].parent {
                if is_left {
                    tree.left[p] = parent_node as i32;
                } else {
                    tree.right[p] = parent_node as i32;
                }
            }
            tree.split_feature.push(split.feature);
            tree.threshold.push(split.threshold);
            tree.split_gain.push(split.gain);
            tree.left.push(!(left_leaf as i32));
            tree.right.push(!(right_leaf as i32));

            let old = std::mem::replace(
                &mut leaves[victim],
                Node {
                    sorted: Vec::new(),
                    rows: Vec::new(),
                    grad_sum: 0.0,
                    hess_sum: 0.0,
                    best: None,
                    parent: None,
                },
            );
            let col = &self.columns[split.feature];
            for &i in &old.rows {
                self.go_left[i as usize] = col[i as usize] <= split.threshold;
            }
            let (mut ls, mut rs) = (
                Vec::with_capacity(old.sorted.len()),
                Vec::with_capacity(old.sorted.len()),
            );
            for list in old.sorted {
                let (l, r): (Vec<u32>, Vec<u32>) = list.into_iter().partition(|&i| self.go_left[i as usize]);
                ls.push(l);
                rs.push(r);
            }
            let (lrows, rrows): (Vec<u32>, Vec<u32>) = old.rows.into_iter().partition(|&i| self.go_left[i as usize]);
            leaves[victim] = self.make_node(ls, lrows, grad, hess, Some((parent_node, true)));
            leaves.push(self.make_node(rs, rrows, grad, hess, Some((parent_node, false))));
        }

        let lambda = self.params.l2_lambda;
        let eta = self.params.learning_rate;
        let mut assignment = Vec::with_capacity(leaves.len());
        for leaf in leaves {
            let denom = leaf.hess_sum + lambda;
            let value = if denom > 0.0 { -eta * leaf.grad_sum / denom } else { 0.0 };
            tree.leaf_value.push(value);
            assignment.push(leaf.rows);
        }
        (tree, assignment)
    }
}
