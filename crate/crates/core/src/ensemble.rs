//! Additive regression-tree ensembles.
//!
//! Trees use the flat array layout shared by LightGBM dumps and the native
//! JSON schema: internal node `i` splits on `split_feature[i]` at
//! `threshold[i]`; a child reference `c >= 0` is internal node `c`, and
//! `c < 0` is leaf `-(c + 1)`. A tree with no internal nodes is a single leaf.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_LEAVES: usize = 64;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("tree {tree}: {reason}")]
    InvalidTree { tree: usize, reason: String },
    #[error("ensemble has no trees")]
    NoTrees,
    #[error("feature vector has length {actual}, model expects {expected}")]
    FeatureCount { expected: usize, actual: usize },
    #[error("feature {index} is NaN")]
    MissingValue { index: usize },
    #[error("model schema violation at `{path}`: {reason}")]
    Schema { path: String, reason: String },
    #[error("LightGBM dump, {block}: {reason}")]
    LightGbm { block: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub split_feature: Vec<usize>,
    pub threshold: Vec<f64>,
    pub left: Vec<i32>,
    pub right: Vec<i32>,
    pub leaf_value: Vec<f64>,
    /// Loss reduction of each split, when known. Feeds feature importance.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub split_gain: Vec<f64>,
}

#[inline]
fn leaf_of(child: i32) -> Option<usize> {
    (child < 0).then_some((!child) as usize)
}

impl Tree {
    /// A tree that always returns `value`.
    pub fn constant(value: f64) -> Self {
        Tree {
            split_feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            leaf_value: vec![value],
            split_gain: Vec::new(),
        }
    }

    /// Single split: `x[feature] <= threshold` gives `left_value`.
    pub fn stump(feature: usize, threshold: f64, left_value: f64, right_value: f64) -> Self {
        Tree {
            split_feature: vec![feature],
            threshold: vec![threshold],
            left: vec![-1],
            right: vec![-2],
            leaf_value: vec![left_value, right_value],
            split_gain: Vec::new(),
        }
    }

    pub fn num_leaves(&self) -> usize {
        self.leaf_value.len()
    }

    pub fn num_internal(&self) -> usize {
        self.split_feature.len()
    }

    /// Checks the structural invariants: consistent array lengths,
    /// `leaves = internal + 1`, and every node except the root reached exactly once.
    pub fn validate(&self, num_features: usize, max_leaves: usize) -> Result<(), String> {
        let m = self.split_feature.len();
        if self.threshold.len() != m || self.left.len() != m || self.right.len() != m {
            return Err("split arrays have inconsistent lengths".into());
        }
        if !self.split_gain.is_empty() && self.split_gain.len() != m {
            return Err("split_gain length does not match split count".into());
        }
        if self.leaf_value.len() != m + 1 {
            return Err(format!("{} leaves for {} internal nodes", self.leaf_value.len(), m));
        }
        if self.leaf_value.len() > max_leaves {
            return Err(format!(
                "{} leaves exceeds the limit of {max_leaves}",
                self.leaf_value.len()
            ));
        }
        if let Some(f) = self.split_feature.iter().find(|&&f| f >= num_features) {
            return Err(format!("split on feature {f} but model has {num_features}"));
        }
        if self.threshold.iter().any(|t| t.is_nan()) {
            return Err("NaN threshold".into());
        }
        let mut node_seen = vec![false; m];
        let mut leaf_seen = vec![false; m + 1];
        for &c in self.left.iter().chain(&self.right) {
            match leaf_of(c) {
                Some(l) => {
                    if l > m || std::mem::replace(&mut leaf_seen[l], true) {
                        return Err(format!("leaf reference {c} invalid or repeated"));
                    }
                }
                None => {
                    let c = c as usize;
                    if c == 0 || c >= m || std::mem::replace(&mut node_seen[c], true) {
                        return Err(format!("node reference {c} invalid or repeated"));
                    }
                }
            }
        }
        // m + 1 distinct leaves and m - 1 distinct non-root nodes over 2m slots
        // means every node has a single parent; reachability from the root
        // rules out detached cycles.
        if m > 0 {
            let mut stack = vec![0usize];
            let mut reached = 0;
            while let Some(n) = stack.pop() {
                reached += 1;
                if reached > m {
                    return Err("cycle among internal nodes".into());
                }
                for c in [self.left[n], self.right[n]] {
                    if c >= 0 {
                        stack.push(c as usize);
                    }
                }
            }
            if reached != m {
                return Err("internal nodes unreachable from the root".into());
            }
        }
        Ok(())
    }

    /// Routes `x` to a leaf (`x[f] <= threshold` goes left) and returns its value.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.split_feature.is_empty() {
            return self.leaf_value[0];
        }
        let mut node = 0usize;
        loop {
            let next = if x[self.split_feature[node]] <= self.threshold[node] {
                self.left[node]
            } else {
                self.right[node]
            };
            match leaf_of(next) {
                Some(l) => return self.leaf_value[l],
                None => node = next as usize,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    trees: Vec<Tree>,
    num_features: usize,
    base_score: f64,
}

impl Ensemble {
    pub fn new(trees: Vec<Tree>, num_features: usize, base_score: f64) -> Result<Self, EnsembleError> {
        Self::with_max_leaves(trees, num_features, base_score, DEFAULT_MAX_LEAVES)
    }

    pub fn with_max_leaves(
        trees: Vec<Tree>,
        num_features: usize,
        base_score: f64,
        max_leaves: usize,
    ) -> Result<Self, EnsembleError> {
        if trees.is_empty() {
            return Err(EnsembleError::NoTrees);
        }
        for (i, t) in trees.iter().enumerate() {
            t.validate(num_features, max_leaves)
                .map_err(|reason| EnsembleError::InvalidTree { tree: i, reason })?;
        }
        Ok(Ensemble {
            trees,
            num_features,
            base_score,
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    /// Length and NaN checks applied before any scoring.
    pub fn check_features(&self, x: &[f64]) -> Result<(), EnsembleError> {
        if x.len() != self.num_features {
            return Err(EnsembleError::FeatureCount {
                expected: self.num_features,
                actual: x.len(),
            });
        }
        if let Some(index) = x.iter().position(|v| v.is_nan()) {
            return Err(EnsembleError::MissingValue { index });
        }
        Ok(())
    }

    /// Adds trees `range` to `acc` in ascending tree order.
    #[inline]
    pub fn accumulate(&self, acc: f64, x: &[f64], range: std::ops::Range<usize>) -> f64 {
        self.trees[range].iter().fold(acc, |s, t| s + t.eval(x))
    }

    /// `base + Σ tree_t(x)` over the first `s` trees, unchecked.
    pub fn score_prefix_unchecked(&self, x: &[f64], s: usize) -> f64 {
        self.accumulate(self.base_score, x, 0..s)
    }

    pub fn score_full(&self, x: &[f64]) -> Result<f64, EnsembleError> {
        self.check_features(x)?;
        Ok(self.accumulate(self.base_score, x, 0..self.trees.len()))
    }

    /// Sum of tree outputs in `range`, without the base score.
    pub fn score_range(&self, x: &[f64], range: std::ops::Range<usize>) -> Result<f64, EnsembleError> {
        self.check_features(x)?;
        Ok(self.accumulate(0.0, x, range))
    }
}

/// On-disk JSON model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NativeModel {
    pub num_features: usize,
    pub base_score: f64,
    pub trees: Vec<Tree>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<String>,
}

pub fn to_native(ens: &Ensemble, loss: Option<&str>) -> NativeModel {
    NativeModel {
        num_features: ens.num_features,
        base_score: ens.base_score,
        trees: ens.trees.clone(),
        loss: loss.map(str::to_string),
    }
}

pub fn save_native(ens: &Ensemble) -> String {
    serde_json::to_string_pretty(&to_native(ens, None)).expect("model serializes")
}

pub fn parse_native(text: &str) -> Result<NativeModel, EnsembleError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| EnsembleError::Schema {
        path: e.path().to_string(),
        reason: e.inner().to_string(),
    })
}

pub fn ensemble_from_native(model: NativeModel, max_leaves: usize) -> Result<Ensemble, EnsembleError> {
    if model.trees.is_empty() {
        return Err(EnsembleError::Schema {
            path: "trees".into(),
            reason: "at least one tree is required".into(),
        });
    }
    Ensemble::with_max_leaves(model.trees, model.num_features, model.base_score, max_leaves).map_err(|e| match e {
        EnsembleError::InvalidTree { tree, reason } => EnsembleError::Schema {
            path: format!("trees[{tree}]"),
            reason,
        },
        other => other,
    })
}

pub fn load_native(text: &str) -> Result<Ensemble, EnsembleError> {
    ensemble_from_native(parse_native(text)?, DEFAULT_MAX_LEAVES)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn depth2() -> Tree {
        // f0 <= 1.0 ? (f1 <= 2.0 ? 10 : 20) : 30
        Tree {
            split_feature: vec![0, 1],
            threshold: vec![1.0, 2.0],
            left: vec![1, -1],
            right: vec![-3, -2],
            leaf_value: vec![10.0, 20.0, 30.0],
            split_gain: Vec::new(),
        }
    }

    #[test]
    fn stump_boundary_goes_left() {
        let t = Tree::stump(0, 0.5, -1.0, 2.0);
        assert_eq!(t.eval(&[0.5]), -1.0);
        assert_eq!(t.eval(&[0.6]), 2.0);
    }

    #[test]
    fn depth_two_left_right_leaf() {
        assert_eq!(depth2().eval(&[0.0, 3.0]), 20.0);
        assert_eq!(depth2().eval(&[0.0, 1.0]), 10.0);
        assert_eq!(depth2().eval(&[1.5, 1.0]), 30.0);
    }

    #[test]
    fn additive_scores() {
        let ens = Ensemble::new(vec![Tree::constant(1.0), Tree::stump(0, 5.0, 1.0, 0.0)], 1, 0.0).unwrap();
        assert_eq!(ens.score_full(&[0.0]).unwrap(), 2.0);
        let ens = Ensemble::new(vec![Tree::constant(1.0)], 1, 0.25).unwrap();
        assert_eq!(ens.score_full(&[0.0]).unwrap(), 1.25);
    }

    #[test]
    fn rejects_bad_inputs() {
        let ens = Ensemble::new(vec![depth2()], 2, 0.0).unwrap();
        assert!(matches!(
            ens.score_full(&[1.0]),
            Err(EnsembleError::FeatureCount { .. })
        ));
        assert!(matches!(
            ens.score_full(&[1.0, f64::NAN]),
            Err(EnsembleError::MissingValue { index: 1 })
        ));
    }

    #[test]
    fn structural_validation() {
        assert!(matches!(Ensemble::new(vec![], 1, 0.0), Err(EnsembleError::NoTrees)));
        // feature out of range
        assert!(Ensemble::new(vec![depth2()], 1, 0.0).is_err());
        // leaf referenced twice
        let mut t = depth2();
        t.right[1] = -1;
        assert!(t.validate(2, 64).is_err());
        // self loop
        let mut t = depth2();
        t.left[1] = 1;
        assert!(t.validate(2, 64).is_err());
        // leaf budget
        assert!(depth2().validate(2, 2).is_err());
        let mut t = depth2();
        t.leaf_value.pop();
        assert!(t.validate(2, 64).is_err());
    }

    #[test]
    fn native_round_trip() {
        let ens = Ensemble::new(vec![Tree::stump(0, 0.5, -1.0, 2.0)], 1, 0.0).unwrap();
        let text = save_native(&ens);
        assert_eq!(load_native(&text).unwrap(), ens);
    }

    #[test]
    fn native_rejects_empty_and_reports_path() {
        let err = load_native(r#"{"num_features":1,"base_score":0,"trees":[]}"#).unwrap_err();
        assert!(err.to_string().contains("trees"), "{err}");

        let bad = r#"{"num_features":1,"base_score":0,"trees":[{"split_feature":[0],"threshold":["x"],"left":[-1],"right":[-2],"leaf_value":[1,2]}]}"#;
        let err = load_native(bad).unwrap_err();
        assert!(err.to_string().contains("trees[0].threshold"), "{err}");

        let bad = r#"{"num_features":1,"base_score":0,"trees":[{"split_feature":[3],"threshold":[0.5],"left":[-1],"right":[-2],"leaf_value":[1,2]}]}"#;
        let err = load_native(bad).unwrap_err();
        assert!(err.to_string().contains("trees[0]"), "{err}");
    }

    fn arb_tree(num_features: usize, max_internal: usize) -> impl Strategy<Value = Tree> {
        // Grow a random topology by repeatedly splitting a random leaf.
        (
            0..=max_internal,
            proptest::collection::vec((0..num_features, -2.0f64..2.0, any::<u32>()), max_internal),
            proptest::collection::vec(-1.0f64..1.0, max_internal + 1),
        )
            .prop_map(move |(m, splits, leaves)| {
                let mut t = Tree::constant(leaves[0]);
                for (i, (f, thr, pick)) in splits.into_iter().take(m).enumerate() {
                    let n_leaves = t.leaf_value.len();
                    let victim = pick as usize % n_leaves;
                    let new_node = t.split_feature.len() as i32;
                    let new_leaf = n_leaves;
                    // Replace the reference to `victim` with the new internal node.
                    let target = !(victim as i32);
                    if let Some(p) = t.left.iter().position(|&c| c == target) {
                        t.left[p] = new_node;
                    } else if let Some(p) = t.right.iter().position(|&c| c == target) {
                        t.right[p] = new_node;
                    }
                    t.split_feature.push(f);
                    t.threshold.push(thr);
                    t.left.push(target);
                    t.right.push(!(new_leaf as i32));
                    t.leaf_value.push(leaves[i + 1]);
                }
                t
            })
    }

    proptest! {
        #[test]
        fn additivity_over_split_points(
            trees in proptest::collection::vec(arb_tree(3, 8), 1..12),
            x in proptest::collection::vec(-2.5f64..2.5, 3),
            cut in any::<prop::sample::Index>(),
        ) {
            let ens = Ensemble::new(trees, 3, 0.3).unwrap();
            let t = ens.num_trees();
            let s = cut.index(t + 1);
            let staged = ens.score_prefix_unchecked(&x, s) + ens.score_range(&x, s..t).unwrap();
            prop_assert!((staged - ens.score_full(&x).unwrap()).abs() <= 1e-9);
        }

        #[test]
        fn native_round_trip_scores(
            trees in proptest::collection::vec(arb_tree(4, 10), 1..6),
            x in proptest::collection::vec(-2.5f64..2.5, 4),
        ) {
            let ens = Ensemble::new(trees, 4, -0.125).unwrap();
            let back = load_native(&save_native(&ens)).unwrap();
            prop_assert_eq!(back.score_full(&x).unwrap(), ens.score_full(&x).unwrap());
        }
    }
}
