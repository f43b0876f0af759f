//! Reader for the LightGBM text model dump (numeric splits only).

use std::collections::HashMap;

use crate::ensemble::{Ensemble, EnsembleError, Tree, DEFAULT_MAX_LEAVES};

const CATEGORICAL_MASK: u32 = 1;

fn err(block: &str, reason: impl Into<String>) -> EnsembleError {
    EnsembleError::LightGbm {
        block: block.to_string(),
        reason: reason.into(),
    }
}

fn array<T: std::str::FromStr>(fields: &HashMap<&str, &str>, key: &str, block: &str) -> Result<Vec<T>, EnsembleError> {
    let raw = fields
        .get(key)
        .ok_or_else(|| err(block, format!("missing array `{key}`")))?;
    raw.split_whitespace()
        .map(|tok| {
            tok.parse::<T>()
                .map_err(|_| err(block, format!("bad value `{tok}` in `{key}`")))
        })
        .collect()
}

fn parse_tree(block: &str, fields: &HashMap<&str, &str>) -> Result<Tree, EnsembleError> {
    let num_leaves: usize = fields
        .get("num_leaves")
        .ok_or_else(|| err(block, "missing `num_leaves`"))?
        .trim()
        .parse()
        .map_err(|_| err(block, "bad `num_leaves`"))?;
    if let Some(nc) = fields.get("num_cat") {
        if nc.trim() != "0" {
            return Err(err(block, "categorical splits are not supported"));
        }
    }
    if fields.get("is_linear").is_some_and(|v| v.trim() != "0") {
        return Err(err(block, "linear trees are not supported"));
    }
    let leaf_value: Vec<f64> = array(fields, "leaf_value", block)?;
    if leaf_value.len() != num_leaves {
        return Err(err(
            block,
            format!("num_leaves={num_leaves} but {} leaf values", leaf_value.len()),
        ));
    }
    if num_leaves == 1 {
        return Ok(Tree::constant(leaf_value[0]));
    }

    let split_feature: Vec<usize> = array(fields, "split_feature", block)?;
    let threshold: Vec<f64> = array(fields, "threshold", block)?;
    let left: Vec<i32> = array(fields, "left_child", block)?;
    let right: Vec<i32> = array(fields, "right_child", block)?;
    let decision_type: Vec<u32> = match fields.get("decision_type") {
        Some(_) => array(fields, "decision_type", block)?,
        None => vec![0; split_feature.len()],
    };
    let split_gain: Vec<f64> = match fields.get("split_gain") {
        Some(_) => array(fields, "split_gain", block)?,
        None => Vec::new(),
    };

    let m = num_leaves - 1;
    for (name, len) in [
        ("split_feature", split_feature.len()),
        ("threshold", threshold.len()),
        ("left_child", left.len()),
        ("right_child", right.len()),
        ("decision_type", decision_type.len()),
    ] {
        if len != m {
            return Err(err(block, format!("`{name}` has {len} entries, expected {m}")));
        }
    }
    for &dt in &decision_type {
        if dt & CATEGORICAL_MASK != 0 {
            return Err(err(block, "categorical splits are not supported"));
        }
        // Missing type "zero" reroutes exact zeros to the default child.
        if (dt >> 2) & 3 == 1 {
            return Err(err(block, "zero-as-missing splits are not supported"));
        }
    }

    Ok(Tree {
        split_feature,
        threshold,
        left,
        right,
        leaf_value,
        split_gain: if split_gain.len() == m { split_gain } else { Vec::new() },
    })
}

/// Parses `Tree=<k>` blocks in file order. The feature count comes from the
/// header's `max_feature_idx`, or from the largest split feature when absent.
pub fn parse_lightgbm_text(text: &str) -> Result<Ensemble, EnsembleError> {
    parse_lightgbm_text_with(text, DEFAULT_MAX_LEAVES)
}

pub fn parse_lightgbm_text_with(text: &str, max_leaves: usize) -> Result<Ensemble, EnsembleError> {
    let mut header: HashMap<&str, &str> = HashMap::new();
    let mut blocks: Vec<(String, HashMap<&str, &str>)> = Vec::new();

    for line in text.lines() {
        let line = line.trim();
        if line.starts_with("end of trees") {
            break;
        }
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        if key == "Tree" {
            blocks.push((format!("Tree={value}"), HashMap::new()));
            continue;
        }
        match blocks.last_mut() {
            Some((_, fields)) => {
                fields.insert(key, value);
            }
            None => {
                header.insert(key, value);
            }
        }
    }

    if blocks.is_empty() {
        return Err(err("header", "no `Tree=` blocks found"));
    }
    if let Some(nc) = header.get("num_class") {
        if nc.trim() != "1" {
            return Err(err("header", format!("num_class={nc} is not supported")));
        }
    }

    let trees = blocks
        .iter()
        .map(|(name, fields)| parse_tree(name, fields))
        .collect::<Result<Vec<_>, _>>()?;

    let num_features = match header.get("max_feature_idx") {
        Some(v) => {
            v.trim()
                .parse::<usize>()
                .map_err(|_| err("header", "bad `max_feature_idx`"))?
                + 1
        }
        None => trees
            .iter()
            .flat_map(|t| t.split_feature.iter().copied())
            .max()
            .map_or(1, |f| f + 1),
    };

    Ensemble::with_max_leaves(trees, num_features, 0.0, max_leaves).map_err(|e| match e {
        EnsembleError::InvalidTree { tree, reason } => err(&blocks[tree].0, reason),
        other => other,
    })
}
