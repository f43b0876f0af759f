//! Optional TOML config file. Command-line flags win over file values, which
//! win over built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Keys accepted in the config file. Names match the long flags, in snake_case.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub classifier: Option<Vec<String>>,
    pub sentinel: Option<usize>,
    pub sentinels: Option<Vec<usize>>,
    pub strategies: Option<Vec<String>>,
    pub ept_grid: Option<Vec<f64>>,
    pub lear_grid: Option<Vec<f64>>,
    pub ert_grid: Option<Vec<usize>>,
    pub tau_grid: Option<Vec<f64>>,
    pub k_s: Option<usize>,
    pub ndcg_k: Option<usize>,
    pub k_label: Option<usize>,
    pub cost_mode: Option<String>,
    pub merge_by_score: Option<bool>,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(CliError::Data)?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// The resolved settings of a `run` or `sweep`, echoed into reports.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub model: PathBuf,
    pub test: PathBuf,
    pub classifiers: Vec<String>,
    pub strategies: Vec<String>,
    pub sentinels: Vec<usize>,
    /// Threshold values per strategy name; `full` has none.
    pub grids: BTreeMap<String, Vec<f64>>,
    pub k_s: usize,
    pub ndcg_k: usize,
    pub cost_mode: String,
    pub merge_by_score: bool,
    pub tree_major: bool,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
}

/// Parses `start:end:step` or a comma-separated list.
pub fn parse_grid(spec: &str) -> anyhow::Result<Vec<f64>> {
    let spec = spec.trim();
    if let [a, b, h] = spec.split(':').collect::<Vec<_>>()[..] {
        let (a, b, h): (f64, f64, f64) = (a.parse()?, b.parse()?, h.parse()?);
        if h.is_nan() || h <= 0.0 || b < a {
            bail!("grid `{spec}` is empty");
        }
        return Ok(lear_core::experiment::grid(a, b, h));
    }
    let values = spec
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("bad grid `{spec}`"))?;
    if values.is_empty() {
        bail!("grid `{spec}` is empty");
    }
    Ok(values)
}

pub fn parse_usize_grid(spec: &str) -> anyhow::Result<Vec<usize>> {
    parse_grid(spec)?
        .into_iter()
        .map(|v| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                bail!("`{v}` is not a positive integer")
            }
        })
        .collect()
}

/// Resolves an output path against the output directory, when one is set.
pub fn output_path(path: &Path, out_dir: Option<&Path>) -> PathBuf {
    match out_dir {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}
