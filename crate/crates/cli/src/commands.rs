//! Command implementations.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use log::{info, warn};
use serde::Serialize;

use lear_core::data::{self, Dataset};
use lear_core::exitset::{self, AUGMENTED_EXTRA};
use lear_core::experiment::{self, Baseline, EvalOptions, TauRow};
use lear_core::gbdt::{self, train_forest_observed, Forest, Loss, TrainParams};
use lear_core::metrics::{self, CostMode, NdcgConfig, TradeoffPoint};
use lear_core::scorer::{self, Backend};
use lear_core::strategies::{MergeRule, PipelineOptions, StrategyParams};
use lear_core::synth::{self, SynthConfig};
use lear_core::{Ensemble, Sentinel};

use crate::config::{output_path, parse_grid, parse_usize_grid, FileConfig, RunConfig};
use crate::{
    Cli, CliError, Command, EvalArgs, EvalClassifierArgs, ForestArgs, RunArgs, StatsArgs, SweepArgs, SynthArgs,
    TrainExitArgs, TrainRankerArgs,
};

const DEFAULT_SENTINELS: [usize; 3] = [50, 100, 200];
const DEFAULT_EPT_GRID: &str = "0.3:0.8:0.1";
const DEFAULT_LEAR_GRID: &str = "0.1:0.7:0.1";
const DEFAULT_TAU_GRID: &str = "0.1:0.7:0.1";
const DEFAULT_ERT_GRID: &str = "5,10,15,20,30,50";
const DEFAULT_K_S: usize = 15;
const DEFAULT_K_LABEL: usize = 15;
const DEFAULT_NDCG_K: usize = 10;
const DEFAULT_RANKER_TREES: usize = 100;

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

struct Ctx {
    file: FileConfig,
    out_dir: Option<PathBuf>,
    threads: Option<usize>,
}

impl Ctx {
    fn out(&self, path: &Path) -> PathBuf {
        output_path(path, self.out_dir.as_deref())
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let threads = cli.threads.or(file.threads);
    let ctx = Ctx {
        file,
        out_dir: cli.out_dir,
        threads,
    };
    let run = || match cli.command {
        Command::Stats(a) => cmd_stats(&ctx, a),
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::TrainRanker(a) => cmd_train_ranker(&ctx, a),
        Command::TrainExit(a) => cmd_train_exit(&ctx, a),
        Command::EvalClassifier(a) => cmd_eval_classifier(&ctx, a),
        Command::Run(a) => cmd_run(&ctx, a),
        Command::Sweep(a) => cmd_sweep(&ctx, a),
    };
    match threads {
        None => run(),
        Some(0) => Err(usage("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Data(e.into()))?
            .install(run),
    }
}

// ---------------------------------------------------------------------------
// loading and writing

fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T> {
    flag.or(file).ok_or_else(|| usage(format!("--{name} is required")))
}

fn load_model(path: &Path) -> Result<Ensemble> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    let ens = lear_core::load_model_text(&text).with_context(|| format!("model {}", path.display()))?;
    Ok(ens)
}

fn load_data(path: &Path, num_features: Option<usize>) -> Result<Dataset> {
    let ds = data::load_path(path, num_features).with_context(|| format!("dataset {}", path.display()))?;
    Ok(ds)
}

fn load_classifier(path: &Path) -> Result<Forest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading classifier {}", path.display()))?;
    let forest = Forest::from_json(&text).with_context(|| format!("classifier {}", path.display()))?;
    if forest.loss != Loss::WeightedLogistic {
        return Err(CliError::Data(anyhow!(
            "classifier {} was not trained with the logistic loss",
            path.display()
        )));
    }
    Ok(forest)
}

/// Writes through a temporary file in the target directory, then renames, so
/// readers never observe a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let inner = || -> anyhow::Result<()> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.flush()?;
        tmp.persist(path)?;
        Ok(())
    };
    inner().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn sentinel(s: usize, ens: &Ensemble) -> Result<Sentinel> {
    Sentinel::new(s, ens).map_err(|e| usage(e.to_string()))
}

fn check_classifier_width(forest: &Forest, ens: &Ensemble, path: &str) -> Result<()> {
    let want = ens.num_features() + AUGMENTED_EXTRA;
    if forest.num_features() != want {
        return Err(CliError::Data(anyhow!(
            "classifier {path} expects {} features; the ranker's augmented layout has {want}",
            forest.num_features()
        )));
    }
    Ok(())
}

/// Display name of column `j` of the augmented exit-classifier layout.
pub fn feature_name(j: usize, num_raw: usize) -> String {
    const EXTRA: [&str; AUGMENTED_EXTRA] = ["partial_score", "partial_minmax", "sentinel_rank", "n_candidates"];
    if j < num_raw {
        format!("f{}", j + 1)
    } else {
        EXTRA
            .get(j - num_raw)
            .map_or_else(|| format!("x{j}"), |s| s.to_string())
    }
}

fn train_params(base: TrainParams, a: &ForestArgs) -> TrainParams {
    TrainParams {
        num_trees: a.trees.unwrap_or(base.num_trees),
        max_leaves: a.max_leaves.unwrap_or(base.max_leaves),
        learning_rate: a.learning_rate.unwrap_or(base.learning_rate),
        l2_lambda: a.lambda.unwrap_or(base.l2_lambda),
        min_examples_per_leaf: a.min_leaf.unwrap_or(base.min_examples_per_leaf),
        ..base
    }
}

fn training_error(e: gbdt::GbdtError) -> CliError {
    match e {
        gbdt::GbdtError::Params(m) => usage(m),
        other => CliError::Data(other.into()),
    }
}

// ---------------------------------------------------------------------------
// stats, synth

fn cmd_stats(_ctx: &Ctx, a: StatsArgs) -> Result<()> {
    let ds = load_data(&a.data, a.num_features)?;
    let st = ds.stats();
    let mut rel = [0usize; 5];
    for g in &ds.groups {
        for d in &g.documents {
            rel[d.relevance as usize] += 1;
        }
    }
    println!("queries          {}", st.num_queries);
    println!("documents        {}", st.num_documents);
    println!("docs per query   {:.2}", st.mean_docs_per_query);
    println!("features         {}", ds.num_features);
    let dist: Vec<String> = rel.iter().enumerate().map(|(r, c)| format!("{r}:{c}")).collect();
    println!("relevance        {}", dist.join(" "));
    Ok(())
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let mut cfg = if a.benchmark {
        SynthConfig::benchmark()
    } else {
        SynthConfig {
            num_queries: a.queries,
            min_docs: a.min_docs,
            max_docs: a.max_docs,
            num_features: a.features,
            ..SynthConfig::default()
        }
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if cfg.min_docs == 0 || cfg.min_docs > cfg.max_docs || cfg.num_features == 0 || cfg.num_queries == 0 {
        return Err(usage("need 1 <= min-docs <= max-docs, features >= 1 and queries >= 1"));
    }
    let fractions = parse_grid(&a.splits).map_err(|e| usage(e.to_string()))?;
    let names: Vec<&str> = a.names.split(',').map(str::trim).collect();
    if names.len() != fractions.len() {
        return Err(usage(format!(
            "{} split fractions but {} names",
            fractions.len(),
            names.len()
        )));
    }
    if fractions.iter().any(|&f| f.is_nan() || f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(usage("split fractions must be non-negative and sum to 1"));
    }
    let ds = synth::generate(&cfg);
    for (part, name) in ds.split_by_fractions(&fractions).iter().zip(names) {
        let path = ctx.out(&PathBuf::from(format!("{}.{name}.txt", a.prefix.display())));
        let mut buf = Vec::new();
        part.write_letor(&mut buf).map_err(|e| CliError::Data(e.into()))?;
        write_atomic(&path, &buf)?;
        println!(
            "{name:<6} {:>5} queries {:>7} docs -> {}",
            part.groups.len(),
            part.num_documents(),
            path.display()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train-ranker

fn mean_ndcg_of(ds: &Dataset, scores: &[Vec<f64>], k: usize) -> f64 {
    let per_query: Vec<Option<f64>> = ds
        .groups
        .iter()
        .zip(scores)
        .map(|(g, s)| {
            metrics::ndcg_with(&scorer::rank_order(s), &g.relevances(), k, NdcgConfig::default())
                .expect("ranking is a permutation")
        })
        .collect();
    metrics::mean_ndcg(&per_query)
}

fn cmd_train_ranker(ctx: &Ctx, a: TrainRankerArgs) -> Result<()> {
    let train_path = required(a.train, ctx.file.train.clone(), "train")?;
    let valid_path = a.valid.or(ctx.file.valid.clone());
    let k = a.ndcg_k.or(ctx.file.ndcg_k).unwrap_or(DEFAULT_NDCG_K);
    if k == 0 {
        return Err(usage("--ndcg-k must be at least 1"));
    }
    let train = load_data(&train_path, None)?;
    let valid = valid_path
        .as_deref()
        .map(|p| load_data(p, Some(train.num_features)))
        .transpose()?;

    let base = TrainParams {
        num_trees: DEFAULT_RANKER_TREES,
        loss: Loss::Squared,
        ..TrainParams::default()
    };
    let params = train_params(base, &a.forest);
    let docs = train.groups.iter().flat_map(|g| &g.documents);
    let rows: Vec<Vec<f64>> = docs.clone().map(|d| d.features.clone()).collect();
    let labels: Vec<f64> = docs.map(|d| d.relevance as f64).collect();
    let weights = vec![1.0; rows.len()];
    if labels.iter().all(|&y| y == labels[0]) {
        warn!("every training label is {}; the ranker will be constant", labels[0]);
    }

    let mut valid_scores: Option<Vec<Vec<f64>>> = valid
        .as_ref()
        .map(|v| v.groups.iter().map(|g| vec![0.0; g.len()]).collect());
    let forest = train_forest_observed(&rows, &labels, &weights, &params, |info| {
        let tree = info.trees.last().expect("one tree per round");
        match (&valid, valid_scores.as_mut()) {
            (Some(v), Some(scores)) => {
                for (g, s) in v.groups.iter().zip(scores.iter_mut()) {
                    for d in &g.documents {
                        s[d.doc_index] += tree.eval(&d.features);
                    }
                }
                println!(
                    "round {:>4}  train_loss {:.6}  valid_ndcg@{k} {:.6}",
                    info.round,
                    info.train_loss,
                    mean_ndcg_of(v, scores, k)
                );
            }
            _ => println!("round {:>4}  train_loss {:.6}", info.round, info.train_loss),
        }
    })
    .map_err(training_error)?;

    let out = ctx.out(&a.out);
    write_atomic(&out, lear_core::save_native(&forest.ensemble).as_bytes())?;
    println!("wrote {} trees to {}", forest.num_trees(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train-exit, eval-classifier

#[derive(Serialize)]
struct Importance {
    feature: usize,
    name: String,
    gain: f64,
}

fn importance(forest: &Forest, num_raw: usize) -> Vec<Importance> {
    forest
        .feature_importance()
        .into_iter()
        .map(|(feature, gain)| Importance {
            feature,
            name: feature_name(feature, num_raw),
            gain,
        })
        .collect()
}

fn print_tau_table(rows: &[TauRow]) {
    println!("   tau  cont_prec  cont_rec  exit_prec  exit_rec  kept");
    for r in rows {
        println!(
            "{:>6}  {:>9.4}  {:>8.4}  {:>9.4}  {:>8.4}  {:>4.3}",
            r.tau,
            r.report.continue_.precision,
            r.report.continue_.recall,
            r.report.exit.precision,
            r.report.exit.recall,
            r.continued_fraction
        );
    }
}

fn print_importance(imp: &[Importance], top: usize) {
    println!("feature importance (total gain)");
    for i in imp.iter().take(top) {
        println!("  {:<16} {:.6}", i.name, i.gain);
    }
}

#[derive(Serialize)]
struct TauReport<'a> {
    model: &'a Path,
    train: &'a Path,
    valid: Option<&'a Path>,
    sentinel: usize,
    k_label: usize,
    classifier_trees: usize,
    degenerate: bool,
    allowed_features: Option<&'a [usize]>,
    exit_recall_floor: f64,
    chosen_tau: Option<f64>,
    rows: &'a [TauRow],
    feature_importance: &'a [Importance],
}

fn tau_grid(flag: Option<String>, file: Option<Vec<f64>>) -> Result<Vec<f64>> {
    let grid = match (flag, file) {
        (Some(s), _) => parse_grid(&s).map_err(|e| usage(e.to_string()))?,
        (None, Some(v)) => v,
        (None, None) => parse_grid(DEFAULT_TAU_GRID).expect("default grid"),
    };
    if grid.is_empty() || grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(usage("tau values must lie in (0, 1)"));
    }
    Ok(grid)
}

fn cmd_train_exit(ctx: &Ctx, a: TrainExitArgs) -> Result<()> {
    let model_path = required(a.model, ctx.file.model.clone(), "model")?;
    let train_path = required(a.train, ctx.file.train.clone(), "train")?;
    let valid_path = a.valid.or(ctx.file.valid.clone());
    let k_label = a.k_label.or(ctx.file.k_label).unwrap_or(DEFAULT_K_LABEL);
    let taus = tau_grid(a.tau_grid, ctx.file.tau_grid.clone())?;
    if !(0.0..=1.0).contains(&a.exit_recall_floor) {
        return Err(usage("--exit-recall-floor must lie in [0, 1]"));
    }

    let ens = load_model(&model_path)?;
    let s = sentinel(
        a.sentinel.or(ctx.file.sentinel).unwrap_or(ens.num_trees() / 2).max(1),
        &ens,
    )?;
    let f = ens.num_features();
    let train = load_data(&train_path, Some(f))?;
    let valid = valid_path.as_deref().map(|p| load_data(p, Some(f))).transpose()?;

    let examples = exitset::build_exit_training_set(&ens, &train, s, k_label).map_err(|e| match e {
        exitset::ExitSetError::Cutoff => usage("--k-label must be at least 1"),
        other => CliError::Data(other.into()),
    })?;
    let n_cont = examples.iter().filter(|e| e.label.is_continue()).count();
    info!("{} training examples, {n_cont} Continue", examples.len());
    if let Some(prefix) = &a.dump {
        let (mut letor, mut weights) = (Vec::new(), Vec::new());
        exitset::write_dump(&examples, &mut letor, &mut weights).map_err(|e| CliError::Data(e.into()))?;
        write_atomic(&ctx.out(&PathBuf::from(format!("{}.letor", prefix.display()))), &letor)?;
        write_atomic(
            &ctx.out(&PathBuf::from(format!("{}.weights", prefix.display()))),
            &weights,
        )?;
    }

    let (rows, labels, weights) = exitset::to_training_arrays(&examples);
    let mut params = train_params(TrainParams::default(), &a.forest);
    params.loss = Loss::WeightedLogistic;
    let mut forest = gbdt::train_forest(&rows, &labels, &weights, &params).map_err(training_error)?;
    if let Some(m) = a.top_features {
        if m == 0 {
            return Err(usage("--top-features must be at least 1"));
        }
        let keep: Vec<usize> = forest
            .feature_importance()
            .into_iter()
            .take(m)
            .map(|(j, _)| j)
            .collect();
        if !keep.is_empty() {
            params.allowed_features = Some(keep);
            forest = gbdt::train_forest(&rows, &labels, &weights, &params).map_err(training_error)?;
        }
    }
    if forest.degenerate {
        warn!("training labels are all one class; the classifier is constant");
    }
    let out = ctx.out(&a.out);
    write_atomic(&out, forest.to_json().as_bytes())?;
    println!(
        "wrote {}-tree classifier for sentinel {} to {}",
        forest.num_trees(),
        s.get(),
        out.display()
    );

    let imp = importance(&forest, f);
    let (rows_report, chosen) = match &valid {
        Some(v) => {
            let (truth, probs) = experiment::classifier_outputs(&ens, v, s, k_label, &forest)?;
            if !truth.iter().any(|l| l.is_continue()) {
                warn!("validation split has no Continue documents; Continue recall is reported as 1.0");
            }
            let rows = experiment::tau_report(&truth, &probs, &taus)?;
            let chosen = experiment::pick_tau(&rows, a.exit_recall_floor);
            print_tau_table(&rows);
            match chosen {
                Some(t) => println!(
                    "chosen tau {t} (max Continue recall, Exit recall >= {})",
                    a.exit_recall_floor
                ),
                None => println!("no tau meets Exit recall >= {}", a.exit_recall_floor),
            }
            (rows, chosen)
        }
        None => {
            warn!("no validation split; skipping the tau report");
            (Vec::new(), None)
        }
    };
    print_importance(&imp, 10);

    if let Some(report) = &a.report {
        let doc = TauReport {
            model: &model_path,
            train: &train_path,
            valid: valid_path.as_deref(),
            sentinel: s.get(),
            k_label,
            classifier_trees: forest.num_trees(),
            degenerate: forest.degenerate,
            allowed_features: params.allowed_features.as_deref(),
            exit_recall_floor: a.exit_recall_floor,
            chosen_tau: chosen,
            rows: &rows_report,
            feature_importance: &imp,
        };
        let json = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Data(e.into()))?;
        write_atomic(&ctx.out(report), json.as_bytes())?;
    }
    Ok(())
}

fn cmd_eval_classifier(ctx: &Ctx, a: EvalClassifierArgs) -> Result<()> {
    let model_path = required(a.model, ctx.file.model.clone(), "model")?;
    let k_label = a.k_label.or(ctx.file.k_label).unwrap_or(DEFAULT_K_LABEL);
    let taus = tau_grid(a.tau_grid, ctx.file.tau_grid.clone())?;
    let ens = load_model(&model_path)?;
    let forest = load_classifier(&a.classifier)?;
    check_classifier_width(&forest, &ens, &a.classifier.display().to_string())?;
    let s = sentinel(
        a.sentinel.or(ctx.file.sentinel).unwrap_or(ens.num_trees() / 2).max(1),
        &ens,
    )?;
    if k_label == 0 {
        return Err(usage("--k-label must be at least 1"));
    }
    let ds = load_data(&a.data, Some(ens.num_features()))?;
    let (truth, probs) = experiment::classifier_outputs(&ens, &ds, s, k_label, &forest)?;
    if !truth.iter().any(|l| l.is_continue()) {
        warn!("no Continue documents; Continue recall is reported as 1.0");
    }
    println!("{} documents at sentinel {}", truth.len(), s.get());
    print_tau_table(&experiment::tau_report(&truth, &probs, &taus)?);
    print_importance(&importance(&forest, ens.num_features()), usize::MAX);
    Ok(())
}

// ---------------------------------------------------------------------------
// run, sweep

struct Evaluator {
    model_path: PathBuf,
    test_path: PathBuf,
    ens: Ensemble,
    test: Dataset,
    /// Classifier per sentinel; the `None` key applies to every sentinel.
    classifiers: BTreeMap<Option<usize>, Arc<Forest>>,
    classifier_specs: Vec<String>,
    opts: EvalOptions,
    k_s: usize,
    base: Baseline,
}

fn parse_cost_mode(s: &str) -> Result<CostMode> {
    match s.replace('_', "-").as_str() {
        "tree-count" => Ok(CostMode::TreeCount),
        "wall-clock" => Ok(CostMode::WallClock),
        other => Err(usage(format!("unknown cost mode `{other}` (tree-count | wall-clock)"))),
    }
}

fn cost_mode_name(m: CostMode) -> &'static str {
    match m {
        CostMode::TreeCount => "tree-count",
        CostMode::WallClock => "wall-clock",
    }
}

impl Evaluator {
    fn new(ctx: &Ctx, a: &EvalArgs) -> Result<Self> {
        let model_path = required(a.model.clone(), ctx.file.model.clone(), "model")?;
        let test_path = required(a.test.clone(), ctx.file.test.clone(), "test")?;
        let ndcg_k = a.ndcg_k.or(ctx.file.ndcg_k).unwrap_or(DEFAULT_NDCG_K);
        let k_s = a.k_s.or(ctx.file.k_s).unwrap_or(DEFAULT_K_S);
        if ndcg_k == 0 || k_s == 0 {
            return Err(usage("--ndcg-k and --k-s must be at least 1"));
        }
        let cost_mode = match a.cost_mode.as_deref().or(ctx.file.cost_mode.as_deref()) {
            Some(m) => parse_cost_mode(m)?,
            None => CostMode::TreeCount,
        };
        let merge = if a.merge_by_score || ctx.file.merge_by_score.unwrap_or(false) {
            MergeRule::MergeByScore
        } else {
            MergeRule::TwoSegment
        };
        let specs = if a.classifier.is_empty() {
            ctx.file.classifier.clone().unwrap_or_default()
        } else {
            a.classifier.clone()
        };

        let ens = load_model(&model_path)?;
        let mut classifiers = BTreeMap::new();
        for spec in &specs {
            let (key, path) = match spec.split_once('=') {
                Some((s, p)) => {
                    let s: usize = s
                        .trim()
                        .parse()
                        .map_err(|_| usage(format!("bad --classifier `{spec}`")))?;
                    (Some(s), p)
                }
                None => (None, spec.as_str()),
            };
            let forest = load_classifier(Path::new(path))?;
            check_classifier_width(&forest, &ens, path)?;
            if classifiers.insert(key, Arc::new(forest)).is_some() {
                return Err(usage(format!("two classifiers given for `{spec}`")));
            }
        }
        let test = load_data(&test_path, Some(ens.num_features()))?;
        let opts = EvalOptions {
            ndcg_k,
            ndcg: NdcgConfig::default(),
            pipeline: PipelineOptions {
                backend: if a.tree_major {
                    Backend::TreeMajor
                } else {
                    Backend::DocumentMajor
                },
                merge,
                time_strategy: cost_mode == CostMode::WallClock,
            },
            cost_mode,
            timing_reps: 5,
        };
        let base = experiment::baseline(&ens, &test, &opts)?;
        Ok(Evaluator {
            model_path,
            test_path,
            ens,
            test,
            classifiers,
            classifier_specs: specs,
            opts,
            k_s,
            base,
        })
    }

    fn classifier_for(&self, s: usize) -> Result<Arc<Forest>> {
        self.classifiers
            .get(&Some(s))
            .or_else(|| self.classifiers.get(&None))
            .cloned()
            .ok_or_else(|| {
                usage(format!(
                    "lear at sentinel {s} needs --classifier PATH or --classifier {s}=PATH"
                ))
            })
    }

    fn params(&self, strategy: &str, s: usize, threshold: Option<f64>) -> Result<StrategyParams> {
        let need = || threshold.ok_or_else(|| usage(format!("{strategy} needs --threshold")));
        let as_count = |v: f64, what: &str| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(usage(format!("{what} must be a positive integer, got {v}")))
            }
        };
        let params = match strategy {
            "full" => StrategyParams::Full,
            "ert" => StrategyParams::Ert {
                k_s: match threshold {
                    Some(t) => as_count(t, "ert threshold (k_s)")?,
                    None => self.k_s,
                },
            },
            "ept" => StrategyParams::Ept {
                k_s: self.k_s,
                p: need()?,
            },
            "lear" => StrategyParams::Lear {
                classifier: self.classifier_for(s)?,
                tau: need()?,
            },
            "ideal" => StrategyParams::Ideal {
                k: match threshold {
                    Some(t) => as_count(t, "ideal threshold (k)")?,
                    None => self.opts.ndcg_k,
                },
            },
            other => {
                return Err(usage(format!(
                    "unknown strategy `{other}` (full | ideal | ert | ept | lear)"
                )))
            }
        };
        params.validate().map_err(|e| usage(e.to_string()))?;
        Ok(params)
    }

    fn evaluate(&self, s: usize, params: &StrategyParams) -> Result<experiment::Evaluation> {
        let s = sentinel(s, &self.ens)?;
        Ok(experiment::evaluate(
            &self.ens, &self.test, s, params, &self.base, &self.opts,
        )?)
    }

    fn run_config(
        &self,
        strategies: Vec<String>,
        sentinels: Vec<usize>,
        grids: BTreeMap<String, Vec<f64>>,
        output: Option<PathBuf>,
        threads: Option<usize>,
    ) -> RunConfig {
        RunConfig {
            model: self.model_path.clone(),
            test: self.test_path.clone(),
            classifiers: self.classifier_specs.clone(),
            strategies,
            sentinels,
            grids,
            k_s: self.k_s,
            ndcg_k: self.opts.ndcg_k,
            cost_mode: cost_mode_name(self.opts.cost_mode).to_string(),
            merge_by_score: self.opts.pipeline.merge == MergeRule::MergeByScore,
            tree_major: self.opts.pipeline.backend == Backend::TreeMajor,
            threads,
            output,
        }
    }
}

#[derive(Serialize)]
struct RunReport<'a> {
    config: &'a RunConfig,
    num_queries: usize,
    ndcg_k: usize,
    ndcg_full: f64,
    #[serde(flatten)]
    point: &'a TradeoffPoint,
    speedup_tree_count: f64,
    speedup_wall_clock: Option<f64>,
    ranker_trees: u64,
    strategy_trees: u64,
    full_ranker_trees: u64,
}

fn cmd_run(ctx: &Ctx, a: RunArgs) -> Result<()> {
    let ev = Evaluator::new(ctx, &a.eval)?;
    let strategy = a.strategy.to_ascii_lowercase();
    let s = a
        .sentinel
        .or(ctx.file.sentinel)
        .unwrap_or(ev.ens.num_trees() / 2)
        .max(1);
    let params = ev.params(&strategy, s, a.threshold)?;
    let eval = ev.evaluate(s, &params)?;
    let p = &eval.point;
    let cost = eval.result.cost;
    let tree_count = metrics::speedup(&cost, &ev.base.cost).map_err(|e| CliError::Data(e.into()))?;
    let wall = (ev.opts.cost_mode == CostMode::WallClock).then_some(p.speedup);

    let k = ev.opts.ndcg_k;
    println!("strategy        {}", p.strategy);
    println!("sentinel        {} of {} trees", p.sentinel, ev.ens.num_trees());
    if let Some(t) = p.threshold {
        println!("threshold       {t}");
    }
    println!("queries         {}", ev.test.groups.len());
    println!("{:<16}{:.6}", format!("NDCG@{k}"), p.ndcg);
    println!("{:<16}{:.6}", format!("NDCG@{k} full"), ev.base.ndcg);
    println!("delta           {:+.4}%", p.delta_pct);
    println!(
        "speedup         {tree_count:.4}x tree count ({} ranker + {} classifier vs {} full)",
        cost.ranker_trees, cost.strategy_trees, ev.base.cost.ranker_trees
    );
    if let Some(w) = wall {
        println!(
            "speedup         {w:.4}x wall clock (median of {} runs)",
            ev.opts.timing_reps.max(5)
        );
    }
    println!("k_s mean        {:.4}", p.ks_mu);
    println!("k_s stddev      {:.4}", p.ks_sigma);

    if let Some(path) = &a.json {
        let out = ctx.out(path);
        let mut grids = BTreeMap::new();
        if let Some(t) = p.threshold {
            grids.insert(strategy.clone(), vec![t]);
        }
        let config = ev.run_config(vec![strategy], vec![s], grids, Some(out.clone()), ctx.threads);
        let report = RunReport {
            config: &config,
            num_queries: ev.test.groups.len(),
            ndcg_k: k,
            ndcg_full: ev.base.ndcg,
            point: p,
            speedup_tree_count: tree_count,
            speedup_wall_clock: wall,
            ranker_trees: cost.ranker_trees,
            strategy_trees: cost.strategy_trees,
            full_ranker_trees: ev.base.cost.ranker_trees,
        };
        let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.into()))?;
        write_atomic(&out, json.as_bytes())?;
    }
    Ok(())
}

fn list_or<T: Clone>(
    flag: Option<Result<Vec<T>>>,
    file: Option<Vec<T>>,
    default: impl FnOnce() -> Vec<T>,
) -> Result<Vec<T>> {
    match (flag, file) {
        (Some(v), _) => v,
        (None, Some(v)) => Ok(v),
        (None, None) => Ok(default()),
    }
}

fn cmd_sweep(ctx: &Ctx, a: SweepArgs) -> Result<()> {
    let grid_flag = |s: &Option<String>| s.as_deref().map(|g| parse_grid(g).map_err(|e| usage(e.to_string())));
    let strategies: Vec<String> = list_or(
        a.strategies
            .as_deref()
            .map(|s| Ok(s.split(',').map(|v| v.trim().to_ascii_lowercase()).collect())),
        ctx.file.strategies.clone(),
        Vec::new,
    )?;
    let sentinels = list_or(
        a.sentinels
            .as_deref()
            .map(|s| parse_usize_grid(s).map_err(|e| usage(e.to_string()))),
        ctx.file.sentinels.clone(),
        || DEFAULT_SENTINELS.to_vec(),
    )?;
    let ept = list_or(grid_flag(&a.ept_grid), ctx.file.ept_grid.clone(), || {
        parse_grid(DEFAULT_EPT_GRID).expect("default grid")
    })?;
    let lear = list_or(grid_flag(&a.lear_grid), ctx.file.lear_grid.clone(), || {
        parse_grid(DEFAULT_LEAR_GRID).expect("default grid")
    })?;
    let ert = list_or(
        a.ert_grid
            .as_deref()
            .map(|s| parse_usize_grid(s).map_err(|e| usage(e.to_string()))),
        ctx.file.ert_grid.clone(),
        || parse_usize_grid(DEFAULT_ERT_GRID).expect("default grid"),
    )?;
    let out = a
        .out
        .or(ctx.file.output.clone())
        .ok_or_else(|| usage("--out is required"))?;
    let out = ctx.out(&out);
    if sentinels.is_empty() {
        return Err(usage("the sentinel list is empty"));
    }

    let ev = Evaluator::new(ctx, &a.eval)?;
    let strategies = if strategies.is_empty() {
        let mut d = vec!["ept".to_string()];
        if !ev.classifiers.is_empty() {
            d.push("lear".into());
        }
        d
    } else {
        strategies
    };
    let mut grids: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for st in &strategies {
        let g = match st.as_str() {
            "ept" => ept.clone(),
            "lear" => lear.clone(),
            "ert" => ert.iter().map(|&k| k as f64).collect(),
            "ideal" => vec![ev.opts.ndcg_k as f64],
            other => {
                return Err(usage(format!(
                    "unknown sweep strategy `{other}` (ert | ept | lear | ideal)"
                )))
            }
        };
        if g.is_empty() {
            return Err(usage(format!("the {st} grid is empty")));
        }
        grids.insert(st.clone(), g);
    }

    // Validate every cell before doing any work.
    let mut cells = Vec::new();
    for st in &strategies {
        for &s in &sentinels {
            sentinel(s, &ev.ens)?;
            for &t in &grids[st] {
                cells.push((s, ev.params(st, s, Some(t))?));
            }
        }
    }
    let mut csv = String::from(experiment::CSV_HEADER);
    csv.push('\n');
    for (s, params) in &cells {
        let p = ev.evaluate(*s, params)?.point;
        let fields = [p.ndcg, p.delta_pct, p.speedup, p.ks_mu, p.ks_sigma];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Data(anyhow!(
                "non-finite result for {} at sentinel {s}",
                p.strategy
            )));
        }
        info!("{}", experiment::csv_row(&p));
        csv.push_str(&experiment::csv_row(&p));
        csv.push('\n');
    }
    write_atomic(&out, csv.as_bytes())?;
    let config = ev.run_config(strategies, sentinels, grids, Some(out.clone()), ctx.threads);
    info!(
        "effective config: {}",
        serde_json::to_string(&config).unwrap_or_default()
    );
    println!("wrote {} rows to {}", cells.len(), out.display());
    Ok(())
}
