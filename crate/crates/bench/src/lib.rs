//! Shared setup for the benchmarks: a synthetic test set, a trained ranker
//! and an exit classifier at the ranker's midpoint.

use std::sync::Arc;

use lear_core::exitset;
use lear_core::gbdt::{train_forest, Forest, Loss, TrainParams};
use lear_core::synth::{self, SynthConfig};
use lear_core::{Dataset, Ensemble, Sentinel};

pub struct Fixture {
    pub ranker: Ensemble,
    pub classifier: Arc<Forest>,
    pub test: Dataset,
    pub sentinel: Sentinel,
}

pub fn fixture(num_trees: usize) -> Fixture {
    let data = synth::generate(&SynthConfig {
        num_queries: 300,
        ..SynthConfig::benchmark()
    });
    let parts = data.split_by_fractions(&[0.5, 0.3, 0.2]);
    let docs: Vec<_> = parts[0].groups.iter().flat_map(|g| &g.documents).collect();
    let rows: Vec<Vec<f64>> = docs.iter().map(|d| d.features.clone()).collect();
    let labels: Vec<f64> = docs.iter().map(|d| d.relevance as f64).collect();
    let params = TrainParams {
        num_trees,
        max_leaves: 32,
        loss: Loss::Squared,
        ..TrainParams::default()
    };
    let ranker = train_forest(&rows, &labels, &vec![1.0; rows.len()], &params)
        .expect("ranker trains")
        .ensemble;
    let sentinel = Sentinel::new(num_trees / 2, &ranker).expect("valid sentinel");
    let examples = exitset::build_exit_training_set(&ranker, &parts[1], sentinel, 15).expect("exit set");
    let (rows, labels, weights) = exitset::to_training_arrays(&examples);
    let classifier = train_forest(&rows, &labels, &weights, &TrainParams::default()).expect("classifier trains");
    Fixture {
        ranker,
        classifier: Arc::new(classifier),
        test: parts[2].clone(),
        sentinel,
    }
}
