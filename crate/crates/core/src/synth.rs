//! Deterministic synthetic LETOR data.
//!
//! Features are uniform on `[0, 1)`. Relevance is a graded, noisy, monotone
//! function of a weighted feature sum, shifted by a per-query offset so the
//! number of relevant candidates varies between queries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, Document, QueryGroup};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_queries: usize,
    pub min_docs: usize,
    pub max_docs: usize,
    pub num_features: usize,
    /// Standard deviation of per-document noise on the latent utility.
    pub doc_noise: f64,
    /// Standard deviation of the per-query utility offset.
    pub query_noise: f64,
    /// Latent cut points between grades 0|1, 1|2, 2|3 and 3|4.
    pub grade_cuts: [f64; 4],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_queries: 500,
            min_docs: 20,
            max_docs: 50,
            num_features: 10,
            doc_noise: 0.04,
            query_noise: 0.04,
            grade_cuts: [0.56, 0.63, 0.69, 0.75],
            seed: 42,
        }
    }
}

fn feature_weights(f: usize) -> Vec<f64> {
    // geometric decay; the first feature matters most
    let raw: Vec<f64> = (0..f).map(|j| 0.75f64.powi(j as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

impl SynthConfig {
    /// The end-to-end benchmark: 600 queries of 80 to 160 candidates each.
    pub fn benchmark() -> Self {
        SynthConfig {
            num_queries: 600,
            min_docs: 80,
            max_docs: 160,
            seed: 11,
            ..SynthConfig::default()
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Dataset {
    assert!(cfg.min_docs >= 1 && cfg.min_docs <= cfg.max_docs);
    assert!(cfg.num_features >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights = feature_weights(cfg.num_features);
    let doc_noise = Normal::new(0.0, cfg.doc_noise).expect("finite noise");
    let query_noise = Normal::new(0.0, cfg.query_noise).expect("finite noise");

    let groups = (0..cfg.num_queries)
        .map(|q| {
            let n = rng.gen_range(cfg.min_docs..=cfg.max_docs);
            let offset = query_noise.sample(&mut rng);
            let documents = (0..n)
                .map(|i| {
                    let features: Vec<f64> = (0..cfg.num_features).map(|_| rng.gen::<f64>()).collect();
                    let utility: f64 = features.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>()
                        + offset
                        + doc_noise.sample(&mut rng);
                    let relevance = cfg.grade_cuts.iter().filter(|&&c| utility >= c).count() as u8;
                    Document {
                        doc_index: i,
                        relevance,
                        features,
                    }
                })
                .collect();
            QueryGroup {
                query_id: q as u64 + 1,
                documents,
            }
        })
        .collect();

    Dataset {
        groups,
        num_features: cfg.num_features,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let cfg = SynthConfig {
            num_queries: 30,
            ..SynthConfig::default()
        };
        let a = generate(&cfg);
        assert_eq!(a, generate(&cfg));
        assert_eq!(a.groups.len(), 30);
        for g in &a.groups {
            assert!((20..=50).contains(&g.len()));
            assert!(g.documents.iter().all(|d| d.features.len() == 10 && d.relevance <= 4));
        }
        let other = generate(&SynthConfig { seed: 7, ..cfg });
        assert_ne!(a, other);
    }

    #[test]
    fn relevance_tracks_the_leading_feature() {
        let ds = generate(&SynthConfig {
            num_queries: 100,
            ..SynthConfig::default()
        });
        let docs: Vec<&Document> = ds.groups.iter().flat_map(|g| &g.documents).collect();
        let mean_rel = |lo: f64, hi: f64| {
            let sel: Vec<f64> = docs
                .iter()
                .filter(|d| d.features[0] >= lo && d.features[0] < hi)
                .map(|d| d.relevance as f64)
                .collect();
            sel.iter().sum::<f64>() / sel.len() as f64
        };
        assert!(mean_rel(0.8, 1.0) > mean_rel(0.0, 0.2));
        let zeros = docs.iter().filter(|d| d.relevance == 0).count() as f64 / docs.len() as f64;
        assert!(zeros > 0.3 && zeros < 0.9, "{zeros}");
    }
}
