use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use lear_bench::fixture;
use lear_core::scorer::{self, Backend};
use lear_core::strategies::{run_pipeline, PipelineOptions, StrategyParams};

fn bench_backends(c: &mut Criterion) {
    let fx = fixture(200);
    let mut group = c.benchmark_group("prefix_scoring");
    for (name, backend) in [
        ("document_major", Backend::DocumentMajor),
        ("tree_major", Backend::TreeMajor),
    ] {
        group.bench_function(BenchmarkId::new(name, fx.sentinel.get()), |b| {
            b.iter(|| {
                for g in &fx.test.groups {
                    black_box(scorer::score_prefix(&fx.ranker, g, fx.sentinel, backend).unwrap());
                }
            })
        });
    }
    group.finish();
}

fn bench_strategies(c: &mut Criterion) {
    let fx = fixture(200);
    let full_sentinel = lear_core::Sentinel::new(fx.ranker.num_trees(), &fx.ranker).unwrap();
    let cases = [
        ("full", full_sentinel, StrategyParams::Full),
        ("ert", fx.sentinel, StrategyParams::Ert { k_s: 15 }),
        ("ept", fx.sentinel, StrategyParams::Ept { k_s: 15, p: 0.5 }),
        (
            "lear",
            fx.sentinel,
            StrategyParams::Lear {
                classifier: fx.classifier.clone(),
                tau: 0.3,
            },
        ),
    ];
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(20);
    for (name, s, params) in &cases {
        group.bench_function(*name, |b| {
            b.iter(|| black_box(run_pipeline(&fx.ranker, &fx.test, *s, params, PipelineOptions::default()).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_backends, bench_strategies);
criterion_main!(benches);
