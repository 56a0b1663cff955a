use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use set2box::baselines::bin::{bin_estimate, Set2Bin};
use set2box::boxes::{bor, smooth_volume};
use set2box::corpus::exact_similarity;
use set2box::model::estimate_similarity;
use set2box::{EntityEmbeddings, Measure, Volume};
use set2box_bench::{boxes, random_set};

fn volumes(c: &mut Criterion) {
    let mut g = c.benchmark_group("box");
    for d in [4, 32, 128] {
        let b = boxes(2, d, 1);
        g.bench_with_input(BenchmarkId::new("smooth_volume", d), &b, |bench, b| {
            bench.iter(|| smooth_volume(black_box(&b[0]), 1.0))
        });
        g.bench_with_input(BenchmarkId::new("bor", d), &b, |bench, b| {
            bench.iter(|| bor(black_box(&b[0]), black_box(&b[1]), Volume::Smooth { beta: 1.0 }))
        });
    }
    g.finish();
}

fn estimate_by_set_size(c: &mut Criterion) {
    let universe = 5000;
    let emb = EntityEmbeddings::new(universe, 32, 1.0, 3);
    let bin = Set2Bin::new(256, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = c.benchmark_group("estimate");
    for size in [10, 100, 1000] {
        let (a, b) = (random_set(&mut rng, universe, size), random_set(&mut rng, universe, size));
        let (ba, bb) = (emb.embed(&a).unwrap(), emb.embed(&b).unwrap());
        let (sa, sb) = (bin.sketch(&a), bin.sketch(&b));
        g.bench_function(BenchmarkId::new("box", size), |bench| {
            bench.iter(|| estimate_similarity(black_box(&ba), black_box(&bb), Measure::Jaccard, Volume::Smooth { beta: 1.0 }))
        });
        g.bench_function(BenchmarkId::new("bin", size), |bench| {
            bench.iter(|| bin_estimate(black_box(&sa), black_box(&sb), Measure::Jaccard))
        });
        g.bench_function(BenchmarkId::new("exact", size), |bench| {
            bench.iter(|| exact_similarity(black_box(&a), black_box(&b), Measure::Jaccard))
        });
    }
    g.finish();
}

criterion_group!(benches, volumes, estimate_by_set_size);
criterion_main!(benches);
