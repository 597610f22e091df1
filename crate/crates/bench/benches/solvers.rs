use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rideprice::matching::{MatchingParams, QueueSimConfig};
use rideprice::pricing::{FixedPointOptions, SingleLevelOptions};
use rideprice::{
    fixed_point_prices, project_simplex, simulate_queue, solve_cda, solve_single_level,
};
use rideprice_bench::{pseudo_random, sioux_falls, three_node};

fn cda(c: &mut Criterion) {
    let mut g = c.benchmark_group("cda");
    let p = three_node();
    let three = p.cda.with_prices(&[53.5, 56.5]).unwrap();
    g.bench_function("three_node", |b| {
        b.iter(|| solve_cda(&three, &p.cda_options).unwrap())
    });
    let sf = sioux_falls();
    let sf_cda = sf.cda.with_prices(&[50.0; 12]).unwrap();
    g.sample_size(10);
    g.bench_function("sioux_falls", |b| {
        b.iter(|| solve_cda(&sf_cda, &sf.cda_options).unwrap())
    });
    g.finish();
}

fn pricing(c: &mut Criterion) {
    let mut g = c.benchmark_group("pricing");
    g.sample_size(10);
    let p = three_node();
    g.bench_function("fixed_point_three_node", |b| {
        b.iter(|| fixed_point_prices(&p, &FixedPointOptions::default(), None).unwrap())
    });
    g.bench_function("single_level_three_node", |b| {
        b.iter(|| solve_single_level(&p, &SingleLevelOptions::default()).unwrap())
    });
    g.finish();
}

fn simplex(c: &mut Criterion) {
    let mut g = c.benchmark_group("project_simplex");
    for n in [5, 50, 500] {
        let y = pseudo_random(n, n as u64);
        g.bench_with_input(BenchmarkId::from_parameter(n), &y, |b, y| {
            b.iter(|| project_simplex(y))
        });
    }
    g.finish();
}

fn queue(c: &mut Criterion) {
    let params = MatchingParams::default();
    let cfg = QueueSimConfig::default();
    c.bench_function("simulate_queue", |b| {
        b.iter(|| simulate_queue(12.0, 8.0, &params, &cfg).unwrap())
    });
}

criterion_group!(benches, cda, pricing, simplex, queue);
criterion_main!(benches);
