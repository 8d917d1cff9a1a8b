use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DMatrix;
use segtune::acquisition::{select_next, RunState};
use segtune::predictors::{input_dim, CostPredictor, PerfPredictor};
use segtune::SearchSpace;

fn inputs(n: usize, dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, dim, |i, j| ((i * 31 + j * 7) % 97) as f64 / 97.0)
}

fn encode(c: &mut Criterion) {
    let space = SearchSpace::standard();
    let pool = space.sample(0, 128);
    c.bench_function("encode 128 configs", |b| {
        b.iter(|| {
            for cfg in &pool {
                black_box(space.encode(cfg).unwrap());
            }
        })
    });
}

fn gp(c: &mut Criterion) {
    let dim = input_dim(&SearchSpace::standard());
    let p = PerfPredictor::fresh(dim, 0);
    let x = inputs(256, dim);
    let y: Vec<f64> = (0..256).map(|i| (i % 10) as f64 / 10.0).collect();
    c.bench_function("gp nll_grad n=256", |b| b.iter(|| black_box(p.nll_grad(&x, &y).unwrap())));

    let mut fitted = p.clone();
    fitted.condition(inputs(384, dim), &vec![0.5; 384]).unwrap();
    let q = inputs(128, dim);
    c.bench_function("gp predict 128 on n=384", |b| b.iter(|| black_box(fitted.predict(&q).unwrap())));
}

fn selection(c: &mut Criterion) {
    let space = SearchSpace::standard();
    let dim = input_dim(&space);
    let mut perf = PerfPredictor::fresh(dim, 1);
    perf.condition(inputs(256, dim), &vec![0.5; 256]).unwrap();
    let cost = CostPredictor::fresh(dim, 2);
    let state = RunState::new(space.sample(3, 128));
    let meta = [0.0; 7];
    c.bench_function("select_next over 128 configs", |b| {
        b.iter(|| black_box(select_next(&space, &perf, &cost, &state, &meta).unwrap()))
    });
}

criterion_group!(benches, encode, gp, selection);
criterion_main!(benches);
