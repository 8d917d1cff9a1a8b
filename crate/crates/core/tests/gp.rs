use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segtune::predictors::{fit_perf, FitOptions, PerfPredictor, TrainingSet, PRIOR_MEAN};

fn matern52(a: &[f64], b: &[f64], ell: f64, s2: f64) -> f64 {
    let r = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let u = 5f64.sqrt() * r / ell;
    s2 * (1.0 + u + u * u / 3.0) * (-u).exp()
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Posterior via an explicit LU solve of (K + σ²I).
fn dense_posterior(p: &PerfPredictor, x: &DMatrix<f64>, y: &[f64], xs: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let z = rows(&p.extractor.forward(x).unwrap());
    let zs = rows(&p.extractor.forward(xs).unwrap());
    let (ell, s2, noise) = (p.kernel.lengthscale(), p.kernel.signal_variance(), p.kernel.noise_variance());
    let n = z.len();
    let k = DMatrix::from_fn(n, n, |i, j| matern52(&z[i], &z[j], ell, s2) + if i == j { noise } else { 0.0 });
    let lu = k.lu();
    let r = DVector::from_iterator(n, y.iter().map(|v| v - PRIOR_MEAN));
    let alpha = lu.solve(&r).unwrap();
    zs.iter()
        .map(|q| {
            let ks = DVector::from_iterator(n, z.iter().map(|zi| matern52(zi, q, ell, s2)));
            let v = lu.solve(&ks).unwrap();
            (PRIOR_MEAN + ks.dot(&alpha), s2 - ks.dot(&v))
        })
        .collect()
}

fn random_problem(seed: u64, dim: usize) -> (PerfPredictor, DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = PerfPredictor::fresh(dim, seed);
    p.kernel.set_params(&[
        rng.random_range(-1.0..1.0),
        rng.random_range(-4.0..0.0),
        rng.random_range(-7.0..-3.0),
    ]);
    let n = rng.random_range(1..=10);
    let x = DMatrix::from_fn(n, dim, |_, _| rng.random_range(-1.0..1.0));
    let y = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let xs = DMatrix::from_fn(5, dim, |_, _| rng.random_range(-1.0..1.0));
    (p, x, y, xs)
}

#[test]
fn posterior_matches_dense_solve() {
    for seed in 0..20 {
        let (mut p, x, y, xs) = random_problem(seed, 39);
        p.condition(x.clone(), &y).unwrap();
        let got = p.predict(&xs).unwrap();
        let want = dense_posterior(&p, &x, &y, &xs);
        for ((m, v), (mo, vo)) in got.iter().zip(&want) {
            assert!((m - mo).abs() < 1e-8, "seed {seed}: mean {m} vs {mo}");
            assert!((v - vo.max(0.0)).abs() < 1e-8, "seed {seed}: var {v} vs {vo}");
        }
    }
}

#[test]
fn unfitted_predictor_returns_prior() {
    let p = PerfPredictor::fresh(6, 0);
    let out = p.predict(&DMatrix::zeros(3, 6)).unwrap();
    assert!(out.iter().all(|&(m, v)| m == PRIOR_MEAN && v == p.kernel.signal_variance()));
}

#[test]
fn small_noise_interpolates() {
    let (mut p, x, y, _) = random_problem(5, 8);
    p.kernel.set_params(&[0.5, 0.0, (1e-6f64).ln()]);
    p.condition(x.clone(), &y).unwrap();
    for ((m, v), t) in p.predict(&x).unwrap().iter().zip(&y) {
        assert!((m - t).abs() < 1e-3);
        assert!(*v < 1e-3);
    }
}

#[test]
fn fitting_lowers_validation_nll() {
    let meta = segtune::synth_bench::generate_meta_dataset(3, 12, 1).unwrap();
    let stats = segtune::meta_features::fit_stats(&meta.features.values().copied().collect::<Vec<_>>()).unwrap();
    let table = meta
        .features
        .iter()
        .map(|(k, f)| (k.clone(), segtune::meta_features::normalize(f, &stats).unwrap()))
        .collect();
    let space = segtune::SearchSpace::standard();
    let data = TrainingSet::from_store(&meta.store, &space, &table).unwrap();
    let opts = FitOptions {
        steps: 60,
        batch_size: 64,
        reservoir_size: 64,
        ..FitOptions::default()
    };
    let init = PerfPredictor::fresh(segtune::predictors::input_dim(&space), 3);
    let (p, trace) = fit_perf(&data, init, &opts).unwrap();
    assert!(trace.best < trace.initial());
    assert_eq!(p.conditioning_size(), 64);
    let json = serde_json::to_string(&p).unwrap();
    let back: PerfPredictor = serde_json::from_str(&json).unwrap();
    let probe = data.select(&[0, 1, 2]).0;
    assert_eq!(back.predict(&probe).unwrap(), p.predict(&probe).unwrap());
}
