//! Meta-trains on part of a surrogate suite and tunes the rest at 10% of
//! the exhaustive budget, printing regret against the pool oracle and a
//! random-search baseline.
//!
//! cargo run --release -p segtune --example surrogate_study -- [suite_seed] [steps] [pairs]

use std::time::Instant;

use segtune::predictors::FitOptions;
use segtune::search_space::SearchSpace;
use segtune::synth_bench::{exhaustive_cost, generate_for_tasks, oracle_best, regret, suite_tasks, MockWorker};
use segtune::tuner::protocol::InProcess;
use segtune::tuner::{meta_train, random_search, tune, TuneRequest};

fn main() -> segtune::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer")).collect();
    let suite = args.first().copied().unwrap_or(7);
    let steps = args.get(1).copied().unwrap_or(500) as usize;
    let pairs = args.get(2).copied().unwrap_or(64) as usize;

    let tasks = suite_tasks(60, suite);
    let (eval, train) = tasks.split_at(20);
    let t = Instant::now();
    let meta = generate_for_tasks(train, pairs, suite)?;
    let opts = FitOptions {
        steps,
        seed: suite,
        ..FitOptions::default()
    };
    let ckpt = meta_train(&meta.store, &meta.features, &opts)?;
    println!(
        "meta-train: {} records, nll {:.4}, cost mse {:.5}, {:.1}s",
        ckpt.metadata.records,
        ckpt.metadata.final_perf_nll,
        ckpt.metadata.final_cost_mse,
        t.elapsed().as_secs_f64()
    );

    let space = SearchSpace::standard();
    let (mut within, mut beats) = (0, 0);
    for (i, task) in eval.iter().enumerate() {
        let seed = 1000 + i as u64;
        let pool = space.sample(seed, 128);
        let oracle = oracle_best(task, &pool)?;
        let mut req = TuneRequest::new(task.dataset_id.clone(), task.meta_features(), 0.1 * exhaustive_cost(&pool), seed);
        req.pool_size = pool.len();
        let t = Instant::now();
        let res = tune(&req, &ckpt, &mut InProcess(MockWorker::with_task(task.clone())))?;
        let ours = regret(task, &res, oracle.value)?;
        let mut rs: Vec<f64> = (0..5)
            .map(|s| {
                let r = random_search(&req, &mut InProcess(MockWorker::with_task(task.clone())), s)?;
                regret(task, &r, oracle.value)
            })
            .collect::<segtune::Result<_>>()?;
        rs.sort_by(f64::total_cmp);
        let gap = ours / oracle.value;
        within += (gap <= 0.05) as usize;
        beats += (ours < rs[2]) as usize;
        println!(
            "{:>10} oracle {:.3} ours {:.4} gap {:.3} rs-median {:.4} steps {} {:?} {:.1}s",
            task.dataset_id,
            oracle.value,
            ours,
            gap,
            rs[2],
            res.trace.len(),
            res.stop_reason,
            t.elapsed().as_secs_f64()
        );
    }
    println!("within 5%: {within}/20, beats random: {beats}/20");
    Ok(())
}
