//! Fits the performance predictor on one held-out task's curves, once from
//! the meta-trained checkpoint and once from scratch, and prints both
//! validation traces.
//!
//! cargo run --release -p segtune --example warm_start_study -- [suite_seed] [steps]

use segtune::meta_features::normalize;
use segtune::predictors::{fit_perf, input_dim, FitOptions, MetaTable, PerfPredictor, TrainingSet};
use segtune::search_space::SearchSpace;
use segtune::synth_bench::{generate_for_tasks, suite_tasks};
use segtune::tuner::meta_train;

fn main() -> segtune::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer")).collect();
    let suite = args.first().copied().unwrap_or(7);
    let steps = args.get(1).copied().unwrap_or(300) as usize;

    let tasks = suite_tasks(45, suite);
    let (eval, train) = tasks.split_at(5);
    let meta = generate_for_tasks(train, 64, suite)?;
    let ckpt = meta_train(&meta.store, &meta.features, &FitOptions { seed: suite, ..FitOptions::default() })?;
    let space = SearchSpace::standard();

    for (i, task) in eval.iter().enumerate() {
        let seed = 100 + i as u64;
        let held = generate_for_tasks(std::slice::from_ref(task), 32, seed)?;
        let mut table = MetaTable::new();
        table.insert(task.dataset_id.clone(), normalize(&task.meta_features(), &ckpt.meta_stats)?);
        let data = TrainingSet::from_store(&held.store, &space, &table)?;
        let opts = FitOptions {
            steps,
            seed,
            ..FitOptions::default()
        };
        let (_, warm) = fit_perf(&data, ckpt.perf.clone(), &opts)?;
        let (_, fresh) = fit_perf(&data, PerfPredictor::fresh(input_dim(&space), seed), &opts)?;
        let pick = |t: &segtune::predictors::FitTrace| {
            t.validation
                .iter()
                .filter(|(s, _)| s % 50 == 0)
                .map(|(s, v)| format!("{s}:{v:.3}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        println!("{} n={}", task.dataset_id, data.len());
        println!("  warm  {}", pick(&warm));
        println!("  fresh {}", pick(&fresh));
        let target = fresh.best;
        println!(
            "  target {:.3}: warm {:?} fresh {:?}",
            target,
            warm.steps_to_reach(target),
            fresh.steps_to_reach(target)
        );
    }
    Ok(())
}
