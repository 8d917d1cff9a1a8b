use std::collections::BTreeMap;

use crate::curve_store::CurveStore;
use crate::error::{Error, Result};
use crate::meta_features::{fit_stats, normalize, MetaFeatures};
use crate::predictors::{
    fit_cost, fit_perf, input_dim, Checkpoint, CheckpointMeta, CostPredictor, FitOptions, MetaTable,
    PerfPredictor, TrainingSet, FORMAT_VERSION,
};
use crate::search_space::SearchSpace;
use crate::synth_bench::mix;

/// Meta-trains both predictors from scratch on every curve in `store`.
pub fn meta_train(
    store: &CurveStore,
    features: &BTreeMap<String, MetaFeatures>,
    opts: &FitOptions,
) -> Result<Checkpoint> {
    let dim = input_dim(&SearchSpace::standard());
    meta_train_with(
        store,
        features,
        opts,
        PerfPredictor::fresh(dim, opts.seed),
        CostPredictor::fresh(dim, mix(opts.seed)),
    )
}

/// Like [`meta_train`] but starting from the given predictors.
pub fn meta_train_with(
    store: &CurveStore,
    features: &BTreeMap<String, MetaFeatures>,
    opts: &FitOptions,
    perf: PerfPredictor,
    cost: CostPredictor,
) -> Result<Checkpoint> {
    let dataset_ids: Vec<String> = store.dataset_ids().into_iter().collect();
    if dataset_ids.is_empty() {
        return Err(Error::EmptyStore);
    }
    let present = dataset_ids
        .iter()
        .map(|d| {
            features
                .get(d)
                .cloned()
                .ok_or_else(|| Error::InvalidRequest(format!("no meta-features for dataset {d}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let meta_stats = fit_stats(&present)?;
    let mut table = MetaTable::new();
    for (id, f) in dataset_ids.iter().zip(&present) {
        table.insert(id.clone(), normalize(f, &meta_stats)?);
    }
    let space = SearchSpace::standard();
    let data = TrainingSet::from_store(store, &space, &table)?;
    let (perf, perf_trace) = fit_perf(&data, perf, opts)?;
    let (cost, cost_trace) = fit_cost(&data, cost, opts)?;
    log::info!(
        "meta-trained on {} records from {} datasets: nll {:.4}, log-cost mse {:.5}",
        data.len(),
        dataset_ids.len(),
        perf_trace.best,
        cost_trace.best
    );
    Ok(Checkpoint {
        format_version: FORMAT_VERSION,
        perf,
        cost,
        meta_stats,
        metadata: CheckpointMeta {
            dataset_ids,
            records: data.len(),
            steps: opts.steps,
            lr: opts.lr,
            seed: opts.seed,
            final_perf_nll: perf_trace.best,
            final_cost_mse: cost_trace.best,
        },
    })
}
