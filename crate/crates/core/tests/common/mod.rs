use std::sync::OnceLock;

use segtune::predictors::FitOptions;
use segtune::synth_bench::generate_meta_dataset;
use segtune::tuner::meta_train;
use segtune::Checkpoint;

pub const SUITE: u64 = 11;

/// Small checkpoint trained on tasks 13..16 of suite [`SUITE`], so every
/// named dataset is held out.
pub fn checkpoint() -> &'static Checkpoint {
    static CKPT: OnceLock<Checkpoint> = OnceLock::new();
    CKPT.get_or_init(|| {
        let meta = generate_meta_dataset(16, 12, SUITE).unwrap();
        let mut store = meta.store;
        for i in 0..13 {
            store = store.lodo_split(&segtune::synth_bench::dataset_name(i)).0;
        }
        let opts = FitOptions {
            steps: 40,
            batch_size: 128,
            reservoir_size: 128,
            ..FitOptions::default()
        };
        meta_train(&store, &meta.features, &opts).unwrap()
    })
}
