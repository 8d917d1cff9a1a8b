//! Meta-learned performance and cost predictors.
//!
//! The performance predictor is a deep-kernel GP returning a mean and
//! variance for the validation IoU of a configuration at a given epoch,
//! conditioned on the curve observed so far. The cost predictor is an MLP
//! on log seconds per epoch. Both consume the same [`PredictorInput`].

mod adam;
mod checkpoint;
mod cost;
mod gp;
pub mod grad_check;
mod input;
mod kernel;
mod mlp;
mod train;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CheckpointMeta, FORMAT_VERSION};
pub use cost::CostPredictor;
pub use gp::{NllGrad, PerfPredictor, HIDDEN, LATENT_DIM, PRIOR_MEAN};
pub use input::{
    curve_summary, featurize, input_dim, stack, MetaTable, PredictorInput, TrainingSet,
    SUMMARY_DIM,
};
pub use kernel::{Matern52, MIN_NOISE_VARIANCE};
pub use mlp::{Dense, ForwardCache, Mlp};
pub use train::{fit_cost, fit_perf, FitOptions, FitTrace};
