//! Cost-aware multi-fidelity Bayesian optimization for fine-tuning
//! segmentation models under wall-clock budgets.
//!
//! A tuning run keeps a pool of candidate configurations and repeatedly
//! picks one to train for one more epoch. The pick maximizes expected
//! improvement per predicted second, using a deep-kernel GP for
//! performance and an MLP for cost, both meta-trained on learning curves
//! from other datasets.

pub mod acquisition;
pub mod curve_store;
pub mod error;
pub mod meta_features;
pub mod predictors;
pub mod search_space;
pub mod synth_bench;
pub mod tuner;

pub use acquisition::{expected_improvement, CandidateAction};
pub use curve_store::{CurveRecord, CurveStore};
pub use error::{Error, Result};
pub use meta_features::{MetaFeatures, MetaStats};
pub use predictors::{Checkpoint, CostPredictor, PerfPredictor, PredictorInput};
pub use search_space::{Configuration, ConfigVector, Scheduler, SchedulerParams, SearchSpace};
pub use tuner::{TuneRequest, TuneResult};
