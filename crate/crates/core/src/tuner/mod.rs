//! Budget-constrained tuning loop, meta-training driver and benchmark
//! harness.
//!
//! One run: condition the GP on the meta reservoir plus everything observed
//! so far, pick the action with the best EI per second, and dispatch one
//! epoch to the worker unless its predicted cost exceeds 90% of what is
//! left of the budget. The budget is end-to-end: selection time counts.

mod bench;
mod meta;
pub mod protocol;

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{select_next, RunState};
use crate::curve_store::MAX_EPOCH;
use crate::error::{Error, Result};
use crate::meta_features::{normalize, MetaFeatures};
use crate::predictors::{featurize, input_dim, stack, Checkpoint, PredictorInput};
use crate::search_space::{Configuration, SearchSpace};

pub use bench::{aggregate, parse_zero_shot, run_benchmark, BenchCase, BenchReport, BenchRow, BenchRun, Cell};
pub use meta::{meta_train, meta_train_with};
pub use protocol::{Worker, WorkerRequest, WorkerResponse};

pub const STOP_FRACTION: f64 = 0.9;
pub const DEFAULT_POOL: usize = 128;
pub const DEFAULT_SUBSAMPLE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ClockMode {
    /// Real elapsed time.
    Wall,
    /// Worker-reported step costs plus a fixed charge per decision stand in
    /// for elapsed time.
    Simulated { decision_overhead_s: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneRequest {
    pub dataset_id: String,
    /// Sent to the worker in `init`.
    pub dataset_path: String,
    pub meta_features: MetaFeatures,
    pub budget_s: f64,
    pub pool_size: usize,
    pub seed: u64,
    pub subsample_n: usize,
    pub clock: ClockMode,
}

impl TuneRequest {
    pub fn new(dataset_id: impl Into<String>, meta_features: MetaFeatures, budget_s: f64, seed: u64) -> Self {
        let dataset_id = dataset_id.into();
        Self {
            dataset_path: dataset_id.clone(),
            dataset_id,
            meta_features,
            budget_s,
            pool_size: DEFAULT_POOL,
            seed,
            subsample_n: DEFAULT_SUBSAMPLE,
            clock: ClockMode::Simulated {
                decision_overhead_s: 0.0,
            },
        }
    }

    fn check(&self) -> Result<()> {
        if self.budget_s.is_nan() || self.budget_s <= 0.0 {
            return Err(Error::InvalidRequest(format!("budget_s {} must be positive", self.budget_s)));
        }
        if self.pool_size == 0 {
            return Err(Error::InvalidRequest("pool_size must be at least 1".into()));
        }
        Ok(())
    }

    fn run_id(&self, config_id: &str) -> String {
        format!("s{}-b{}-{}", self.seed, self.budget_s, config_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub config_id: String,
    pub config: Configuration,
    pub val_iou: f64,
    pub epoch: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub config_id: String,
    pub epoch: u32,
    pub status: StepStatus,
    pub val_iou: Option<f64>,
    /// Worker-reported seconds for the step.
    pub cost_s: f64,
    pub predicted_cost_s: f64,
    /// Run clock when the decision was taken.
    pub clock_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub selection_overhead_s: f64,
    pub worker_time_s: f64,
    pub idle_s: f64,
    pub total_s: f64,
}

impl BudgetLedger {
    pub fn imbalance(&self) -> f64 {
        (self.selection_overhead_s + self.worker_time_s + self.idle_s - self.total_s).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BudgetExhausted,
    PredictedCostExceedsBudget,
    PoolExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub dataset_id: String,
    pub budget_s: f64,
    pub seed: u64,
    pub pool_size: usize,
    pub incumbent: Option<Incumbent>,
    pub trace: Vec<TraceEntry>,
    pub ledger: BudgetLedger,
    pub stop_reason: StopReason,
}

impl TuneResult {
    pub fn best_val_iou(&self) -> Option<f64> {
        self.incumbent.as_ref().map(|i| i.val_iou)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Elapsed-time source for one run.
struct Clock {
    mode: ClockMode,
    start: Instant,
    simulated: f64,
}

impl Clock {
    fn new(mode: ClockMode) -> Self {
        Self {
            mode,
            start: Instant::now(),
            simulated: 0.0,
        }
    }

    fn now(&self) -> f64 {
        match self.mode {
            ClockMode::Wall => self.start.elapsed().as_secs_f64(),
            ClockMode::Simulated { .. } => self.simulated,
        }
    }

    fn charge(&mut self, seconds: f64) {
        if let ClockMode::Simulated { .. } = self.mode {
            self.simulated += seconds;
        }
    }

    fn decision_overhead(&self) -> f64 {
        match self.mode {
            ClockMode::Wall => 0.0,
            ClockMode::Simulated {
                decision_overhead_s,
            } => decision_overhead_s,
        }
    }
}

/// Sends `init`, failing on an error response.
fn init_worker(req: &TuneRequest, worker: &mut dyn Worker) -> Result<()> {
    let init = WorkerRequest::Init {
        dataset_path: req.dataset_path.clone(),
        subsample_n: req.subsample_n,
        seed: req.seed,
    };
    match worker.call(&init)? {
        WorkerResponse::Ok { .. } => Ok(()),
        WorkerResponse::Error { message } => Err(Error::Worker(format!("init: {message}"))),
    }
}

enum StepOutcome {
    Observed { val_iou: f64, cost_s: f64 },
    Failed { message: String, cost_s: f64 },
}

/// Dispatches one epoch and charges its time to the ledger.
fn dispatch(
    worker: &mut dyn Worker,
    clock: &mut Clock,
    ledger: &mut BudgetLedger,
    req: WorkerRequest,
) -> Result<StepOutcome> {
    let started = Instant::now();
    let resp = worker.call(&req)?;
    let measured = started.elapsed().as_secs_f64();
    let outcome = match resp {
        WorkerResponse::Ok {
            val_iou: Some(v),
            wall_clock_s: Some(c),
        } if (0.0..=1.0).contains(&v) && c >= 0.0 && c.is_finite() => StepOutcome::Observed {
            val_iou: v,
            cost_s: c,
        },
        WorkerResponse::Ok { wall_clock_s, .. } => StepOutcome::Failed {
            message: "malformed step response".into(),
            cost_s: wall_clock_s.unwrap_or(0.0).max(0.0),
        },
        WorkerResponse::Error { message } => StepOutcome::Failed { message, cost_s: 0.0 },
    };
    let charged = match clock.mode {
        ClockMode::Wall => measured,
        ClockMode::Simulated { .. } => match &outcome {
            StepOutcome::Observed { cost_s, .. } | StepOutcome::Failed { cost_s, .. } => *cost_s,
        },
    };
    clock.charge(charged);
    ledger.worker_time_s += charged;
    Ok(outcome)
}

fn finish_ledger(mut ledger: BudgetLedger, clock: &Clock) -> BudgetLedger {
    ledger.total_s = clock.now();
    ledger.idle_s = (ledger.total_s - ledger.selection_overhead_s - ledger.worker_time_s).max(0.0);
    ledger
}

/// The meta-learned tuning loop.
pub fn tune(req: &TuneRequest, checkpoint: &Checkpoint, worker: &mut dyn Worker) -> Result<TuneResult> {
    req.check()?;
    if checkpoint.trained_on(&req.dataset_id) {
        return Err(Error::LodoViolation(req.dataset_id.clone()));
    }
    let space = SearchSpace::standard();
    let dim = input_dim(&space);
    if checkpoint.perf.input_dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: checkpoint.perf.input_dim(),
        });
    }
    let meta = normalize(&req.meta_features, &checkpoint.meta_stats)?;
    let mut perf = checkpoint.perf.clone();
    let (reservoir_x, reservoir_y) = match perf.conditioning() {
        Some((x, y)) => (x.clone(), y.iter().copied().collect::<Vec<_>>()),
        None => (DMatrix::zeros(0, dim), Vec::new()),
    };
    let cost = &checkpoint.cost;

    init_worker(req, worker)?;

    let mut state = RunState::new(space.sample(req.seed, req.pool_size));
    let mut observed_inputs: Vec<PredictorInput> = Vec::new();
    let mut observed_y: Vec<f64> = Vec::new();
    let mut incumbent: Option<Incumbent> = None;
    let mut trace = Vec::new();
    let mut ledger = BudgetLedger::default();
    let mut clock = Clock::new(req.clock);
    let mut stale = false;
    // expected cost of the next decision: exact when simulated, the last
    // measured one on the wall clock
    let mut next_overhead = clock.decision_overhead();

    let stop_reason = loop {
        let decided_at = clock.now();
        if decided_at + next_overhead >= req.budget_s {
            break StopReason::BudgetExhausted;
        }
        let sel_started = Instant::now();
        if stale {
            let mut x = reservoir_x.clone();
            let obs = stack(&observed_inputs, dim)?;
            let n0 = x.nrows();
            x = x.insert_rows(n0, obs.nrows(), 0.0);
            x.rows_mut(n0, obs.nrows()).copy_from(&obs);
            let mut y = reservoir_y.clone();
            y.extend_from_slice(&observed_y);
            perf.condition(x, &y)?;
            stale = false;
        }
        let choice = select_next(&space, &perf, cost, &state, &meta);
        let overhead = match clock.mode {
            ClockMode::Wall => sel_started.elapsed().as_secs_f64(),
            ClockMode::Simulated { .. } => clock.decision_overhead(),
        };
        clock.charge(overhead);
        ledger.selection_overhead_s += overhead;
        next_overhead = overhead;

        let choice = match choice {
            Ok(c) => c,
            Err(Error::PoolExhausted) => break StopReason::PoolExhausted,
            Err(e) => return Err(e),
        };
        let remaining = req.budget_s - clock.now();
        if choice.prediction.cost_s > STOP_FRACTION * remaining {
            break StopReason::PredictedCostExceedsBudget;
        }

        let action = choice.action;
        let outcome = dispatch(
            worker,
            &mut clock,
            &mut ledger,
            WorkerRequest::Step {
                config: action.config.clone(),
                epoch: action.next_epoch,
                run_id: req.run_id(&action.config_id),
            },
        )?;
        let entry = state
            .pool
            .iter_mut()
            .find(|e| e.config_id == action.config_id)
            .expect("selected action comes from the pool");
        match outcome {
            StepOutcome::Observed { val_iou, cost_s } => {
                observed_inputs.push(featurize(&space, &action.config, &meta, action.next_epoch, &entry.history)?);
                observed_y.push(val_iou);
                stale = true;
                entry.history.push(val_iou);
                entry.costs.push(cost_s);
                if incumbent.as_ref().is_none_or(|i| val_iou > i.val_iou) {
                    incumbent = Some(Incumbent {
                        config_id: action.config_id.clone(),
                        config: action.config.clone(),
                        val_iou,
                        epoch: action.next_epoch,
                    });
                    state.incumbent = Some(val_iou);
                }
                trace.push(TraceEntry {
                    config_id: action.config_id,
                    epoch: action.next_epoch,
                    status: StepStatus::Ok,
                    val_iou: Some(val_iou),
                    cost_s,
                    predicted_cost_s: choice.prediction.cost_s,
                    clock_s: decided_at,
                    message: None,
                });
            }
            StepOutcome::Failed { message, cost_s } => {
                log::warn!("step {} epoch {} failed: {message}", action.config_id, action.next_epoch);
                entry.quarantined = true;
                trace.push(TraceEntry {
                    config_id: action.config_id,
                    epoch: action.next_epoch,
                    status: StepStatus::Failed,
                    val_iou: None,
                    cost_s,
                    predicted_cost_s: choice.prediction.cost_s,
                    clock_s: decided_at,
                    message: Some(message),
                });
            }
        }
    };

    Ok(TuneResult {
        dataset_id: req.dataset_id.clone(),
        budget_s: req.budget_s,
        seed: req.seed,
        pool_size: req.pool_size,
        incumbent,
        trace,
        ledger: finish_ledger(ledger, &clock),
        stop_reason,
    })
}

/// Baseline: visit the pool in a seeded random order and train each config
/// for all epochs until the budget runs out.
pub fn random_search(req: &TuneRequest, worker: &mut dyn Worker, shuffle_seed: u64) -> Result<TuneResult> {
    req.check()?;
    init_worker(req, worker)?;
    let mut pool = SearchSpace::standard().sample(req.seed, req.pool_size);
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    let mut clock = Clock::new(req.clock);
    let mut ledger = BudgetLedger::default();
    let mut incumbent: Option<Incumbent> = None;
    let mut trace = Vec::new();
    let mut stop_reason = StopReason::PoolExhausted;

    'pool: for config in pool {
        let config_id = config.config_id();
        for epoch in 1..=MAX_EPOCH {
            let decided_at = clock.now();
            if decided_at >= req.budget_s {
                stop_reason = StopReason::BudgetExhausted;
                break 'pool;
            }
            let outcome = dispatch(
                worker,
                &mut clock,
                &mut ledger,
                WorkerRequest::Step {
                    config: config.clone(),
                    epoch,
                    run_id: req.run_id(&config_id),
                },
            )?;
            match outcome {
                StepOutcome::Observed { val_iou, cost_s } => {
                    if incumbent.as_ref().is_none_or(|i| val_iou > i.val_iou) {
                        incumbent = Some(Incumbent {
                            config_id: config_id.clone(),
                            config: config.clone(),
                            val_iou,
                            epoch,
                        });
                    }
                    trace.push(TraceEntry {
                        config_id: config_id.clone(),
                        epoch,
                        status: StepStatus::Ok,
                        val_iou: Some(val_iou),
                        cost_s,
                        predicted_cost_s: 0.0,
                        clock_s: decided_at,
                        message: None,
                    });
                }
                StepOutcome::Failed { message, cost_s } => {
                    trace.push(TraceEntry {
                        config_id: config_id.clone(),
                        epoch,
                        status: StepStatus::Failed,
                        val_iou: None,
                        cost_s,
                        predicted_cost_s: 0.0,
                        clock_s: decided_at,
                        message: Some(message),
                    });
                    continue 'pool;
                }
            }
        }
    }

    Ok(TuneResult {
        dataset_id: req.dataset_id.clone(),
        budget_s: req.budget_s,
        seed: req.seed,
        pool_size: req.pool_size,
        incumbent,
        trace,
        ledger: finish_ledger(ledger, &clock),
        stop_reason,
    })
}
