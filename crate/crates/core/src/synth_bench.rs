//! Deterministic surrogate for "fine-tune this configuration on this
//! dataset for one more epoch".
//!
//! Curves saturate exponentially: `v(t) = a − (a − b) e^{−r t} + ε`. The
//! asymptote `a`, start `b` and rate `r` are smooth functions of the
//! configuration encoding built from seeded linear and sine features. A
//! suite seed fixes the part of those functions shared by every task; each
//! task adds its own perturbation and a difficulty level, and the task's
//! synthetic meta-features are derived from that difficulty so that
//! meta-learning has something to transfer.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::curve_store::{CurveRecord, CurveStore, MAX_EPOCH};
use crate::error::{Error, Result};
use crate::meta_features::MetaFeatures;
use crate::search_space::{Configuration, SearchSpace};
use crate::tuner::protocol::{LineHandler, WorkerRequest, WorkerResponse};
use crate::tuner::TuneResult;

pub const NOISE_SD: f64 = 0.005;
const N_SINES: usize = 12;
const TASK_PERTURBATION: f64 = 0.35;

/// Dataset ids used for the first tasks of a generated suite.
pub const DATASET_NAMES: [&str; 13] = [
    "polyp",
    "lesion",
    "leaf",
    "covid",
    "eyes",
    "fiber",
    "cardiac",
    "chest",
    "US",
    "human_parsing",
    "golf",
    "terrain",
    "cholec",
];

pub fn dataset_name(index: usize) -> String {
    DATASET_NAMES
        .get(index)
        .map_or_else(|| format!("task-{index:02}"), |s| s.to_string())
}

/// splitmix64 finalizer; used to derive independent seeds.
pub fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn seed_of(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED, |acc, &p| mix(acc ^ mix(p)))
}

fn str_seed(s: &str) -> u64 {
    s.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01B3)
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Linear-plus-sine map from an encoding to a scalar.
#[derive(Debug, Clone)]
struct FeatureMap {
    linear: Vec<f64>,
    freqs: Vec<Vec<f64>>,
    phases: Vec<f64>,
    sine_weights: Vec<f64>,
}

impl FeatureMap {
    fn random(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        let mut normal = |s: f64| -> f64 {
            let v: f64 = StandardNormal.sample(&mut *rng);
            s * v
        };
        let linear = (0..dim).map(|_| normal(1.0)).collect();
        let freqs = (0..N_SINES)
            .map(|_| (0..dim).map(|_| normal(1.5)).collect())
            .collect();
        let sine_weights = (0..N_SINES).map(|_| normal(1.0)).collect();
        let phases = (0..N_SINES).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Self {
            linear,
            freqs,
            phases,
            sine_weights,
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(x).map(|(w, v)| w * v).sum();
        let sines: f64 = self
            .freqs
            .iter()
            .zip(&self.phases)
            .zip(&self.sine_weights)
            .map(|((f, p), w)| w * (f.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + p).sin())
            .sum();
        // roughly unit variance over uniformly sampled configurations
        (lin + sines) / ((x.len() + N_SINES) as f64).sqrt() * 1.6
    }
}

#[derive(Debug, Clone)]
struct Surface {
    shared: FeatureMap,
    task: FeatureMap,
}

impl Surface {
    fn eval(&self, x: &[f64]) -> f64 {
        self.shared.eval(x) + TASK_PERTURBATION * self.task.eval(x)
    }
}

/// Noise-free curve parameters of one configuration on one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveParams {
    pub asymptote: f64,
    pub start: f64,
    pub rate: f64,
}

impl CurveParams {
    pub fn value(&self, epoch: f64) -> f64 {
        self.asymptote - (self.asymptote - self.start) * (-self.rate * epoch).exp()
    }
}

#[derive(Debug, Clone)]
pub struct SurrogateTask {
    pub dataset_id: String,
    pub suite_seed: u64,
    pub task_seed: u64,
    space: SearchSpace,
    /// asymptote range [floor, ceiling]
    floor: f64,
    ceiling: f64,
    difficulty: f64,
    asymptote: Surface,
    start: Surface,
    rate: Surface,
}

impl SurrogateTask {
    pub fn new(dataset_id: impl Into<String>, suite_seed: u64, task_seed: u64) -> Self {
        let space = SearchSpace::standard();
        let dim = space.encoding_dim();
        let mut shared = ChaCha8Rng::seed_from_u64(seed_of(&[suite_seed, 1]));
        let mut own = ChaCha8Rng::seed_from_u64(seed_of(&[suite_seed, task_seed, 2]));
        let mut surface = |own: &mut ChaCha8Rng| Surface {
            shared: FeatureMap::random(&mut shared, dim),
            task: FeatureMap::random(own, dim),
        };
        let asymptote = surface(&mut own);
        let start = surface(&mut own);
        let rate = surface(&mut own);
        let difficulty: f64 = own.random_range(0.0..1.0);
        let floor = 0.10 + 0.35 * (1.0 - difficulty);
        let ceiling = (floor + 0.45 + 0.1 * own.random_range(0.0..1.0)).min(0.97);
        Self {
            dataset_id: dataset_id.into(),
            suite_seed,
            task_seed,
            space,
            floor,
            ceiling,
            difficulty,
            asymptote,
            start,
            rate,
        }
    }

    /// The task a dataset id names within a suite.
    pub fn for_dataset(dataset_id: &str, suite_seed: u64) -> Self {
        Self::new(dataset_id, suite_seed, str_seed(dataset_id))
    }

    pub fn curve(&self, config: &Configuration) -> Result<CurveParams> {
        let x = self.space.encode(config)?;
        let x = x.as_slice();
        let asymptote = self.floor + (self.ceiling - self.floor) * sigmoid(self.asymptote.eval(x));
        let start = asymptote * (0.1 + 0.6 * sigmoid(self.start.eval(x)));
        let rate = 0.2 + 1.3 * sigmoid(self.rate.eval(x));
        Ok(CurveParams {
            asymptote,
            start,
            rate,
        })
    }

    pub fn cost(config: &Configuration) -> f64 {
        1.0 + 0.3 * config.lora_rank.unwrap_or(0) as f64 / 16.0
            + 0.2 * config.augmentation_count() as f64
    }

    pub fn noiseless(&self, config: &Configuration, epoch: u32) -> Result<f64> {
        check_epoch(epoch)?;
        Ok(self.curve(config)?.value(epoch as f64))
    }

    /// Noisy observation and cost of training `config` for its `epoch`-th
    /// epoch. The noise is seeded per (task, config, epoch).
    pub fn simulate_step(&self, config: &Configuration, epoch: u32) -> Result<(f64, f64)> {
        check_epoch(epoch)?;
        let clean = self.curve(config)?.value(epoch as f64);
        let id = u64::from_str_radix(&config.config_id(), 16).expect("hex config id");
        let mut rng = ChaCha8Rng::seed_from_u64(seed_of(&[self.suite_seed, self.task_seed, id, epoch as u64]));
        let eps = Normal::new(0.0, NOISE_SD).unwrap().sample(&mut rng);
        Ok(((clean + eps).clamp(0.0, 1.0), Self::cost(config)))
    }

    /// Score of the pretrained model without fine-tuning.
    pub fn zero_shot(&self) -> f64 {
        0.6 * self.floor
    }

    /// Synthetic descriptors tied to the task's difficulty.
    pub fn meta_features(&self) -> MetaFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_of(&[self.suite_seed, self.task_seed, 3]));
        let d = self.difficulty;
        let side = 256.0 + 768.0 * rng.random_range(0.0..1.0f64);
        MetaFeatures {
            n_images: 100.0,
            n_classes: if rng.random_bool(0.4) {
                rng.random_range(3..8) as f64
            } else {
                2.0
            },
            mean_height: side,
            mean_width: side * rng.random_range(0.8..1.25),
            mean_foreground_fraction: (0.45 * (1.0 - d) + 0.05 * rng.random_range(0.0..1.0)).clamp(0.0, 1.0),
            mean_instances_per_image: 1.0 + 8.0 * d + rng.random_range(0.0..1.0),
            channel_count: if rng.random_bool(0.2) { 1.0 } else { 3.0 },
        }
    }
}

fn check_epoch(epoch: u32) -> Result<()> {
    if epoch == 0 || epoch > MAX_EPOCH {
        return Err(Error::EpochOutOfRange(epoch));
    }
    Ok(())
}

/// Meta-dataset of full 10-epoch curves plus each task's meta-features.
#[derive(Debug, Clone)]
pub struct MetaDataset {
    pub store: CurveStore,
    pub features: BTreeMap<String, MetaFeatures>,
}

pub fn suite_tasks(n_tasks: usize, seed: u64) -> Vec<SurrogateTask> {
    (0..n_tasks)
        .map(|i| SurrogateTask::for_dataset(&dataset_name(i), seed))
        .collect()
}

pub fn generate_meta_dataset(n_tasks: usize, pairs_per_task: usize, seed: u64) -> Result<MetaDataset> {
    generate_for_tasks(&suite_tasks(n_tasks, seed), pairs_per_task, seed)
}

pub fn generate_for_tasks(
    tasks: &[SurrogateTask],
    pairs_per_task: usize,
    seed: u64,
) -> Result<MetaDataset> {
    let space = SearchSpace::standard();
    let mut store = CurveStore::new();
    let mut features = BTreeMap::new();
    for (i, task) in tasks.iter().enumerate() {
        features.insert(task.dataset_id.clone(), task.meta_features());
        for config in space.sample(seed_of(&[seed, i as u64, 4]), pairs_per_task) {
            for epoch in 1..=MAX_EPOCH {
                let (val_iou, cost) = task.simulate_step(&config, epoch)?;
                let r = CurveRecord::new(task.dataset_id.clone(), config.clone(), epoch, val_iou, cost, seed);
                match store.append(r) {
                    // resampled duplicates within a task share a curve key
                    Err(Error::EpochGap { .. }) => break,
                    other => other?,
                }
            }
        }
    }
    Ok(MetaDataset { store, features })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBest {
    pub config_id: String,
    pub value: f64,
    pub cumulative_cost_s: f64,
}

/// Exhaustive noiseless evaluation of every pool member at every epoch.
pub fn oracle_best(task: &SurrogateTask, pool: &[Configuration]) -> Result<OracleBest> {
    let mut best: Option<OracleBest> = None;
    for c in pool {
        let cost = SurrogateTask::cost(c);
        for epoch in 1..=MAX_EPOCH {
            let v = task.noiseless(c, epoch)?;
            if best.as_ref().is_none_or(|b| v > b.value) {
                best = Some(OracleBest {
                    config_id: c.config_id(),
                    value: v,
                    cumulative_cost_s: cost * epoch as f64,
                });
            }
        }
    }
    best.ok_or(Error::NoCandidates)
}

/// Total seconds needed to train every pool member for all epochs.
pub fn exhaustive_cost(pool: &[Configuration]) -> f64 {
    pool.iter().map(|c| SurrogateTask::cost(c) * MAX_EPOCH as f64).sum()
}

/// Oracle value minus the noiseless value of the run's incumbent at the
/// epoch it was observed. A run without an incumbent scores zero.
pub fn regret(task: &SurrogateTask, result: &TuneResult, oracle_value: f64) -> Result<f64> {
    let best = match &result.incumbent {
        Some(i) => task.noiseless(&i.config, i.epoch)?,
        None => 0.0,
    };
    Ok(oracle_value - best)
}

/// Multiplies reported step costs by a seeded factor in `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostJitter {
    pub seed: u64,
    pub lo: f64,
    pub hi: f64,
}

/// Protocol server backed by surrogate tasks. `init`'s dataset_path names
/// the task.
#[derive(Debug, Clone)]
pub struct MockWorker {
    suite_seed: u64,
    task: Option<SurrogateTask>,
    runs: HashMap<String, u32>,
    cost_jitter: Option<CostJitter>,
    fixed_cost: Option<f64>,
    constant: Option<f64>,
    failing: Vec<String>,
    steps: u64,
}

impl MockWorker {
    pub fn new(suite_seed: u64) -> Self {
        Self {
            suite_seed,
            task: None,
            runs: HashMap::new(),
            cost_jitter: None,
            fixed_cost: None,
            constant: None,
            failing: Vec::new(),
            steps: 0,
        }
    }

    /// Uses an explicit task instead of looking one up at `init`.
    pub fn with_task(task: SurrogateTask) -> Self {
        let mut w = Self::new(task.suite_seed);
        w.task = Some(task);
        w
    }

    pub fn with_cost_jitter(mut self, jitter: CostJitter) -> Self {
        self.cost_jitter = Some(jitter);
        self
    }

    /// Every step reports this many seconds instead of the task cost.
    pub fn with_fixed_cost(mut self, seconds: f64) -> Self {
        self.fixed_cost = Some(seconds);
        self
    }

    /// Every step and zero-shot query reports this val_iou.
    pub fn with_constant_output(mut self, val_iou: f64) -> Self {
        self.constant = Some(val_iou);
        self
    }

    /// Every step of these config ids answers with an error.
    pub fn failing_on(mut self, config_ids: Vec<String>) -> Self {
        self.failing = config_ids;
        self
    }

    pub fn steps_served(&self) -> u64 {
        self.steps
    }

    fn respond(&mut self, req: WorkerRequest) -> WorkerResponse {
        match req {
            WorkerRequest::Init { dataset_path, .. } => {
                if self.task.as_ref().is_none_or(|t| t.dataset_id != dataset_path) {
                    self.task = Some(SurrogateTask::for_dataset(&dataset_path, self.suite_seed));
                }
                self.runs.clear();
                WorkerResponse::ok()
            }
            WorkerRequest::Step {
                config,
                epoch,
                run_id,
            } => {
                let Some(task) = &self.task else {
                    return WorkerResponse::error("step before init");
                };
                let expected = self.runs.get(&run_id).map_or(1, |e| e + 1);
                if epoch != expected {
                    return WorkerResponse::error(format!(
                        "epoch order: run {run_id} expects epoch {expected}, got {epoch}"
                    ));
                }
                if self.failing.contains(&config.config_id()) {
                    return WorkerResponse::error("training diverged");
                }
                match task.simulate_step(&config, epoch) {
                    Ok((v, mut cost)) => {
                        let v = self.constant.unwrap_or(v);
                        if let Some(c) = self.fixed_cost {
                            cost = c;
                        }
                        if let Some(j) = self.cost_jitter {
                            let mut rng = ChaCha8Rng::seed_from_u64(seed_of(&[
                                j.seed,
                                str_seed(&run_id),
                                epoch as u64,
                            ]));
                            cost *= rng.random_range(j.lo..=j.hi);
                        }
                        self.runs.insert(run_id, epoch);
                        self.steps += 1;
                        WorkerResponse::measured(v, cost)
                    }
                    Err(e) => WorkerResponse::error(e.to_string()),
                }
            }
            WorkerRequest::ZeroShot => match &self.task {
                Some(t) => WorkerResponse::measured(self.constant.unwrap_or_else(|| t.zero_shot()), 0.5),
                None => WorkerResponse::error("zero_shot before init"),
            },
            WorkerRequest::Shutdown => WorkerResponse::ok(),
        }
    }
}

impl LineHandler for MockWorker {
    fn handle_line(&mut self, line: &str) -> String {
        let resp = match serde_json::from_str::<WorkerRequest>(line) {
            Ok(req) => self.respond(req),
            Err(e) => WorkerResponse::error(format!("bad request: {e}")),
        };
        serde_json::to_string(&resp).expect("response serializes")
    }
}
