//! The conditional fine-tuning configuration space.
//!
//! A [`Configuration`] is one point in the space: optional LoRA adapters
//! (rank and dropout only exist when LoRA is on), AdamW weight decay and
//! learning rate, three flip/rotate augmentation switches, and one of six
//! learning-rate schedulers, each with its own parameter grid. The
//! optimizer, the loss and the LoRA injection target are fixed and appear
//! here only as constants.
//!
//! [`SearchSpace`] holds the grids. [`SearchSpace::standard`] is the full
//! space (a little over 8.1 billion points); tests build reduced spaces to
//! check the cardinality formula against literal enumeration.

use std::collections::HashSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const OPTIMIZER: &str = "AdamW";
pub const LOSS: &str = "BCE + Dice";
pub const LORA_TARGET: &str = "Image Encoder Attention & MLP Layers";

pub const LEARNING_RATES: [f64; 27] = [
    1e-5, 1.2e-5, 1.5e-5, 2e-5, 2.5e-5, 3.5e-5, 5e-5, 6e-5, 6.5e-5, 0.0001, 0.00012, 0.00018,
    0.00025, 0.00032, 0.0004, 0.00048, 0.0005, 0.00055, 0.0008, 0.001, 0.0015, 0.002, 0.003,
    0.004, 0.005, 0.006, 0.007,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheduler {
    Cosine,
    OneCycle,
    Plateau,
    CosineWarm,
    Step,
    Poly,
}

impl Scheduler {
    pub const ALL: [Scheduler; 6] = [
        Scheduler::Cosine,
        Scheduler::OneCycle,
        Scheduler::Plateau,
        Scheduler::CosineWarm,
        Scheduler::Step,
        Scheduler::Poly,
    ];

    fn index(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).unwrap()
    }
}

/// Scheduler parameters. Serialized as a bare object of the variant's
/// fields; the variant is recovered from which fields are present.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum SchedulerParams {
    Plateau {
        factor: f64,
        patience: u32,
    },
    CosineWarm {
        t0: u32,
        t_mult: u32,
    },
    OneCycle {
        pct_start: f64,
        div_factor: u32,
        final_div_factor: u32,
    },
    Step {
        step_size: u32,
    },
    Poly {
        power: f64,
    },
    Cosine {},
}

impl SchedulerParams {
    pub fn scheduler(&self) -> Scheduler {
        match self {
            SchedulerParams::Plateau { .. } => Scheduler::Plateau,
            SchedulerParams::CosineWarm { .. } => Scheduler::CosineWarm,
            SchedulerParams::OneCycle { .. } => Scheduler::OneCycle,
            SchedulerParams::Step { .. } => Scheduler::Step,
            SchedulerParams::Poly { .. } => Scheduler::Poly,
            SchedulerParams::Cosine {} => Scheduler::Cosine,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    factor: Option<f64>,
    patience: Option<u32>,
    t0: Option<u32>,
    t_mult: Option<u32>,
    pct_start: Option<f64>,
    div_factor: Option<u32>,
    final_div_factor: Option<u32>,
    step_size: Option<u32>,
    power: Option<f64>,
}

impl<'de> Deserialize<'de> for SchedulerParams {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = RawParams::deserialize(d)?;
        let params = match r {
            RawParams {
                factor: Some(factor),
                patience: Some(patience),
                t0: None,
                t_mult: None,
                pct_start: None,
                div_factor: None,
                final_div_factor: None,
                step_size: None,
                power: None,
            } => SchedulerParams::Plateau { factor, patience },
            RawParams {
                factor: None,
                patience: None,
                t0: Some(t0),
                t_mult: Some(t_mult),
                pct_start: None,
                div_factor: None,
                final_div_factor: None,
                step_size: None,
                power: None,
            } => SchedulerParams::CosineWarm { t0, t_mult },
            RawParams {
                factor: None,
                patience: None,
                t0: None,
                t_mult: None,
                pct_start: Some(pct_start),
                div_factor: Some(div_factor),
                final_div_factor: Some(final_div_factor),
                step_size: None,
                power: None,
            } => SchedulerParams::OneCycle {
                pct_start,
                div_factor,
                final_div_factor,
            },
            RawParams {
                factor: None,
                patience: None,
                t0: None,
                t_mult: None,
                pct_start: None,
                div_factor: None,
                final_div_factor: None,
                step_size: Some(step_size),
                power: None,
            } => SchedulerParams::Step { step_size },
            RawParams {
                factor: None,
                patience: None,
                t0: None,
                t_mult: None,
                pct_start: None,
                div_factor: None,
                final_div_factor: None,
                step_size: None,
                power: Some(power),
            } => SchedulerParams::Poly { power },
            RawParams {
                factor: None,
                patience: None,
                t0: None,
                t_mult: None,
                pct_start: None,
                div_factor: None,
                final_div_factor: None,
                step_size: None,
                power: None,
            } => SchedulerParams::Cosine {},
            _ => return Err(D::Error::custom("scheduler_params matches no scheduler")),
        };
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Configuration {
    pub lora_enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lora_rank: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lora_dropout: Option<f64>,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub aug_hflip: bool,
    pub aug_vflip: bool,
    pub aug_rotate: bool,
    pub scheduler: Scheduler,
    pub scheduler_params: SchedulerParams,
}

impl Configuration {
    /// Canonical JSON: keys sorted, absent conditionals omitted.
    pub fn canonical_json(&self) -> String {
        // serde_json::Value maps are BTreeMaps, so this sorts keys.
        let value = serde_json::to_value(self).expect("configuration serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// First 16 hex chars of the SHA-256 of [`Self::canonical_json`].
    pub fn config_id(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn augmentation_count(&self) -> u32 {
        self.aug_hflip as u32 + self.aug_vflip as u32 + self.aug_rotate as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Fixed-length numeric encoding of a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigVector(pub Vec<f64>);

impl ConfigVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub lora_ranks: Vec<u32>,
    pub lora_dropouts: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub plateau_factors: Vec<f64>,
    pub plateau_patience: Vec<u32>,
    pub cosine_warm_t0: Vec<u32>,
    pub cosine_warm_t_mult: Vec<u32>,
    pub one_cycle_pct_start: Vec<f64>,
    pub one_cycle_div_factor: Vec<u32>,
    pub one_cycle_final_div_factor: Vec<u32>,
    pub step_sizes: Vec<u32>,
    pub poly_powers: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self::standard()
    }
}

impl SearchSpace {
    pub fn standard() -> Self {
        Self {
            lora_ranks: vec![4, 8, 16],
            lora_dropouts: vec![0.0, 0.1],
            weight_decays: vec![0.0, 1e-5, 5e-5, 1e-4],
            learning_rates: LEARNING_RATES.to_vec(),
            plateau_factors: vec![0.1, 0.5, 0.8],
            plateau_patience: vec![0, 1, 2],
            cosine_warm_t0: vec![2, 3, 5],
            cosine_warm_t_mult: vec![1, 2],
            // 0.030..=0.100 in steps of 0.005, built from integers so the
            // grid values are the nearest doubles to the decimal literals.
            one_cycle_pct_start: (30..=100).step_by(5).map(|m| m as f64 / 1000.0).collect(),
            one_cycle_div_factor: (10..=100).collect(),
            one_cycle_final_div_factor: (10..=1000).collect(),
            step_sizes: vec![3, 5],
            poly_powers: vec![0.5, 0.9, 1.0],
        }
    }

    pub fn scheduler_size(&self, s: Scheduler) -> u64 {
        let n = |len: usize| len as u64;
        match s {
            Scheduler::Cosine => 1,
            Scheduler::Plateau => n(self.plateau_factors.len()) * n(self.plateau_patience.len()),
            Scheduler::CosineWarm => {
                n(self.cosine_warm_t0.len()) * n(self.cosine_warm_t_mult.len())
            }
            Scheduler::OneCycle => {
                n(self.one_cycle_pct_start.len())
                    * n(self.one_cycle_div_factor.len())
                    * n(self.one_cycle_final_div_factor.len())
            }
            Scheduler::Step => n(self.step_sizes.len()),
            Scheduler::Poly => n(self.poly_powers.len()),
        }
    }

    /// Exact cardinality: product over independent fields, sum over the
    /// conditional branches (LoRA on/off, scheduler family).
    pub fn enumerate_size(&self) -> u64 {
        let lora = 1 + self.lora_ranks.len() as u64 * self.lora_dropouts.len() as u64;
        let schedulers: u64 = Scheduler::ALL.iter().map(|&s| self.scheduler_size(s)).sum();
        lora * self.weight_decays.len() as u64 * self.learning_rates.len() as u64 * 8 * schedulers
    }

    pub fn validate(&self, c: &Configuration) -> std::result::Result<(), Vec<Violation>> {
        let mut v = Vec::new();
        let mut push = |field: &'static str, message: String| v.push(Violation { field, message });

        if c.lora_enabled {
            match c.lora_rank {
                None => push("lora_rank", "required when lora_enabled".into()),
                Some(r) if !self.lora_ranks.contains(&r) => {
                    push("lora_rank", format!("{r} not in grid"))
                }
                _ => {}
            }
            match c.lora_dropout {
                None => push("lora_dropout", "required when lora_enabled".into()),
                Some(d) if !self.lora_dropouts.contains(&d) => {
                    push("lora_dropout", format!("{d} not in grid"))
                }
                _ => {}
            }
        } else {
            if c.lora_rank.is_some() {
                push("lora_rank", "present while lora_enabled is false".into());
            }
            if c.lora_dropout.is_some() {
                push("lora_dropout", "present while lora_enabled is false".into());
            }
        }
        if !self.weight_decays.contains(&c.weight_decay) {
            push("weight_decay", format!("{} not in grid", c.weight_decay));
        }
        if !self.learning_rates.contains(&c.learning_rate) {
            push("learning_rate", format!("{} not in grid", c.learning_rate));
        }
        if c.scheduler_params.scheduler() != c.scheduler {
            push(
                "scheduler_params",
                format!(
                    "{:?} params for scheduler {:?}",
                    c.scheduler_params.scheduler(),
                    c.scheduler
                ),
            );
        } else {
            let off_grid = match c.scheduler_params {
                SchedulerParams::Plateau { factor, patience } => {
                    !self.plateau_factors.contains(&factor)
                        || !self.plateau_patience.contains(&patience)
                }
                SchedulerParams::CosineWarm { t0, t_mult } => {
                    !self.cosine_warm_t0.contains(&t0) || !self.cosine_warm_t_mult.contains(&t_mult)
                }
                SchedulerParams::OneCycle {
                    pct_start,
                    div_factor,
                    final_div_factor,
                } => {
                    !self.one_cycle_pct_start.contains(&pct_start)
                        || !self.one_cycle_div_factor.contains(&div_factor)
                        || !self.one_cycle_final_div_factor.contains(&final_div_factor)
                }
                SchedulerParams::Step { step_size } => !self.step_sizes.contains(&step_size),
                SchedulerParams::Poly { power } => !self.poly_powers.contains(&power),
                SchedulerParams::Cosine {} => false,
            };
            if off_grid {
                push("scheduler_params", "value not in grid".into());
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    /// Draws one configuration: the branch first (LoRA on/off, scheduler
    /// family), then the leaves uniformly within the branch.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        fn pick<T: Copy, R: Rng + ?Sized>(rng: &mut R, xs: &[T]) -> T {
            xs[rng.random_range(0..xs.len())]
        }
        let lora_enabled = rng.random_bool(0.5);
        let (lora_rank, lora_dropout) = if lora_enabled {
            (
                Some(pick(rng, &self.lora_ranks)),
                Some(pick(rng, &self.lora_dropouts)),
            )
        } else {
            (None, None)
        };
        let weight_decay = pick(rng, &self.weight_decays);
        let learning_rate = pick(rng, &self.learning_rates);
        let aug_hflip = rng.random_bool(0.5);
        let aug_vflip = rng.random_bool(0.5);
        let aug_rotate = rng.random_bool(0.5);
        let scheduler = pick(rng, &Scheduler::ALL);
        let scheduler_params = match scheduler {
            Scheduler::Cosine => SchedulerParams::Cosine {},
            Scheduler::Plateau => SchedulerParams::Plateau {
                factor: pick(rng, &self.plateau_factors),
                patience: pick(rng, &self.plateau_patience),
            },
            Scheduler::CosineWarm => SchedulerParams::CosineWarm {
                t0: pick(rng, &self.cosine_warm_t0),
                t_mult: pick(rng, &self.cosine_warm_t_mult),
            },
            Scheduler::OneCycle => SchedulerParams::OneCycle {
                pct_start: pick(rng, &self.one_cycle_pct_start),
                div_factor: pick(rng, &self.one_cycle_div_factor),
                final_div_factor: pick(rng, &self.one_cycle_final_div_factor),
            },
            Scheduler::Step => SchedulerParams::Step {
                step_size: pick(rng, &self.step_sizes),
            },
            Scheduler::Poly => SchedulerParams::Poly {
                power: pick(rng, &self.poly_powers),
            },
        };
        Configuration {
            lora_enabled,
            lora_rank,
            lora_dropout,
            weight_decay,
            learning_rate,
            aug_hflip,
            aug_vflip,
            aug_rotate,
            scheduler,
            scheduler_params,
        }
    }

    /// `n` configurations, deterministic in `seed`. A draw that duplicates an
    /// earlier one is redrawn up to 10 times before being accepted.
    pub fn sample(&self, seed: u64, n: usize) -> Vec<Configuration> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = HashSet::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut c = self.sample_one(&mut rng);
            for _ in 0..10 {
                if !seen.contains(&c.config_id()) {
                    break;
                }
                c = self.sample_one(&mut rng);
            }
            seen.insert(c.config_id());
            out.push(c);
        }
        out
    }

    pub fn encoding_dim(&self) -> usize {
        self.layout().dim
    }

    fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let lora_bit = take(1);
        let rank = take(self.lora_ranks.len());
        let dropout = take(self.lora_dropouts.len());
        let wd_zero = take(1);
        let wd = take(1);
        let lr = take(1);
        let aug = take(3);
        let sched = take(Scheduler::ALL.len());
        let plateau = take(2);
        let cosine_warm = take(2);
        let one_cycle = take(3);
        let step = take(1);
        let poly = take(1);
        Layout {
            lora_bit,
            rank,
            dropout,
            wd_zero,
            wd,
            lr,
            aug,
            sched,
            plateau,
            cosine_warm,
            one_cycle,
            step,
            poly,
            dim: at,
        }
    }

    /// One-hot categoricals; log10 min-max for learning rate and (non-zero)
    /// weight decay; min-max over the grid for scheduler numerics. Inactive
    /// conditional slots stay zero.
    pub fn encode(&self, c: &Configuration) -> Result<ConfigVector> {
        self.validate(c).map_err(Error::InvalidConfig)?;
        let l = self.layout();
        let mut v = vec![0.0; l.dim];

        if c.lora_enabled {
            v[l.lora_bit] = 1.0;
            let r = c.lora_rank.unwrap();
            let d = c.lora_dropout.unwrap();
            v[l.rank + self.lora_ranks.iter().position(|&x| x == r).unwrap()] = 1.0;
            v[l.dropout + self.lora_dropouts.iter().position(|&x| x == d).unwrap()] = 1.0;
        }

        if c.weight_decay == 0.0 {
            v[l.wd_zero] = 1.0;
        } else {
            let nonzero: Vec<f64> = self
                .weight_decays
                .iter()
                .copied()
                .filter(|&w| w > 0.0)
                .collect();
            v[l.wd] = log_minmax(c.weight_decay, &nonzero);
        }
        v[l.lr] = log_minmax(c.learning_rate, &self.learning_rates);
        v[l.aug] = c.aug_hflip as u8 as f64;
        v[l.aug + 1] = c.aug_vflip as u8 as f64;
        v[l.aug + 2] = c.aug_rotate as u8 as f64;
        v[l.sched + c.scheduler.index()] = 1.0;

        match c.scheduler_params {
            SchedulerParams::Plateau { factor, patience } => {
                v[l.plateau] = minmax(factor, &self.plateau_factors);
                v[l.plateau + 1] = minmax_u(patience, &self.plateau_patience);
            }
            SchedulerParams::CosineWarm { t0, t_mult } => {
                v[l.cosine_warm] = minmax_u(t0, &self.cosine_warm_t0);
                v[l.cosine_warm + 1] = minmax_u(t_mult, &self.cosine_warm_t_mult);
            }
            SchedulerParams::OneCycle {
                pct_start,
                div_factor,
                final_div_factor,
            } => {
                v[l.one_cycle] = minmax(pct_start, &self.one_cycle_pct_start);
                v[l.one_cycle + 1] = minmax_u(div_factor, &self.one_cycle_div_factor);
                v[l.one_cycle + 2] = minmax_u(final_div_factor, &self.one_cycle_final_div_factor);
            }
            SchedulerParams::Step { step_size } => {
                v[l.step] = minmax_u(step_size, &self.step_sizes);
            }
            SchedulerParams::Poly { power } => {
                v[l.poly] = minmax(power, &self.poly_powers);
            }
            SchedulerParams::Cosine {} => {}
        }
        Ok(ConfigVector(v))
    }
}

struct Layout {
    lora_bit: usize,
    rank: usize,
    dropout: usize,
    wd_zero: usize,
    wd: usize,
    lr: usize,
    aug: usize,
    sched: usize,
    plateau: usize,
    cosine_warm: usize,
    one_cycle: usize,
    step: usize,
    poly: usize,
    dim: usize,
}

fn minmax(x: f64, grid: &[f64]) -> f64 {
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        (x - lo) / (hi - lo)
    } else {
        0.0
    }
}

fn minmax_u(x: u32, grid: &[u32]) -> f64 {
    let g: Vec<f64> = grid.iter().map(|&v| v as f64).collect();
    minmax(x as f64, &g)
}

fn log_minmax(x: f64, grid: &[f64]) -> f64 {
    let g: Vec<f64> = grid.iter().map(|v| v.log10()).collect();
    minmax(x.log10(), &g)
}
