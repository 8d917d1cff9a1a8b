//! Expected improvement per predicted second, at the next epoch of each
//! candidate.

use std::cmp::Ordering;
use std::f64::consts::PI;

use statrs::function::erf::erfc;

use crate::curve_store::MAX_EPOCH;
use crate::error::{Error, Result};
use crate::predictors::{featurize, input_dim, stack, CostPredictor, PerfPredictor};
use crate::search_space::{Configuration, SearchSpace};

pub const COST_FLOOR_S: f64 = 0.1;
const SIGMA_EPS: f64 = 1e-12;

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `σ (z Φ(z) + φ(z))` with `z = (mean − incumbent) / σ`; for σ ≤ 1e-12
/// the improvement is deterministic.
pub fn expected_improvement(mean: f64, variance: f64, incumbent: f64) -> Result<f64> {
    if variance < 0.0 || variance.is_nan() {
        return Err(Error::NegativeVariance(variance));
    }
    let sigma = variance.sqrt();
    if sigma <= SIGMA_EPS {
        return Ok((mean - incumbent).max(0.0));
    }
    let z = (mean - incumbent) / sigma;
    // The closed form can round to a tiny negative number far in the tail.
    Ok((sigma * (z * normal_cdf(z) + normal_pdf(z))).max(0.0))
}

/// Advance `config` from `next_epoch − 1` observed epochs to `next_epoch`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateAction {
    pub config_id: String,
    pub config: Configuration,
    pub next_epoch: u32,
    pub history: Vec<f64>,
}

impl CandidateAction {
    pub fn fresh(config: Configuration) -> Self {
        Self {
            config_id: config.config_id(),
            config,
            next_epoch: 1,
            history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
    pub cost_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub action: CandidateAction,
    pub prediction: Prediction,
    pub ei: f64,
    pub score: f64,
}

/// Scores already-predicted candidates and sorts them best first. Ties go
/// to the lower next epoch, then the smaller config id.
pub fn rank(
    candidates: Vec<CandidateAction>,
    predictions: &[Prediction],
    incumbent: f64,
) -> Result<Vec<Scored>> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    let mut scored = candidates
        .into_iter()
        .zip(predictions)
        .map(|(action, &p)| {
            let ei = expected_improvement(p.mean, p.variance, incumbent)?;
            Ok(Scored {
                action,
                prediction: p,
                ei,
                score: ei / p.cost_s.max(COST_FLOOR_S),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(compare);
    Ok(scored)
}

fn compare(a: &Scored, b: &Scored) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.action.next_epoch.cmp(&b.action.next_epoch))
        .then_with(|| a.action.config_id.cmp(&b.action.config_id))
}

/// Runs both predictors on the candidates at their next epoch.
pub fn predict(
    space: &SearchSpace,
    perf: &PerfPredictor,
    cost: &CostPredictor,
    candidates: &[CandidateAction],
    meta: &[f64],
) -> Result<Vec<Prediction>> {
    let inputs = candidates
        .iter()
        .map(|c| featurize(space, &c.config, meta, c.next_epoch, &c.history))
        .collect::<Result<Vec<_>>>()?;
    let x = stack(&inputs, input_dim(space))?;
    let perf_out = perf.predict(&x)?;
    let cost_out = cost.predict(&x)?;
    Ok(perf_out
        .into_iter()
        .zip(cost_out)
        .map(|((mean, variance), cost_s)| Prediction {
            mean,
            variance,
            cost_s,
        })
        .collect())
}

pub fn score_candidates(
    space: &SearchSpace,
    perf: &PerfPredictor,
    cost: &CostPredictor,
    incumbent: f64,
    candidates: Vec<CandidateAction>,
    meta: &[f64],
) -> Result<Vec<Scored>> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    let preds = predict(space, perf, cost, &candidates, meta)?;
    rank(candidates, &preds, incumbent)
}

/// One pool member's progress inside a run.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub config_id: String,
    pub config: Configuration,
    pub history: Vec<f64>,
    pub costs: Vec<f64>,
    pub quarantined: bool,
}

impl PoolEntry {
    pub fn new(config: Configuration) -> Self {
        Self {
            config_id: config.config_id(),
            config,
            history: Vec::new(),
            costs: Vec::new(),
            quarantined: false,
        }
    }

    pub fn exhausted(&self) -> bool {
        self.history.len() >= MAX_EPOCH as usize
    }

    pub fn action(&self) -> CandidateAction {
        CandidateAction {
            config_id: self.config_id.clone(),
            config: self.config.clone(),
            next_epoch: self.history.len() as u32 + 1,
            history: self.history.clone(),
        }
    }

    pub fn observed_cost(&self) -> Option<f64> {
        (!self.costs.is_empty()).then(|| self.costs.iter().sum::<f64>() / self.costs.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub pool: Vec<PoolEntry>,
    /// Best val_iou observed so far in this run.
    pub incumbent: Option<f64>,
}

impl RunState {
    pub fn new(pool: impl IntoIterator<Item = Configuration>) -> Self {
        Self {
            pool: pool.into_iter().map(PoolEntry::new).collect(),
            incumbent: None,
        }
    }

    pub fn open_actions(&self) -> Vec<CandidateAction> {
        self.pool
            .iter()
            .filter(|e| !e.exhausted() && !e.quarantined)
            .map(PoolEntry::action)
            .collect()
    }
}

/// Top-ranked action over the open part of the pool. Configs already
/// trained in this run are charged their mean observed epoch cost instead
/// of the predicted one.
pub fn select_next(
    space: &SearchSpace,
    perf: &PerfPredictor,
    cost: &CostPredictor,
    state: &RunState,
    meta: &[f64],
) -> Result<Scored> {
    let candidates = state.open_actions();
    if candidates.is_empty() {
        return Err(Error::PoolExhausted);
    }
    let mut preds = predict(space, perf, cost, &candidates, meta)?;
    for (p, c) in preds.iter_mut().zip(&candidates) {
        let entry = state.pool.iter().find(|e| e.config_id == c.config_id);
        if let Some(observed) = entry.and_then(PoolEntry::observed_cost) {
            p.cost_s = observed;
        }
    }
    let incumbent = state.incumbent.unwrap_or(0.0);
    Ok(rank(candidates, &preds, incumbent)?.remove(0))
}
