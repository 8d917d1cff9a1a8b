use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::cost::CostPredictor;
use super::gp::PerfPredictor;
use super::input::TrainingSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Validation loss is measured every this many steps and after the last.
    pub eval_every: usize,
    /// Points the fitted GP is conditioned on after training.
    pub reservoir_size: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 3e-3,
            seed: 0,
            batch_size: 256,
            eval_every: 10,
            reservoir_size: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    /// (steps taken, validation loss); the first entry is the initial state.
    pub validation: Vec<(usize, f64)>,
    /// Loss of the returned parameters.
    pub best: f64,
}

impl FitTrace {
    pub fn initial(&self) -> f64 {
        self.validation[0].1
    }

    /// First evaluated step count whose validation loss is at or below
    /// `target`.
    pub fn steps_to_reach(&self, target: f64) -> Option<usize> {
        self.validation
            .iter()
            .find(|(_, v)| *v <= target)
            .map(|(s, _)| *s)
    }
}

fn subset(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    index::sample(rng, n, k.min(n)).into_vec()
}

/// Trains feature extractor and kernel hyperparameters with Adam on the
/// mean NLL of random mini-batches. The parameters with the lowest NLL on
/// a fixed held-in validation batch (the initial ones included) are kept,
/// then the GP is conditioned on a seeded reservoir of training rows.
pub fn fit_perf(
    data: &TrainingSet,
    init: PerfPredictor,
    opts: &FitOptions,
) -> Result<(PerfPredictor, FitTrace)> {
    if data.is_empty() {
        return Err(Error::EmptyStore);
    }
    let n = data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (val_x, val_y, _) = data.select(&subset(&mut rng, n, opts.batch_size));
    let reservoir = subset(&mut rng, n, opts.reservoir_size);

    let mut p = init;
    p.clear();
    let mut best = (p.nll(&val_x, &val_y)?, p.params());
    let mut validation = vec![(0, best.0)];
    let mut params = best.1.clone();
    let mut adam = Adam::new(params.len(), opts.lr);
    let eval_every = opts.eval_every.max(1);

    for step in 0..opts.steps {
        let (x, y, _) = data.select(&subset(&mut rng, n, opts.batch_size));
        let g = p.nll_grad(&x, &y)?;
        let mut grad = g.extractor;
        grad.extend(g.kernel);
        if !g.loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        adam.step(&mut params, &grad);
        p.set_params(&params);
        // set_params clamps the noise floor; keep the optimizer's copy in sync
        params = p.params();

        let done = step + 1;
        if done % eval_every == 0 || done == opts.steps {
            let v = p.nll(&val_x, &val_y)?;
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            validation.push((done, v));
            if v < best.0 {
                best = (v, params.clone());
            }
        }
    }

    p.set_params(&best.1);
    let (rx, ry, _) = data.select(&reservoir);
    p.condition(rx, &ry)?;
    Ok((
        p,
        FitTrace {
            validation,
            best: best.0,
        },
    ))
}

/// Trains the cost MLP on MSE of log cost, keeping the best parameters on
/// a fixed held-in validation batch.
pub fn fit_cost(
    data: &TrainingSet,
    init: CostPredictor,
    opts: &FitOptions,
) -> Result<(CostPredictor, FitTrace)> {
    if data.is_empty() {
        return Err(Error::EmptyStore);
    }
    let n = data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xC057);
    let (val_x, _, val_c) = data.select(&subset(&mut rng, n, opts.batch_size));

    let mut p = init;
    let mut best = (p.mse(&val_x, &val_c)?, p.mlp.params());
    let mut validation = vec![(0, best.0)];
    let mut params = best.1.clone();
    let mut adam = Adam::new(params.len(), opts.lr);
    let eval_every = opts.eval_every.max(1);

    for step in 0..opts.steps {
        let (x, _, c) = data.select(&subset(&mut rng, n, opts.batch_size));
        let (loss, grad) = p.mse_grad(&x, &c)?;
        if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        adam.step(&mut params, &grad);
        p.mlp.set_params(&params);

        let done = step + 1;
        if done % eval_every == 0 || done == opts.steps {
            let v = p.mse(&val_x, &val_c)?;
            validation.push((done, v));
            if v < best.0 {
                best = (v, params.clone());
            }
        }
    }
    p.mlp.set_params(&best.1);
    Ok((
        p,
        FitTrace {
            validation,
            best: best.0,
        },
    ))
}
