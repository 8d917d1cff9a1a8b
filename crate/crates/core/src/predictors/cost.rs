use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::gp::HIDDEN;
use super::mlp::Mlp;
use crate::error::{Error, Result};

/// Per-epoch wall-clock cost model; the MLP regresses `ln(seconds)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPredictor {
    pub mlp: Mlp,
}

impl CostPredictor {
    pub fn fresh(input_dim: usize, seed: u64) -> Self {
        Self {
            mlp: Mlp::new(&[input_dim, HIDDEN[0], HIDDEN[1], 1], seed),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    /// Predicted seconds for each row.
    pub fn predict(&self, inputs: &DMatrix<f64>) -> Result<Vec<f64>> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: inputs.ncols(),
            });
        }
        Ok(self.mlp.forward(inputs)?.iter().map(|v| v.exp()).collect())
    }

    /// Mean squared error against log-cost targets.
    pub fn mse(&self, x: &DMatrix<f64>, log_cost: &[f64]) -> Result<f64> {
        let out = self.mlp.forward(x)?;
        Ok(mse_and_grad(&out, log_cost).0)
    }

    pub fn mse_grad(&self, x: &DMatrix<f64>, log_cost: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (out, cache) = self.mlp.forward_cached(x)?;
        let (loss, d_out) = mse_and_grad(&out, log_cost);
        Ok((loss, self.mlp.backward(&cache, &d_out)))
    }
}

pub(crate) fn mse_and_grad(out: &DMatrix<f64>, targets: &[f64]) -> (f64, DMatrix<f64>) {
    let n = targets.len() as f64;
    let diff = DMatrix::from_fn(out.nrows(), 1, |i, _| out[(i, 0)] - targets[i]);
    let loss = diff.norm_squared() / n;
    (loss, diff * (2.0 / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positive_and_deterministic() {
        let p = CostPredictor::fresh(6, 2);
        let x = DMatrix::from_fn(10, 6, |i, j| (i as f64 - 5.0) * (j as f64 + 1.0));
        let a = p.predict(&x).unwrap();
        assert!(a.iter().all(|&v| v > 0.0 && v.is_finite()));
        assert_eq!(a, p.predict(&x).unwrap());
        assert!(p.predict(&DMatrix::zeros(1, 5)).is_err());
    }
}
