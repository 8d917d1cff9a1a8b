//! Deep-kernel Gaussian process: a Matérn-5/2 GP on the 16-dimensional
//! output of a small MLP. Feature-extractor weights and kernel
//! log-hyperparameters are trained jointly on the negative log marginal
//! likelihood, with gradients derived by hand:
//!
//! ```text
//! NLL = ½ (y−m)ᵀ α + Σ log Lᵢᵢ + n/2 log 2π,   α = K̃⁻¹ (y−m),  K̃ = K + σ² I
//! ∂NLL/∂θ = ½ tr(W ∂K̃/∂θ),                     W = K̃⁻¹ − α αᵀ
//! ```
//!
//! The training loss is this NLL divided by the batch size.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::kernel::Matern52;
use super::mlp::Mlp;
use crate::error::{Error, Result};

pub const LATENT_DIM: usize = 16;
pub const HIDDEN: [usize; 2] = [64, 32];
pub const PRIOR_MEAN: f64 = 0.5;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Cholesky of `m`, adding diagonal jitter 1e-8, 1e-7, …, 1e-4 on failure.
pub(crate) fn cholesky_jittered(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((c, 0.0));
    }
    let mut jitter = 1e-8;
    while jitter <= 1e-4 * 1.0001 {
        let mut mj = m.clone();
        for i in 0..mj.nrows() {
            mj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(mj) {
            log::warn!("kernel matrix needed jitter {jitter:e} for Cholesky");
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite { jitter: 1e-4 })
}

#[derive(Debug, Clone)]
struct GpState {
    inputs: DMatrix<f64>,
    targets: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    latent: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "PerfRepr", try_from = "PerfRepr")]
pub struct PerfPredictor {
    pub extractor: Mlp,
    pub kernel: Matern52,
    state: Option<GpState>,
}

/// Per-batch loss and gradients for the joint parameters.
pub struct NllGrad {
    pub loss: f64,
    pub extractor: Vec<f64>,
    /// log-lengthscale, log-signal-variance, log-noise-variance
    pub kernel: [f64; 3],
}

impl PerfPredictor {
    pub fn fresh(input_dim: usize, seed: u64) -> Self {
        Self {
            extractor: Mlp::new(&[input_dim, HIDDEN[0], HIDDEN[1], LATENT_DIM], seed),
            kernel: Matern52::default(),
            state: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.extractor.input_dim()
    }

    pub fn is_fitted(&self) -> bool {
        self.state.is_some()
    }

    pub fn conditioning_size(&self) -> usize {
        self.state.as_ref().map_or(0, |s| s.targets.len())
    }

    pub fn conditioning(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        self.state.as_ref().map(|s| (&s.inputs, &s.targets))
    }

    /// Lower-triangular Cholesky factor of the conditioned K + σ²I.
    pub fn cholesky_factor(&self) -> Option<DMatrix<f64>> {
        self.state.as_ref().map(|s| s.chol.l())
    }

    pub fn alpha(&self) -> Option<&DVector<f64>> {
        self.state.as_ref().map(|s| &s.alpha)
    }

    fn check_dim(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Conditions the GP on `(inputs, targets)`. An empty set leaves the
    /// predictor unfitted.
    pub fn condition(&mut self, inputs: DMatrix<f64>, targets: &[f64]) -> Result<()> {
        self.check_dim(&inputs)?;
        if inputs.nrows() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.nrows(),
                got: targets.len(),
            });
        }
        if targets.is_empty() {
            self.state = None;
            return Ok(());
        }
        let latent = self.extractor.forward(&inputs)?;
        let mut k = self.kernel.matrix(&latent, &latent);
        let noise = self.kernel.noise_variance();
        for i in 0..k.nrows() {
            k[(i, i)] += noise;
        }
        let (chol, _) = cholesky_jittered(&k)?;
        let targets = DVector::from_column_slice(targets);
        let centered = targets.add_scalar(-PRIOR_MEAN);
        let alpha = chol.solve(&centered);
        self.state = Some(GpState {
            inputs,
            targets,
            chol,
            alpha,
            latent,
        });
        Ok(())
    }

    pub fn clear(&mut self) {
        self.state = None;
    }

    /// Re-conditions on the current set after parameters changed.
    pub fn refresh(&mut self) -> Result<()> {
        match self.state.take() {
            Some(s) => {
                let t: Vec<f64> = s.targets.iter().copied().collect();
                self.condition(s.inputs, &t)
            }
            None => Ok(()),
        }
    }

    /// Posterior mean and variance of the latent function at each row.
    /// Unfitted predictors return the prior.
    pub fn predict(&self, inputs: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
        self.check_dim(inputs)?;
        let s2 = self.kernel.signal_variance();
        let Some(state) = &self.state else {
            return Ok(vec![(PRIOR_MEAN, s2); inputs.nrows()]);
        };
        let z = self.extractor.forward(inputs)?;
        let ks = self.kernel.matrix(&state.latent, &z);
        let mean = ks.transpose() * &state.alpha;
        let v = state
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .expect("cholesky factor has a positive diagonal");
        Ok((0..inputs.nrows())
            .map(|j| {
                let var = (s2 - v.column(j).norm_squared()).clamp(0.0, s2);
                (PRIOR_MEAN + mean[j], var)
            })
            .collect())
    }

    /// Mean NLL of `y` under the GP marginal on inputs `x`.
    pub fn nll(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let z = self.extractor.forward(x)?;
        let (nll, _) = marginal(&self.kernel, &z, y, false)?;
        Ok(nll / y.len() as f64)
    }

    pub fn nll_grad(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<NllGrad> {
        self.check_dim(x)?;
        let n = y.len() as f64;
        let (z, cache) = self.extractor.forward_cached(x)?;
        let (nll, grads) = marginal(&self.kernel, &z, y, true)?;
        let g = grads.unwrap();
        let extractor = self.extractor.backward(&cache, &(g.latent / n));
        Ok(NllGrad {
            loss: nll / n,
            extractor,
            kernel: g.kernel.map(|v| v / n),
        })
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.extractor.params();
        p.extend(self.kernel.params());
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let n = self.extractor.num_params();
        self.extractor.set_params(&p[..n]);
        self.kernel.set_params(&p[n..]);
    }
}

struct MarginalGrads {
    latent: DMatrix<f64>,
    kernel: [f64; 3],
}

/// Total NLL (not averaged) and, optionally, its gradient w.r.t. the latent
/// points and the kernel log-hyperparameters.
fn marginal(
    kernel: &Matern52,
    z: &DMatrix<f64>,
    y: &[f64],
    with_grad: bool,
) -> Result<(f64, Option<MarginalGrads>)> {
    let n = y.len();
    let pw = kernel.pairwise(z, z);
    let k = kernel.covariance(&pw);
    let noise = kernel.noise_variance();
    let mut kt = k.clone();
    for i in 0..n {
        kt[(i, i)] += noise;
    }
    let (chol, _) = cholesky_jittered(&kt)?;
    let r = DVector::from_iterator(n, y.iter().map(|v| v - PRIOR_MEAN));
    let alpha = chol.solve(&r);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let nll = 0.5 * r.dot(&alpha) + log_det + 0.5 * n as f64 * LN_2PI;
    if !with_grad {
        return Ok((nll, None));
    }

    let w = chol.inverse() - &alpha * alpha.transpose();
    let g_noise = 0.5 * noise * w.trace();
    let g_signal = 0.5 * w.component_mul(&k).sum();
    let g_length = 0.5 * w.component_mul(&kernel.d_log_lengthscale(&pw)).sum();

    // ∂NLL/∂zᵢ = Σⱼ Wᵢⱼ cᵢⱼ (zᵢ − zⱼ)
    let c = w.component_mul(&kernel.d_input_coeff(&pw));
    let row_sums = DVector::from_iterator(n, c.row_iter().map(|r| r.sum()));
    let mut latent = -(&c * z);
    for j in 0..z.ncols() {
        for i in 0..n {
            latent[(i, j)] += row_sums[i] * z[(i, j)];
        }
    }
    Ok((
        nll,
        Some(MarginalGrads {
            latent,
            kernel: [g_length, g_signal, g_noise],
        }),
    ))
}

#[derive(Serialize, Deserialize)]
struct PerfRepr {
    extractor: Mlp,
    kernel: Matern52,
    conditioning_inputs: Vec<Vec<f64>>,
    conditioning_targets: Vec<f64>,
}

impl From<PerfPredictor> for PerfRepr {
    fn from(p: PerfPredictor) -> Self {
        let (inputs, targets) = match &p.state {
            Some(s) => (
                s.inputs.row_iter().map(|r| r.iter().copied().collect()).collect(),
                s.targets.iter().copied().collect(),
            ),
            None => (Vec::new(), Vec::new()),
        };
        PerfRepr {
            extractor: p.extractor,
            kernel: p.kernel,
            conditioning_inputs: inputs,
            conditioning_targets: targets,
        }
    }
}

impl TryFrom<PerfRepr> for PerfPredictor {
    type Error = String;

    fn try_from(r: PerfRepr) -> std::result::Result<Self, String> {
        let dim = r.extractor.input_dim();
        let mut p = PerfPredictor {
            extractor: r.extractor,
            kernel: r.kernel,
            state: None,
        };
        let mut x = DMatrix::zeros(r.conditioning_inputs.len(), dim);
        for (i, row) in r.conditioning_inputs.iter().enumerate() {
            if row.len() != dim {
                return Err(format!("conditioning row {i} has {} values, expected {dim}", row.len()));
            }
            x.row_mut(i).copy_from_slice(row);
        }
        p.condition(x, &r.conditioning_targets)
            .map_err(|e| e.to_string())?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(n: usize, d: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let y = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        (x, y)
    }

    #[test]
    fn unfitted_returns_prior() {
        let p = PerfPredictor::fresh(5, 0);
        let (x, _) = random_batch(3, 5, 1);
        for (m, v) in p.predict(&x).unwrap() {
            assert_eq!(m, 0.5);
            assert_eq!(v, p.kernel.signal_variance());
        }
    }

    #[test]
    fn interpolates_training_points_with_tiny_noise() {
        let mut p = PerfPredictor::fresh(5, 0);
        p.kernel.set_params(&[0.0, 0.0, -100.0]);
        let (x, y) = random_batch(6, 5, 2);
        p.condition(x.clone(), &y).unwrap();
        for (i, (m, v)) in p.predict(&x).unwrap().into_iter().enumerate() {
            assert!((m - y[i]).abs() < 1e-3, "{m} vs {}", y[i]);
            assert!(v < 1e-3);
        }
    }

    #[test]
    fn factor_and_alpha_invariants() {
        let mut p = PerfPredictor::fresh(4, 3);
        let (x, y) = random_batch(12, 4, 4);
        p.condition(x.clone(), &y).unwrap();
        let l = p.cholesky_factor().unwrap();
        for i in 0..l.nrows() {
            assert!(l[(i, i)] > 0.0);
            for j in i + 1..l.ncols() {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
        let z = p.extractor.forward(&x).unwrap();
        let mut kt = p.kernel.matrix(&z, &z);
        for i in 0..kt.nrows() {
            kt[(i, i)] += p.kernel.noise_variance();
        }
        let r = DVector::from_iterator(y.len(), y.iter().map(|v| v - PRIOR_MEAN));
        let resid = (&kt * p.alpha().unwrap() - &r).norm();
        assert!(resid < 1e-8 * r.norm());
    }

    #[test]
    fn posterior_variance_below_prior() {
        let mut p = PerfPredictor::fresh(4, 5);
        let (x, y) = random_batch(20, 4, 6);
        p.condition(x, &y).unwrap();
        let (q, _) = random_batch(50, 4, 7);
        let s2 = p.kernel.signal_variance();
        for (_, v) in p.predict(&q).unwrap() {
            assert!((0.0..=s2).contains(&v));
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = PerfPredictor::fresh(4, 0);
        assert!(matches!(
            p.predict(&DMatrix::zeros(1, 3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn serde_restores_conditioning() {
        let mut p = PerfPredictor::fresh(4, 8);
        let (x, y) = random_batch(5, 4, 9);
        p.condition(x, &y).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        let q: PerfPredictor = serde_json::from_str(&json).unwrap();
        let (t, _) = random_batch(3, 4, 10);
        assert_eq!(p.predict(&t).unwrap(), q.predict(&t).unwrap());
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let m = DMatrix::from_element(3, 3, 1.0);
        let (_, jitter) = cholesky_jittered(&m).unwrap();
        assert!(jitter > 0.0);
    }
}
