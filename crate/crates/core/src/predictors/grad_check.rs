//! Central finite-difference checks of the hand-derived gradients.

use nalgebra::DMatrix;

use super::gp::PerfPredictor;
use super::mlp::Mlp;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so parameters whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerfPart {
    FeatureExtractor,
    Kernel,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn max_relative_error(
    analytic: &[f64],
    params: &[f64],
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<f64> {
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + FD_STEP;
        let up = loss(&p)?;
        p[i] = orig - FD_STEP;
        let down = loss(&p)?;
        p[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

fn mse(out: &DMatrix<f64>, targets: &DMatrix<f64>) -> f64 {
    (out - targets).norm_squared() / out.len() as f64
}

/// MLP under mean squared error, every weight and bias.
pub fn grad_check_mlp(mlp: &Mlp, x: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<f64> {
    let (out, cache) = mlp.forward_cached(x)?;
    let d_out = (&out - targets) * (2.0 / out.len() as f64);
    let analytic = mlp.backward(&cache, &d_out);
    let mut probe = mlp.clone();
    max_relative_error(&analytic, &mlp.params(), |p| {
        probe.set_params(p);
        Ok(mse(&probe.forward(x)?, targets))
    })
}

/// Deep-kernel GP mean NLL, over either the extractor weights or the three
/// kernel log-hyperparameters.
pub fn grad_check_perf(p: &PerfPredictor, x: &DMatrix<f64>, y: &[f64], part: PerfPart) -> Result<f64> {
    let g = p.nll_grad(x, y)?;
    let mut probe = p.clone();
    probe.clear();
    match part {
        PerfPart::FeatureExtractor => {
            max_relative_error(&g.extractor, &p.extractor.params(), |w| {
                probe.extractor.set_params(w);
                probe.nll(x, y)
            })
        }
        PerfPart::Kernel => max_relative_error(&g.kernel, &p.kernel.params(), |k| {
            // bypass the noise clamp so the probe is exactly symmetric
            probe.kernel.log_lengthscale = k[0];
            probe.kernel.log_signal_variance = k[1];
            probe.kernel.log_noise_variance = k[2];
            probe.nll(x, y)
        }),
    }
}
