use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub const MIN_NOISE_VARIANCE: f64 = 1e-6;
const SQRT5: f64 = 2.236_067_977_499_79;

/// Matérn-5/2 kernel with a single lengthscale, parameterized in log space:
///
/// `k(r) = s² (1 + u + u²/3) exp(-u)`, `u = √5 r / ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Matern52 {
    pub log_lengthscale: f64,
    pub log_signal_variance: f64,
    pub log_noise_variance: f64,
}

impl Default for Matern52 {
    fn default() -> Self {
        Self {
            log_lengthscale: 0.0,
            log_signal_variance: 0.05f64.ln(),
            log_noise_variance: 1e-3f64.ln(),
        }
    }
}

/// Pairwise quantities reused by the kernel value and its derivatives.
pub(crate) struct Pairwise {
    /// u = √5 r / ℓ
    pub u: DMatrix<f64>,
    /// exp(-u)
    pub e: DMatrix<f64>,
}

impl Matern52 {
    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    pub fn params(&self) -> [f64; 3] {
        [
            self.log_lengthscale,
            self.log_signal_variance,
            self.log_noise_variance,
        ]
    }

    pub fn set_params(&mut self, p: &[f64]) {
        self.log_lengthscale = p[0];
        self.log_signal_variance = p[1];
        self.log_noise_variance = p[2].max(MIN_NOISE_VARIANCE.ln());
    }

    pub(crate) fn pairwise(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Pairwise {
        let scale = SQRT5 / self.lengthscale();
        let u = DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
            let d2: f64 = a
                .row(i)
                .iter()
                .zip(b.row(j).iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            d2.sqrt() * scale
        });
        let e = u.map(|v| (-v).exp());
        Pairwise { u, e }
    }

    pub(crate) fn covariance(&self, p: &Pairwise) -> DMatrix<f64> {
        let s2 = self.signal_variance();
        p.u.zip_map(&p.e, |u, e| s2 * (1.0 + u + u * u / 3.0) * e)
    }

    /// Noise-free cross-covariance between the rows of `a` and `b`.
    pub fn matrix(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.covariance(&self.pairwise(a, b))
    }

    /// ∂k/∂(log ℓ) = s² u² (1 + u) exp(-u) / 3
    pub(crate) fn d_log_lengthscale(&self, p: &Pairwise) -> DMatrix<f64> {
        let s2 = self.signal_variance();
        p.u.zip_map(&p.e, |u, e| s2 * u * u * (1.0 + u) * e / 3.0)
    }

    /// Coefficient c with ∂k(z_i, z_j)/∂z_i = c (z_i − z_j):
    /// c = −s² · 5/(3ℓ²) · (1 + u) exp(-u). Smooth at r = 0.
    pub(crate) fn d_input_coeff(&self, p: &Pairwise) -> DMatrix<f64> {
        let s2 = self.signal_variance();
        let l2 = self.lengthscale().powi(2);
        p.u.zip_map(&p.e, |u, e| -s2 * 5.0 / (3.0 * l2) * (1.0 + u) * e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_is_signal_variance() {
        let k = Matern52::default();
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 3.0, -1.0]);
        let m = k.matrix(&z, &z);
        assert!((m[(0, 0)] - 0.05).abs() < 1e-15);
        assert!((m[(0, 1)] - m[(1, 0)]).abs() < 1e-15);
        assert!(m[(0, 1)] < m[(0, 0)]);
    }

    #[test]
    fn closed_form_value() {
        let k = Matern52 {
            log_lengthscale: 2f64.ln(),
            log_signal_variance: 0.0,
            log_noise_variance: -5.0,
        };
        let a = DMatrix::from_row_slice(1, 1, &[0.0]);
        let b = DMatrix::from_row_slice(1, 1, &[1.0]);
        let u = 5f64.sqrt() / 2.0;
        let expect = (1.0 + u + u * u / 3.0) * (-u).exp();
        assert!((k.matrix(&a, &b)[(0, 0)] - expect).abs() < 1e-15);
    }

    #[test]
    fn noise_floor_on_set() {
        let mut k = Matern52::default();
        k.set_params(&[0.0, 0.0, -100.0]);
        assert!((k.noise_variance() - MIN_NOISE_VARIANCE).abs() < 1e-18);
    }
}
