use nalgebra::{DMatrix, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected layer; `weights` is `n_out × n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: DMatrix<f64>,
    pub bias: RowDVector<f64>,
}

/// Feed-forward net with tanh on every hidden layer and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MlpRepr", try_from = "MlpRepr")]
pub struct Mlp {
    layers: Vec<Dense>,
}

pub struct ForwardCache {
    /// Input to each layer; the first is the batch itself.
    activations: Vec<DMatrix<f64>>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = (6.0 / (n_in + n_out) as f64).sqrt();
                Dense {
                    weights: DMatrix::from_fn(n_out, n_in, |_, _| rng.random_range(-limit..limit)),
                    bias: RowDVector::zeros(n_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, ForwardCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &a * l.weights.transpose();
            for mut row in z.row_iter_mut() {
                row += &l.bias;
            }
            if i < last {
                z.apply(|v| *v = v.tanh());
            }
            activations.push(std::mem::replace(&mut a, z));
        }
        Ok((a, ForwardCache { activations }))
    }

    /// Gradient of the loss w.r.t. every parameter (flat layout of
    /// [`Self::params`]) given `d_out`, the gradient w.r.t. the output.
    pub fn backward(&self, cache: &ForwardCache, d_out: &DMatrix<f64>) -> Vec<f64> {
        let mut grads: Vec<(DMatrix<f64>, RowDVector<f64>)> = Vec::with_capacity(self.layers.len());
        let mut delta = d_out.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let a_in = &cache.activations[i];
            let gw = delta.transpose() * a_in;
            let gb = delta.row_sum();
            if i > 0 {
                let mut next = &delta * &l.weights;
                next.zip_apply(a_in, |d, a| *d *= 1.0 - a * a);
                delta = next;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.num_params());
        for (gw, gb) in grads {
            push_row_major(&mut flat, &gw);
            flat.extend(gb.iter());
        }
        flat
    }

    /// All parameters, per layer: weights row-major, then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            push_row_major(&mut flat, &l.weights);
            flat.extend(l.bias.iter());
        }
        flat
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut at = 0;
        for l in &mut self.layers {
            let (r, c) = l.weights.shape();
            for i in 0..r {
                for j in 0..c {
                    l.weights[(i, j)] = flat[at];
                    at += 1;
                }
            }
            for b in l.bias.iter_mut() {
                *b = flat[at];
                at += 1;
            }
        }
    }
}

fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for row in m.row_iter() {
        out.extend(row.iter());
    }
}

#[derive(Serialize, Deserialize)]
struct MlpRepr {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl From<Mlp> for MlpRepr {
    fn from(m: Mlp) -> Self {
        let mut sizes = vec![m.input_dim()];
        sizes.extend(m.layers.iter().map(|l| l.weights.nrows()));
        MlpRepr {
            sizes,
            params: m.params(),
        }
    }
}

impl TryFrom<MlpRepr> for Mlp {
    type Error = String;

    fn try_from(r: MlpRepr) -> std::result::Result<Self, String> {
        if r.sizes.len() < 2 {
            return Err("an MLP needs at least two layer sizes".into());
        }
        let mut m = Mlp::new(&r.sizes, 0);
        if r.params.len() != m.num_params() {
            return Err(format!(
                "expected {} parameters, found {}",
                m.num_params(),
                r.params.len()
            ));
        }
        m.set_params(&r.params);
        Ok(m)
    }
}
