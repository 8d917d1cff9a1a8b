use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::curve_store::{CurveStore, MAX_EPOCH};
use crate::error::{Error, Result};
use crate::meta_features::META_DIM;
use crate::search_space::{Configuration, ConfigVector, SearchSpace};

pub const SUMMARY_DIM: usize = 4;

/// Normalized meta-feature vector per dataset id.
pub type MetaTable = BTreeMap<String, Vec<f64>>;

/// Everything the predictors see about one (config, dataset, epoch) query.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorInput {
    pub config_vec: ConfigVector,
    pub meta_vec: Vec<f64>,
    /// epoch / 10
    pub fidelity: f64,
    /// last, best, last − previous, observed epochs / 10
    pub curve_summary: [f64; SUMMARY_DIM],
}

impl PredictorInput {
    pub fn dim(&self) -> usize {
        self.config_vec.len() + self.meta_vec.len() + 1 + SUMMARY_DIM
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(self.config_vec.as_slice());
        v.extend_from_slice(&self.meta_vec);
        v.push(self.fidelity);
        v.extend_from_slice(&self.curve_summary);
        v
    }
}

pub fn input_dim(space: &SearchSpace) -> usize {
    space.encoding_dim() + META_DIM + 1 + SUMMARY_DIM
}

pub fn curve_summary(history: &[f64]) -> [f64; SUMMARY_DIM] {
    let Some(&last) = history.last() else {
        return [0.0; SUMMARY_DIM];
    };
    let best = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let delta = match history.len() {
        1 => 0.0,
        n => last - history[n - 2],
    };
    [last, best, delta, history.len() as f64 / MAX_EPOCH as f64]
}

/// `history` holds the val_iou of the epochs before `epoch`.
pub fn featurize(
    space: &SearchSpace,
    config: &Configuration,
    meta: &[f64],
    epoch: u32,
    history: &[f64],
) -> Result<PredictorInput> {
    if epoch == 0 || epoch > MAX_EPOCH {
        return Err(Error::EpochOutOfRange(epoch));
    }
    if history.len() >= epoch as usize {
        return Err(Error::InvalidRecord(format!(
            "history of {} epochs cannot precede epoch {epoch}",
            history.len()
        )));
    }
    if meta.len() != META_DIM {
        return Err(Error::DimensionMismatch {
            expected: META_DIM,
            got: meta.len(),
        });
    }
    Ok(PredictorInput {
        config_vec: space.encode(config)?,
        meta_vec: meta.to_vec(),
        fidelity: epoch as f64 / MAX_EPOCH as f64,
        curve_summary: curve_summary(history),
    })
}

pub fn stack(inputs: &[PredictorInput], dim: usize) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(inputs.len(), dim);
    for (i, x) in inputs.iter().enumerate() {
        let v = x.to_vec();
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        m.row_mut(i).copy_from_slice(&v);
    }
    Ok(m)
}

/// Flattened supervised view of a curve store: one row per record with
/// its performance target and log cost.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub inputs: DMatrix<f64>,
    pub val_iou: Vec<f64>,
    pub log_cost: Vec<f64>,
}

impl TrainingSet {
    pub fn from_store(store: &CurveStore, space: &SearchSpace, meta: &MetaTable) -> Result<Self> {
        let dim = input_dim(space);
        let mut rows = Vec::with_capacity(store.len());
        let mut val_iou = Vec::with_capacity(store.len());
        let mut log_cost = Vec::with_capacity(store.len());
        for (key, curve) in store.curves() {
            let m = meta.get(&key.dataset_id).ok_or_else(|| {
                Error::InvalidRecord(format!("no meta-features for dataset '{}'", key.dataset_id))
            })?;
            let mut history = Vec::with_capacity(curve.len());
            for r in curve {
                rows.push(featurize(space, &r.config, m, r.epoch, &history)?);
                val_iou.push(r.val_iou);
                log_cost.push(r.epoch_cost_s.ln());
                history.push(r.val_iou);
            }
        }
        Ok(Self {
            inputs: stack(&rows, dim)?,
            val_iou,
            log_cost,
        })
    }

    pub fn len(&self) -> usize {
        self.val_iou.len()
    }

    pub fn is_empty(&self) -> bool {
        self.val_iou.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let x = self.inputs.select_rows(idx);
        let y = idx.iter().map(|&i| self.val_iou[i]).collect();
        let c = idx.iter().map(|&i| self.log_cost[i]).collect();
        (x, y, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> Configuration {
        SearchSpace::standard().sample(0, 1).remove(0)
    }

    #[test]
    fn empty_history_summary() {
        let x = featurize(&SearchSpace::standard(), &cfg(), &[0.0; 7], 1, &[]).unwrap();
        assert_eq!(x.curve_summary, [0.0; 4]);
        assert_eq!(x.fidelity, 0.1);
        assert_eq!(x.dim(), 39);
    }

    #[test]
    fn two_epoch_history() {
        let x = featurize(&SearchSpace::standard(), &cfg(), &[0.0; 7], 3, &[0.2, 0.5]).unwrap();
        let s = x.curve_summary;
        assert_eq!(s[0], 0.5);
        assert_eq!(s[1], 0.5);
        assert!((s[2] - 0.3).abs() < 1e-15);
        assert_eq!(s[3], 0.2);
    }

    #[test]
    fn full_fidelity() {
        let x = featurize(&SearchSpace::standard(), &cfg(), &[0.0; 7], 10, &[]).unwrap();
        assert_eq!(x.fidelity, 1.0);
    }

    #[test]
    fn epoch_range() {
        let s = SearchSpace::standard();
        assert!(matches!(
            featurize(&s, &cfg(), &[0.0; 7], 0, &[]),
            Err(Error::EpochOutOfRange(0))
        ));
        assert!(matches!(
            featurize(&s, &cfg(), &[0.0; 7], 11, &[]),
            Err(Error::EpochOutOfRange(11))
        ));
        assert!(featurize(&s, &cfg(), &[0.0; 7], 2, &[0.1, 0.2]).is_err());
    }
}
