//! Learning-curve records and their JSON Lines store.
//!
//! Each (dataset, config, seed) key owns one curve. Appends must extend the
//! curve by exactly one epoch, so every stored curve is a contiguous prefix
//! starting at epoch 1.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search_space::Configuration;

pub const MAX_EPOCH: u32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveRecord {
    pub dataset_id: String,
    pub config_id: String,
    pub config: Configuration,
    pub epoch: u32,
    pub val_iou: f64,
    pub epoch_cost_s: f64,
    pub seed: u64,
}

impl CurveRecord {
    pub fn new(
        dataset_id: impl Into<String>,
        config: Configuration,
        epoch: u32,
        val_iou: f64,
        epoch_cost_s: f64,
        seed: u64,
    ) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            config_id: config.config_id(),
            config,
            epoch,
            val_iou,
            epoch_cost_s,
            seed,
        }
    }

    pub fn key(&self) -> CurveKey {
        CurveKey {
            dataset_id: self.dataset_id.clone(),
            config_id: self.config_id.clone(),
            seed: self.seed,
        }
    }

    fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.val_iou) {
            return Err(Error::InvalidRecord(format!(
                "val_iou {} outside [0, 1]",
                self.val_iou
            )));
        }
        if !(self.epoch_cost_s > 0.0 && self.epoch_cost_s.is_finite()) {
            return Err(Error::InvalidRecord(format!(
                "epoch_cost_s {} must be positive",
                self.epoch_cost_s
            )));
        }
        if self.epoch == 0 || self.epoch > MAX_EPOCH {
            return Err(Error::EpochOutOfRange(self.epoch));
        }
        if self.config_id != self.config.config_id() {
            return Err(Error::InvalidRecord(format!(
                "config_id {} does not match config",
                self.config_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CurveKey {
    pub dataset_id: String,
    pub config_id: String,
    pub seed: u64,
}

impl std::fmt::Display for CurveKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.dataset_id, self.config_id, self.seed)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CurveStore {
    records: Vec<CurveRecord>,
    last_epoch: HashMap<CurveKey, u32>,
}

impl CurveStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[CurveRecord] {
        &self.records
    }

    pub fn append(&mut self, r: CurveRecord) -> Result<()> {
        r.check()?;
        let key = r.key();
        let expected = self.last_epoch.get(&key).map_or(1, |e| e + 1);
        if r.epoch != expected {
            return Err(Error::EpochGap {
                key: key.to_string(),
                expected,
                got: r.epoch,
            });
        }
        self.last_epoch.insert(key, r.epoch);
        self.records.push(r);
        Ok(())
    }

    pub fn from_records(records: impl IntoIterator<Item = CurveRecord>) -> Result<Self> {
        let mut s = Self::new();
        for r in records {
            s.append(r)?;
        }
        Ok(s)
    }

    pub fn dataset_ids(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.dataset_id.clone()).collect()
    }

    /// Curves grouped by key, each sorted by epoch. Keys in sorted order.
    pub fn curves(&self) -> BTreeMap<CurveKey, Vec<&CurveRecord>> {
        let mut out: BTreeMap<CurveKey, Vec<&CurveRecord>> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.key()).or_default().push(r);
        }
        for v in out.values_mut() {
            v.sort_by_key(|r| r.epoch);
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut store = Self::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |message: String| Error::Malformed {
                line: i + 1,
                message,
            };
            let r: CurveRecord =
                serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
            store.append(r).map_err(|e| malformed(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Leave-one-dataset-out: everything but `target`, and `target` alone.
    pub fn lodo_split(&self, target: &str) -> (CurveStore, CurveStore) {
        let (held, train): (Vec<_>, Vec<_>) = self
            .records
            .iter()
            .cloned()
            .partition(|r| r.dataset_id == target);
        let build = |rs: Vec<CurveRecord>| {
            CurveStore::from_records(rs).expect("subset of a valid store is valid")
        };
        (build(train), build(held))
    }

    /// Highest val_iou for the dataset and seed. Ties go to the lower
    /// cumulative cost up to that epoch, then to the smaller config_id.
    pub fn best_observed(&self, dataset_id: &str, seed: u64) -> Option<BestObserved> {
        self.curves()
            .into_iter()
            .filter(|(k, _)| k.dataset_id == dataset_id && k.seed == seed)
            .flat_map(|(k, curve)| {
                let mut cum = 0.0;
                curve
                    .into_iter()
                    .map(|r| {
                        cum += r.epoch_cost_s;
                        BestObserved {
                            config_id: k.config_id.clone(),
                            epoch: r.epoch,
                            val_iou: r.val_iou,
                            cumulative_cost_s: cum,
                        }
                    })
                    .collect::<Vec<_>>()
            })
            .min_by(|a, b| {
                b.val_iou
                    .total_cmp(&a.val_iou)
                    .then(a.cumulative_cost_s.total_cmp(&b.cumulative_cost_s))
                    .then_with(|| a.config_id.cmp(&b.config_id))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestObserved {
    pub config_id: String,
    pub epoch: u32,
    pub val_iou: f64,
    pub cumulative_cost_s: f64,
}
