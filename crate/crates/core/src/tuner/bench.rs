use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{tune, ClockMode, TuneRequest, TuneResult, Worker, WorkerRequest, WorkerResponse};
use crate::error::{Error, Result};
use crate::meta_features::MetaFeatures;
use crate::predictors::Checkpoint;

#[derive(Debug, Clone)]
pub struct BenchCase {
    pub dataset_id: String,
    pub dataset_path: String,
    pub meta_features: MetaFeatures,
    /// Must not have been trained on `dataset_id`.
    pub checkpoint: Checkpoint,
}

/// Mean and population standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Cell {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        // shifted by the first value so constant inputs come back exactly
        let mean = values[0] + values.iter().map(|v| v - values[0]).sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3}_{{{:.3}}}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub dataset_id: String,
    pub zero_shot: Option<Cell>,
    /// One per budget, `None` when every seed failed.
    pub cells: Vec<Option<Cell>>,
}

impl BenchRow {
    fn gain(&self) -> Option<f64> {
        Some(self.cells.first()?.as_ref()?.mean - self.zero_shot?.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub budgets: Vec<f64>,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Dataset | Zero-shot |");
        for b in &self.budgets {
            let _ = write!(out, " {b} SEC |");
        }
        out.push_str("\n|---|---|");
        out.push_str(&"---|".repeat(self.budgets.len()));
        out.push('\n');
        let show = |c: &Option<Cell>| c.map_or_else(|| "failed".to_string(), |c| c.to_string());
        for row in &self.rows {
            let _ = write!(out, "| {} | {} |", row.dataset_id, row.zero_shot.map_or("n/a".into(), |c| c.to_string()));
            for c in &row.cells {
                let _ = write!(out, " {} |", show(c));
            }
            out.push('\n');
        }
        out
    }
}

/// Builds the table from finished runs. Rows are sorted by gain over
/// zero-shot at the first budget, largest first; rows without a gain go
/// last in id order.
pub fn aggregate(results: &[TuneResult], zero_shot: &BTreeMap<String, Vec<f64>>, budgets: &[f64]) -> BenchReport {
    let mut by_cell: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for r in results {
        let Some(j) = budgets.iter().position(|b| *b == r.budget_s) else {
            continue;
        };
        let slots = by_cell
            .entry(&r.dataset_id)
            .or_insert_with(|| vec![Vec::new(); budgets.len()]);
        if let Some(v) = r.best_val_iou() {
            slots[j].push(v);
        }
    }
    for id in zero_shot.keys() {
        by_cell.entry(id).or_insert_with(|| vec![Vec::new(); budgets.len()]);
    }
    let mut rows: Vec<BenchRow> = by_cell
        .into_iter()
        .map(|(id, slots)| BenchRow {
            dataset_id: id.to_string(),
            zero_shot: zero_shot.get(id).and_then(|v| Cell::from_values(v)),
            cells: slots.iter().map(|v| Cell::from_values(v)).collect(),
        })
        .collect();
    rows.sort_by(|a, b| match (a.gain(), b.gain()) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.dataset_id.cmp(&b.dataset_id)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.dataset_id.cmp(&b.dataset_id),
    });
    BenchReport {
        budgets: budgets.to_vec(),
        rows,
    }
}

/// Reads a JSON object mapping dataset id to a zero-shot score or a list
/// of per-seed scores.
pub fn parse_zero_shot(text: &str) -> Result<BTreeMap<String, Vec<f64>>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Entry {
        One(f64),
        Many(Vec<f64>),
    }
    let raw: BTreeMap<String, Entry> = serde_json::from_str(text)?;
    Ok(raw
        .into_iter()
        .map(|(k, v)| match v {
            Entry::One(x) => (k, vec![x]),
            Entry::Many(xs) => (k, xs),
        })
        .collect())
}

/// Output of [`run_benchmark`]. Results are ordered by dataset, seed, then
/// budget regardless of scheduling.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub results: Vec<TuneResult>,
    pub zero_shot: BTreeMap<String, Vec<f64>>,
    /// `(dataset, seed, budget, message)` for runs that errored.
    pub errors: Vec<(String, u64, f64, String)>,
}

fn zero_shot_score(case: &BenchCase, seed: u64, worker: &mut dyn Worker) -> Result<f64> {
    let init = WorkerRequest::Init {
        dataset_path: case.dataset_path.clone(),
        subsample_n: super::DEFAULT_SUBSAMPLE,
        seed,
    };
    for req in [init, WorkerRequest::ZeroShot] {
        match worker.call(&req)? {
            WorkerResponse::Ok { val_iou: Some(v), .. } => return Ok(v),
            WorkerResponse::Ok { .. } => {}
            WorkerResponse::Error { message } => return Err(Error::Worker(message)),
        }
    }
    Err(Error::Worker("zero_shot returned no val_iou".into()))
}

/// Runs every (dataset, seed, budget) combination, one worker per
/// (dataset, seed) pair, pairs in parallel. Zero-shot scores come from the
/// worker's `zero_shot` command.
pub fn run_benchmark<F>(cases: &[BenchCase], budgets: &[f64], seeds: &[u64], clock: ClockMode, make_worker: F) -> BenchRun
where
    F: Fn() -> Result<Box<dyn Worker + Send>> + Sync,
{
    let jobs: Vec<(&BenchCase, u64)> = cases
        .iter()
        .flat_map(|c| seeds.iter().map(move |s| (c, *s)))
        .collect();
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|&(case, seed)| {
            let mut results = Vec::new();
            let mut errors = Vec::new();
            let mut worker = match make_worker() {
                Ok(w) => w,
                Err(e) => {
                    for &b in budgets {
                        errors.push((case.dataset_id.clone(), seed, b, e.to_string()));
                    }
                    return (results, None, errors);
                }
            };
            for &budget_s in budgets {
                let mut req = TuneRequest::new(case.dataset_id.clone(), case.meta_features, budget_s, seed);
                req.dataset_path = case.dataset_path.clone();
                req.clock = clock;
                match tune(&req, &case.checkpoint, worker.as_mut()) {
                    Ok(r) => results.push(r),
                    Err(e) => errors.push((case.dataset_id.clone(), seed, budget_s, e.to_string())),
                }
            }
            let zs = match zero_shot_score(case, seed, worker.as_mut()) {
                Ok(v) => Some(v),
                Err(e) => {
                    log::warn!("zero-shot for {} seed {seed}: {e}", case.dataset_id);
                    None
                }
            };
            (results, zs, errors)
        })
        .collect();

    let mut run = BenchRun {
        results: Vec::new(),
        zero_shot: BTreeMap::new(),
        errors: Vec::new(),
    };
    for ((case, _), (results, zs, errors)) in jobs.iter().zip(outcomes) {
        run.results.extend(results);
        run.errors.extend(errors);
        if let Some(v) = zs {
            run.zero_shot.entry(case.dataset_id.clone()).or_default().push(v);
        }
    }
    run
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tuner::{BudgetLedger, Incumbent, StopReason};

    fn result(ds: &str, budget: f64, v: f64) -> TuneResult {
        let config = crate::search_space::SearchSpace::standard().sample(0, 1).remove(0);
        TuneResult {
            dataset_id: ds.into(),
            budget_s: budget,
            seed: 0,
            pool_size: 1,
            incumbent: Some(Incumbent {
                config_id: config.config_id(),
                config,
                val_iou: v,
                epoch: 1,
            }),
            trace: vec![],
            ledger: BudgetLedger::default(),
            stop_reason: StopReason::BudgetExhausted,
        }
    }

    #[test]
    fn cell_format() {
        let c = Cell::from_values(&[0.819, 0.881]).unwrap();
        assert_eq!(c.to_string(), "0.850_{0.031}");
        assert!(Cell::from_values(&[]).is_none());
    }

    #[test]
    fn rows_sorted_by_gain() {
        let rs = [result("a", 60.0, 0.6), result("b", 60.0, 0.9), result("a", 120.0, 0.7)];
        let zs: BTreeMap<_, _> = [("a".to_string(), vec![0.5]), ("b".to_string(), vec![0.5])].into();
        let rep = aggregate(&rs, &zs, &[60.0, 120.0]);
        assert_eq!(rep.rows[0].dataset_id, "b");
        assert_eq!(rep.rows[1].cells[1].unwrap().mean, 0.7);
        let md = rep.to_markdown();
        assert!(md.starts_with("| Dataset | Zero-shot | 60 SEC | 120 SEC |\n|---|---|---|---|\n"));
        assert!(md.contains("| b | 0.500_{0.000} | 0.900_{0.000} | failed |"));
    }

    #[test]
    fn zero_shot_file_forms() {
        let z = parse_zero_shot(r#"{"polyp": 0.495, "ISIC": [0.5, 0.6]}"#).unwrap();
        assert_eq!(z["polyp"], vec![0.495]);
        assert_eq!(z["ISIC"].len(), 2);
    }
}
