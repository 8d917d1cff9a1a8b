mod common;

use std::collections::BTreeMap;

use segtune::synth_bench::{CostJitter, MockWorker, SurrogateTask};
use segtune::tuner::protocol::InProcess;
use segtune::tuner::{
    meta_train, random_search, run_benchmark, tune, BenchCase, ClockMode, StepStatus, StopReason, TuneRequest,
    TuneResult, Worker,
};
use segtune::{CurveRecord, CurveStore, Error, SearchSpace};

use common::{checkpoint, SUITE};

fn request(ds: &str, budget_s: f64, seed: u64) -> TuneRequest {
    TuneRequest::new(ds, SurrogateTask::for_dataset(ds, SUITE).meta_features(), budget_s, seed)
}

fn mock() -> InProcess<MockWorker> {
    InProcess(MockWorker::new(SUITE))
}

fn check_invariants(r: &TuneResult) {
    let mut best = f64::NEG_INFINITY;
    let mut last_epoch: BTreeMap<&str, u32> = BTreeMap::new();
    for t in &r.trace {
        let prev = last_epoch.insert(&t.config_id, t.epoch).unwrap_or(0);
        assert_eq!(t.epoch, prev + 1, "epochs of {} not contiguous", t.config_id);
        if let Some(v) = t.val_iou {
            best = best.max(v);
        }
    }
    match &r.incumbent {
        Some(i) => assert_eq!(i.val_iou, best),
        None => assert!(r.trace.iter().all(|t| t.val_iou.is_none())),
    }
    assert!(r.ledger.imbalance() <= 1e-3, "{:?}", r.ledger);
    let last = r.trace.last().map_or(0.0, |t| t.cost_s);
    assert!(r.ledger.total_s <= r.budget_s + last + 1e-9, "{:?}", r.ledger);
}

#[test]
fn fixed_cost_budget_bounds_step_count() {
    let mut w = InProcess(MockWorker::new(SUITE).with_fixed_cost(2.0));
    let r = tune(&request("polyp", 60.0, 0), checkpoint(), &mut w).unwrap();
    assert!(r.trace.len() <= 30, "{} steps", r.trace.len());
    assert!(!r.trace.is_empty());
    assert!(r.ledger.total_s <= 62.0);
    check_invariants(&r);
}

#[test]
fn budget_below_any_step_yields_empty_run() {
    let r = tune(&request("polyp", 0.05, 0), checkpoint(), &mut mock()).unwrap();
    assert!(r.trace.is_empty());
    assert!(r.incumbent.is_none());
    assert_eq!(r.stop_reason, StopReason::PredictedCostExceedsBudget);
}

#[test]
fn incumbent_is_monotone_and_trace_consistent() {
    for seed in 0..3 {
        let r = tune(&request("leaf", 120.0, seed), checkpoint(), &mut mock()).unwrap();
        let mut best = f64::NEG_INFINITY;
        for t in &r.trace {
            best = best.max(t.val_iou.unwrap());
            assert!(t.clock_s <= r.budget_s);
        }
        check_invariants(&r);
    }
}

#[test]
fn simulated_runs_are_bit_identical() {
    let a = tune(&request("covid", 90.0, 4), checkpoint(), &mut mock()).unwrap();
    let b = tune(&request("covid", 90.0, 4), checkpoint(), &mut mock()).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn decision_overhead_is_charged() {
    let mut req = request("eyes", 60.0, 1);
    req.clock = ClockMode::Simulated {
        decision_overhead_s: 0.25,
    };
    let r = tune(&req, checkpoint(), &mut mock()).unwrap();
    assert!(r.ledger.selection_overhead_s >= 0.25 * r.trace.len() as f64);
    check_invariants(&r);
}

#[test]
fn wall_clock_ledger_balances() {
    let mut req = request("fiber", 0.5, 2);
    req.clock = ClockMode::Wall;
    req.pool_size = 16;
    let r = tune(&req, checkpoint(), &mut mock()).unwrap();
    assert!(r.ledger.imbalance() <= 1e-3);
    assert!(r.ledger.selection_overhead_s > 0.0);
}

#[test]
fn failing_configs_are_quarantined() {
    let req = request("chest", 60.0, 3);
    let pool = SearchSpace::standard().sample(req.seed, req.pool_size);
    let bad: Vec<String> = pool.iter().map(|c| c.config_id()).collect();
    let mut w = InProcess(MockWorker::new(SUITE).failing_on(bad[..100].to_vec()));
    let r = tune(&req, checkpoint(), &mut w).unwrap();
    let failed: Vec<_> = r.trace.iter().filter(|t| t.status == StepStatus::Failed).collect();
    assert!(!failed.is_empty());
    for f in &failed {
        assert_eq!(r.trace.iter().filter(|t| t.config_id == f.config_id).count(), 1);
        assert!(f.message.is_some());
    }
    assert!(r.trace.iter().any(|t| t.status == StepStatus::Ok));
    check_invariants(&r);
}

#[test]
fn all_failing_pool_exhausts() {
    let mut req = request("chest", 600.0, 3);
    req.pool_size = 4;
    let bad = SearchSpace::standard().sample(req.seed, 4).iter().map(|c| c.config_id()).collect();
    let mut w = InProcess(MockWorker::new(SUITE).failing_on(bad));
    let r = tune(&req, checkpoint(), &mut w).unwrap();
    assert_eq!(r.stop_reason, StopReason::PoolExhausted);
    assert_eq!(r.trace.len(), 4);
    assert!(r.incumbent.is_none());
}

#[test]
fn lodo_violation_is_rejected() {
    let trained = checkpoint().metadata.dataset_ids[0].clone();
    let err = tune(&request(&trained, 60.0, 0), checkpoint(), &mut mock()).unwrap_err();
    assert!(matches!(err, Error::LodoViolation(ref d) if *d == trained));
    assert!(tune(&request("polyp", 60.0, 0), checkpoint(), &mut mock()).is_ok());
}

#[test]
fn invalid_requests() {
    assert!(matches!(
        tune(&request("polyp", 0.0, 0), checkpoint(), &mut mock()),
        Err(Error::InvalidRequest(_))
    ));
    let mut req = request("polyp", 10.0, 0);
    req.pool_size = 0;
    assert!(tune(&req, checkpoint(), &mut mock()).is_err());
}

#[test]
fn jittered_costs_respect_overshoot_bound() {
    for seed in 0..10 {
        let mut w = InProcess(MockWorker::new(SUITE).with_cost_jitter(CostJitter {
            seed,
            lo: 0.3,
            hi: 3.0,
        }));
        let r = tune(&request("US", 40.0, seed), checkpoint(), &mut w).unwrap();
        check_invariants(&r);
    }
}

#[test]
fn random_search_trains_full_curves() {
    let r = random_search(&request("golf", 50.0, 0), &mut mock(), 1).unwrap();
    check_invariants(&r);
    let first = &r.trace[0].config_id;
    assert_eq!(r.trace.iter().take(10).filter(|t| &t.config_id == first).count(), 10);
}

#[test]
fn meta_train_is_deterministic_and_handles_one_record() {
    let meta = segtune::synth_bench::generate_meta_dataset(2, 3, 5).unwrap();
    let opts = segtune::predictors::FitOptions {
        steps: 5,
        ..Default::default()
    };
    let a = meta_train(&meta.store, &meta.features, &opts).unwrap();
    let b = meta_train(&meta.store, &meta.features, &opts).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());

    let r = meta.store.records()[0].clone();
    let one = CurveStore::from_records([r.clone()]).unwrap();
    let c = meta_train(&one, &meta.features, &opts).unwrap();
    assert_eq!(c.metadata.records, 1);
    assert_eq!(c.metadata.dataset_ids, vec![r.dataset_id]);

    assert!(matches!(
        meta_train(&CurveStore::new(), &meta.features, &opts),
        Err(Error::EmptyStore)
    ));
    let stranger = CurveRecord::new("unknown", r.config, 1, 0.5, 1.0, 0);
    let missing = CurveStore::from_records([stranger]).unwrap();
    assert!(meta_train(&missing, &meta.features, &opts).is_err());
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    checkpoint().save(&path).unwrap();
    let back = segtune::Checkpoint::load(&path).unwrap();
    let a = tune(&request("cardiac", 30.0, 0), checkpoint(), &mut mock()).unwrap();
    let b = tune(&request("cardiac", 30.0, 0), &back, &mut mock()).unwrap();
    assert_eq!(a, b);

    let text = std::fs::read_to_string(&path).unwrap().replacen("\"format_version\":1", "\"format_version\":9", 1);
    std::fs::write(&path, text).unwrap();
    assert!(matches!(segtune::Checkpoint::load(&path), Err(Error::CheckpointVersion(9))));
}

fn case(ds: &str) -> BenchCase {
    BenchCase {
        dataset_id: ds.into(),
        dataset_path: ds.into(),
        meta_features: SurrogateTask::for_dataset(ds, SUITE).meta_features(),
        checkpoint: checkpoint().clone(),
    }
}

fn sim() -> ClockMode {
    ClockMode::Simulated {
        decision_overhead_s: 0.0,
    }
}

#[test]
fn benchmark_single_seed_has_zero_std() {
    let run = run_benchmark(&[case("polyp")], &[20.0], &[0], sim(), || {
        Ok(Box::new(mock()) as Box<dyn Worker + Send>)
    });
    let rep = segtune::tuner::aggregate(&run.results, &run.zero_shot, &[20.0]);
    assert_eq!(rep.rows[0].cells[0].unwrap().std, 0.0);
    assert_eq!(rep.rows[0].zero_shot.unwrap().n, 1);
}

#[test]
fn benchmark_constant_mock() {
    let seeds = [0, 1, 2, 3, 4];
    let run = run_benchmark(&[case("polyp"), case("lesion")], &[15.0, 30.0], &seeds, sim(), || {
        Ok(Box::new(InProcess(MockWorker::new(SUITE).with_constant_output(0.42))) as Box<dyn Worker + Send>)
    });
    assert!(run.errors.is_empty());
    assert_eq!(run.results.len(), 2 * 5 * 2);
    // ordered by dataset, seed, budget
    assert_eq!(run.results[0].dataset_id, "polyp");
    assert_eq!(run.results[1].budget_s, 30.0);
    assert_eq!(run.results[2].seed, 1);
    let rep = segtune::tuner::aggregate(&run.results, &run.zero_shot, &[15.0, 30.0]);
    for row in &rep.rows {
        for c in &row.cells {
            let c = c.unwrap();
            assert_eq!((c.mean, c.std, c.n), (0.42, 0.0, 5));
        }
    }
}

#[test]
fn benchmark_marks_failed_rows() {
    let mut bad = case("polyp");
    bad.checkpoint.metadata.dataset_ids.push("polyp".into());
    let run = run_benchmark(&[bad, case("leaf")], &[20.0], &[0, 1], sim(), || {
        Ok(Box::new(mock()) as Box<dyn Worker + Send>)
    });
    assert_eq!(run.errors.len(), 2);
    let rep = segtune::tuner::aggregate(&run.results, &run.zero_shot, &[20.0]);
    let md = rep.to_markdown();
    assert!(md.contains("| polyp |") && md.contains("failed"), "{md}");
    assert_eq!(rep.rows[0].dataset_id, "leaf");
}
