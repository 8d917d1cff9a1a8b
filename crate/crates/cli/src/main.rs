use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use segtune::meta_features::{extract, load_dataset_dir, MetaFeatures};
use segtune::predictors::FitOptions;
use segtune::synth_bench::{generate_meta_dataset, MockWorker, SurrogateTask};
use segtune::tuner::protocol::{serve, InProcess, SubprocessWorker};
use segtune::tuner::{
    aggregate, meta_train, parse_zero_shot, run_benchmark, tune, BenchCase, ClockMode, TuneRequest,
    TuneResult, Worker, DEFAULT_POOL, DEFAULT_SUBSAMPLE,
};
use segtune::{Checkpoint, CurveStore, Error, SearchSpace};

const META_FILE: &str = "meta_features.json";

#[derive(Parser)]
#[command(name = "segtune", version, about = "Budget-aware tuning of segmentation fine-tuning pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the size of the configuration space.
    CountSpace,
    /// Print seeded configurations as JSON lines.
    Sample {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, env = "QTT_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Write a surrogate meta-dataset (curves.jsonl and meta_features.json).
    GenBench {
        #[arg(long, default_value_t = 40)]
        tasks: usize,
        /// Configurations per task.
        #[arg(long, default_value_t = 64)]
        pairs: usize,
        #[arg(long, env = "QTT_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit both predictors on a curve store and save a checkpoint.
    MetaTrain {
        #[arg(long)]
        curves: PathBuf,
        /// Defaults to meta_features.json next to the curves.
        #[arg(long)]
        meta_features: Option<PathBuf>,
        /// Datasets to leave out of training.
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Tune one dataset under a time budget.
    Tune {
        #[arg(long)]
        dataset: String,
        /// Sent to the worker; defaults to the dataset id.
        #[arg(long)]
        dataset_path: Option<String>,
        #[arg(long)]
        budget_s: f64,
        #[arg(long, default_value_t = DEFAULT_POOL)]
        pool: usize,
        #[arg(long, default_value_t = DEFAULT_SUBSAMPLE)]
        subsample_n: usize,
        #[arg(long, env = "QTT_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        worker: WorkerArgs,
        /// JSON object of dataset id to meta-features. Without it, mock
        /// tasks use their own and real datasets are scanned.
        #[arg(long)]
        meta_features: Option<PathBuf>,
        #[arg(long, default_value = "result.json")]
        out: PathBuf,
    },
    /// Tune several datasets over several budgets and seeds and write a
    /// report.
    Bench {
        #[arg(long, value_delimiter = ',', required = true)]
        datasets: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "60,120,180")]
        budgets: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        /// Curve store to meta-train one leave-one-out checkpoint per dataset.
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        curves: Option<PathBuf>,
        /// A single checkpoint used for every dataset.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        meta_features: Option<PathBuf>,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        worker: WorkerArgs,
        /// Directory for per-run results and report.md.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the markdown table from saved results.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        zero_shot: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "60,120,180")]
        budgets: Vec<f64>,
    },
    /// Serve the surrogate worker protocol on stdin/stdout.
    MockWorker {
        #[arg(long, default_value_t = 0)]
        suite_seed: u64,
    },
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long = "fit-seed", default_value_t = 0)]
    fit_seed: u64,
}

impl FitArgs {
    fn options(&self) -> FitOptions {
        FitOptions {
            steps: self.steps,
            lr: self.lr,
            seed: self.fit_seed,
            ..FitOptions::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ClockArg {
    /// Simulated for the mock worker, wall otherwise.
    Auto,
    Wall,
    Sim,
}

#[derive(Args)]
struct WorkerArgs {
    /// `mock`, `mock:SUITE_SEED`, or a command line to spawn.
    #[arg(long, default_value = "mock")]
    worker: String,
    #[arg(long, value_enum, default_value_t = ClockArg::Auto)]
    clock: ClockArg,
    /// Seconds charged per decision on the simulated clock.
    #[arg(long, default_value_t = 0.0)]
    decision_overhead_s: f64,
}

impl WorkerArgs {
    fn mock_seed(&self) -> Option<u64> {
        match self.worker.split_once(':') {
            None if self.worker == "mock" => Some(0),
            Some(("mock", s)) => s.parse().ok(),
            _ => None,
        }
    }

    fn clock(&self) -> ClockMode {
        let sim = ClockMode::Simulated {
            decision_overhead_s: self.decision_overhead_s,
        };
        match self.clock {
            ClockArg::Wall => ClockMode::Wall,
            ClockArg::Sim => sim,
            ClockArg::Auto if self.mock_seed().is_some() => sim,
            ClockArg::Auto => ClockMode::Wall,
        }
    }

    fn spawn(&self) -> segtune::Result<Box<dyn Worker + Send>> {
        if let Some(seed) = self.mock_seed() {
            return Ok(Box::new(InProcess(MockWorker::new(seed))));
        }
        let argv: Vec<String> = self.worker.split_whitespace().map(String::from).collect();
        Ok(Box::new(SubprocessWorker::spawn(&argv)?))
    }

    fn meta_features(&self, dataset: &str, path: &str, table: Option<&MetaTable>) -> segtune::Result<MetaFeatures> {
        if let Some(t) = table {
            return t
                .get(dataset)
                .copied()
                .ok_or_else(|| Error::InvalidRequest(format!("no meta-features for {dataset}")));
        }
        match self.mock_seed() {
            Some(seed) => Ok(SurrogateTask::for_dataset(path, seed).meta_features()),
            None => extract(&load_dataset_dir(Path::new(path), DEFAULT_SUBSAMPLE, 0)?),
        }
    }
}

type MetaTable = BTreeMap<String, MetaFeatures>;

fn read_meta(path: &Path) -> segtune::Result<MetaTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write(path: &Path, text: &str) -> segtune::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train_checkpoint(curves: &Path, meta: Option<&Path>, exclude: &[String], opts: &FitOptions) -> segtune::Result<Checkpoint> {
    let mut store = CurveStore::load(curves)?;
    for id in exclude {
        store = store.lodo_split(id).0;
    }
    let meta_path = meta.map_or_else(|| curves.with_file_name(META_FILE), Path::to_path_buf);
    meta_train(&store, &read_meta(&meta_path)?, opts)
}

fn run(cli: Cli) -> segtune::Result<()> {
    match cli.command {
        Command::CountSpace => {
            let s = SearchSpace::standard();
            println!("lora          {}", 1 + s.lora_ranks.len() * s.lora_dropouts.len());
            println!("weight_decay  {}", s.weight_decays.len());
            println!("learning_rate {}", s.learning_rates.len());
            println!("augmentations 8");
            let sched: u64 = segtune::Scheduler::ALL.iter().map(|&k| s.scheduler_size(k)).sum();
            println!("scheduler     {sched}");
            println!("total         {}", s.enumerate_size());
        }
        Command::Sample { n, seed } => {
            for c in SearchSpace::standard().sample(seed, n) {
                println!("{}", c.canonical_json());
            }
        }
        Command::GenBench {
            tasks,
            pairs,
            seed,
            out,
        } => {
            let meta = generate_meta_dataset(tasks, pairs, seed)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            meta.store.save(&out.join("curves.jsonl"))?;
            write(&out.join(META_FILE), &serde_json::to_string_pretty(&meta.features)?)?;
            eprintln!("wrote {} records for {tasks} tasks to {}", meta.store.len(), out.display());
        }
        Command::MetaTrain {
            curves,
            meta_features,
            exclude,
            out,
            fit,
        } => {
            let ckpt = train_checkpoint(&curves, meta_features.as_deref(), &exclude, &fit.options())?;
            write(&out, &ckpt.to_json()?)?;
            eprintln!(
                "checkpoint {} (nll {:.4}, log-cost mse {:.5})",
                out.display(),
                ckpt.metadata.final_perf_nll,
                ckpt.metadata.final_cost_mse
            );
        }
        Command::Tune {
            dataset,
            dataset_path,
            budget_s,
            pool,
            subsample_n,
            seed,
            checkpoint,
            worker,
            meta_features,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let path = dataset_path.unwrap_or_else(|| dataset.clone());
            let table = meta_features.as_deref().map(read_meta).transpose()?;
            let mut req = TuneRequest::new(
                dataset.clone(),
                worker.meta_features(&dataset, &path, table.as_ref())?,
                budget_s,
                seed,
            );
            req.dataset_path = path;
            req.pool_size = pool;
            req.subsample_n = subsample_n;
            req.clock = worker.clock();
            let mut w = worker.spawn()?;
            let result = tune(&req, &ckpt, w.as_mut())?;
            write(&out, &result.to_json()?)?;
            match &result.incumbent {
                Some(i) => println!("{} {:.4} (epoch {})", i.config_id, i.val_iou, i.epoch),
                None => println!("no incumbent"),
            }
        }
        Command::Bench {
            datasets,
            budgets,
            seeds,
            curves,
            checkpoint,
            meta_features,
            fit,
            worker,
            out,
        } => {
            let table = meta_features.as_deref().map(read_meta).transpose()?;
            let shared = checkpoint.as_deref().map(Checkpoint::load).transpose()?;
            let mut cases = Vec::new();
            for id in &datasets {
                let checkpoint = match (&shared, &curves) {
                    (Some(c), _) => c.clone(),
                    (None, Some(curves)) => train_checkpoint(curves, meta_features.as_deref(), std::slice::from_ref(id), &fit.options())?,
                    (None, None) => unreachable!("clap requires one of them"),
                };
                cases.push(BenchCase {
                    dataset_id: id.clone(),
                    dataset_path: id.clone(),
                    meta_features: worker.meta_features(id, id, table.as_ref())?,
                    checkpoint,
                });
            }
            let run = run_benchmark(&cases, &budgets, &seeds, worker.clock(), || worker.spawn());
            for r in &run.results {
                let name = format!("{}-b{}-s{}.json", r.dataset_id, r.budget_s, r.seed);
                write(&out.join("results").join(name), &r.to_json()?)?;
            }
            for (ds, seed, budget, msg) in &run.errors {
                log::error!("{ds} seed {seed} budget {budget}: {msg}");
            }
            write(&out.join("zero_shot.json"), &serde_json::to_string_pretty(&run.zero_shot)?)?;
            let md = aggregate(&run.results, &run.zero_shot, &budgets).to_markdown();
            write(&out.join("report.md"), &md)?;
            print!("{md}");
        }
        Command::Report {
            results,
            zero_shot,
            budgets,
        } => {
            let mut runs: Vec<TuneResult> = Vec::new();
            let mut paths: Vec<_> = std::fs::read_dir(&results)
                .map_err(|e| Error::io(&results, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            for p in paths {
                let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                runs.push(serde_json::from_str(&text)?);
            }
            let zs = match zero_shot {
                Some(p) => parse_zero_shot(&std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?,
                None => BTreeMap::new(),
            };
            print!("{}", aggregate(&runs, &zs, &budgets).to_markdown());
        }
        Command::MockWorker { suite_seed } => {
            let stdin = std::io::stdin();
            serve(&mut MockWorker::new(suite_seed), stdin.lock(), std::io::stdout())
                .map_err(|e| Error::Worker(e.to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
