//! `caref sweep`: the Cartesian product of objective coefficients and seeds,
//! run concurrently and collected into one sorted CSV.

use std::path::Path;
use std::time::Instant;

use caref_core::toy::{train, SynthTaskConfig, TrainConfig};
use caref_core::{CarefWeights, ScedParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::error::{CliError, Result};
use crate::settings::{task_config, train_base};
use crate::train::{prepare_out_dir, write_csv};

pub const SWEEP_FILE: &str = "sweep.csv";

pub const SWEEP_HEADER: &str = "alpha,beta,lambda_sced,lambda_kl,seed,status,accuracy,mean_entropy,mean_effective_support,mean_topk_mass,mean_kl_uniform,n_items,ce,sced,kl,total,wall_time_seconds";

pub const STATUS_OK: &str = "ok";
pub const STATUS_DIVERGED: &str = "diverged";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub lambda_sceds: Vec<f64>,
    pub lambda_kls: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    /// Every grid point in sorted order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::with_capacity(self.len());
        for &alpha in &self.alphas {
            for &beta in &self.betas {
                for &lambda_sced in &self.lambda_sceds {
                    for &lambda_kl in &self.lambda_kls {
                        for &seed in &self.seeds {
                            out.push(Cell {
                                alpha,
                                beta,
                                lambda_sced,
                                lambda_kl,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out.sort_by(Cell::order);
        out
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
            * self.betas.len()
            * self.lambda_sceds.len()
            * self.lambda_kls.len()
            * self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        for &a in &self.alphas {
            ScedParams::new(a, 0.0)?;
        }
        for &b in &self.betas {
            ScedParams::new(1.0, b)?;
        }
        for &l in &self.lambda_sceds {
            CarefWeights::new(l, 0.0)?;
        }
        for &l in &self.lambda_kls {
            CarefWeights::new(0.0, l)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_sced: f64,
    pub lambda_kl: f64,
    pub seed: u64,
}

impl Cell {
    fn order(a: &Cell, b: &Cell) -> std::cmp::Ordering {
        a.alpha
            .total_cmp(&b.alpha)
            .then(a.beta.total_cmp(&b.beta))
            .then(a.lambda_sced.total_cmp(&b.lambda_sced))
            .then(a.lambda_kl.total_cmp(&b.lambda_kl))
            .then(a.seed.cmp(&b.seed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub grid: SweepGrid,
    pub task: SynthTaskConfig,
    pub train: TrainConfig,
    /// Fixed data seed for every cell; when unset each cell's seed is used.
    pub task_seed: Option<u64>,
}

impl SweepSettings {
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let required = |key: &str| CliError::Usage(format!("sweep config must set `{key}`"));
        let grid = SweepGrid {
            alphas: cfg.get_list("alphas")?.ok_or_else(|| required("alphas"))?,
            betas: cfg.get_list("betas")?.ok_or_else(|| required("betas"))?,
            lambda_sceds: cfg
                .get_list("lambda_sceds")?
                .ok_or_else(|| required("lambda_sceds"))?,
            lambda_kls: cfg
                .get_list("lambda_kls")?
                .ok_or_else(|| required("lambda_kls"))?,
            seeds: cfg.get_list("seeds")?.ok_or_else(|| required("seeds"))?,
        };
        grid.validate()?;
        let task = task_config(cfg)?;
        task.validate()?;
        let train = train_base(cfg)?;
        train.validate()?;
        let task_seed = cfg.get("task_seed")?;
        cfg.finish()?;
        Ok(Self {
            grid,
            task,
            train,
            task_seed,
        })
    }

    fn configs_for(&self, cell: &Cell) -> Result<(SynthTaskConfig, TrainConfig)> {
        let task = SynthTaskConfig {
            seed: self.task_seed.unwrap_or(cell.seed),
            ..self.task.clone()
        };
        let train = TrainConfig {
            sced: ScedParams::new(cell.alpha, cell.beta)?,
            weights: CarefWeights::new(cell.lambda_sced, cell.lambda_kl)?,
            seed: cell.seed,
            ..self.train.clone()
        };
        Ok((task, train))
    }
}

/// One line of the sweep CSV. Metric and loss fields are empty on
/// diverged rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_sced: f64,
    pub lambda_kl: f64,
    pub seed: u64,
    pub status: String,
    pub accuracy: Option<f64>,
    pub mean_entropy: Option<f64>,
    pub mean_effective_support: Option<f64>,
    pub mean_topk_mass: Option<f64>,
    pub mean_kl_uniform: Option<f64>,
    pub n_items: Option<usize>,
    pub ce: Option<f64>,
    pub sced: Option<f64>,
    pub kl: Option<f64>,
    pub total: Option<f64>,
    pub wall_time_seconds: f64,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }
}

/// Trains one cell. Divergence becomes a `diverged` record; any other
/// error is returned.
pub fn run_cell(settings: &SweepSettings, cell: &Cell) -> Result<RunRecord> {
    let (task, train_cfg) = settings.configs_for(cell)?;
    let started = Instant::now();
    let result = train(&task, &train_cfg);
    let wall_time_seconds = started.elapsed().as_secs_f64();
    let mut rec = RunRecord {
        alpha: cell.alpha,
        beta: cell.beta,
        lambda_sced: cell.lambda_sced,
        lambda_kl: cell.lambda_kl,
        seed: cell.seed,
        status: STATUS_DIVERGED.into(),
        accuracy: None,
        mean_entropy: None,
        mean_effective_support: None,
        mean_topk_mass: None,
        mean_kl_uniform: None,
        n_items: None,
        ce: None,
        sced: None,
        kl: None,
        total: None,
        wall_time_seconds,
    };
    match result {
        Ok((_, history)) => {
            let last = history
                .last()
                .ok_or_else(|| CliError::Usage("training produced no epochs".into()))?;
            let m = last.eval;
            let l = last.train_loss;
            rec.status = STATUS_OK.into();
            rec.accuracy = Some(m.accuracy);
            rec.mean_entropy = Some(m.mean_entropy);
            rec.mean_effective_support = Some(m.mean_effective_support);
            rec.mean_topk_mass = Some(m.mean_topk_mass);
            rec.mean_kl_uniform = Some(m.mean_kl_uniform);
            rec.n_items = Some(m.n_items);
            rec.ce = Some(l.ce);
            rec.sced = Some(l.sced);
            rec.kl = Some(l.kl);
            rec.total = Some(l.total);
            Ok(rec)
        }
        Err(caref_core::Error::Diverged { step, detail }) => {
            eprintln!(
                "diverged: alpha={} beta={} lambda_sced={} lambda_kl={} seed={} at step {step}: {detail}",
                cell.alpha, cell.beta, cell.lambda_sced, cell.lambda_kl, cell.seed
            );
            Ok(rec)
        }
        Err(e) => Err(e.into()),
    }
}

/// Runs every cell on up to `jobs` threads and returns records in grid
/// order.
pub fn run_sweep(settings: &SweepSettings, jobs: Option<usize>) -> Result<Vec<RunRecord>> {
    let cells = settings.grid.cells();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        cells
            .par_iter()
            .map(|c| run_cell(settings, c))
            .collect::<Result<Vec<_>>>()
    })
}

pub fn cmd_sweep(config: &Path, out: &Path, jobs: Option<usize>) -> Result<Vec<RunRecord>> {
    if jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let cfg = KvConfig::load(config)?;
    let settings = SweepSettings::from_config(&cfg)?;
    prepare_out_dir(out)?;
    let started = Instant::now();
    let records = run_sweep(&settings, jobs)?;
    let path = out.join(SWEEP_FILE);
    write_csv(&path, &records)?;

    let diverged = records.iter().filter(|r| !r.is_ok()).count();
    println!(
        "runs: {}  diverged: {diverged}  wall time: {:.1}s  output: {}",
        records.len(),
        started.elapsed().as_secs_f64(),
        path.display()
    );
    if diverged > 0 {
        return Err(CliError::Check(format!(
            "{diverged} of {} runs diverged",
            records.len()
        )));
    }
    Ok(records)
}
