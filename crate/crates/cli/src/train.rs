//! `caref train`: one training run with its full reproducibility bundle.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use caref_core::toy::{synth_generate, task::write_snapshot, train_on, TrainHistory};
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::error::{CliError, Result};
use crate::settings::RunSettings;

pub const HISTORY_FILE: &str = "history.csv";
pub const STEPS_FILE: &str = "steps.csv";
pub const MODEL_FILE: &str = "model.bin";
pub const SHAPE_FILE: &str = "model.shape";
pub const TRAIN_SNAPSHOT: &str = "train.tsv";
pub const EVAL_SNAPSHOT: &str = "eval.tsv";

pub const HISTORY_HEADER: &str =
    "epoch,ce,sced,kl,total,accuracy,mean_entropy,mean_effective_support";
pub const STEPS_HEADER: &str = "step,lr,grad_norm,clipped_norm";

/// One row of `history.csv`. Loss terms are training-split means after the
/// epoch; the rest are evaluation-split metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub ce: f64,
    pub sced: f64,
    pub kl: f64,
    pub total: f64,
    pub accuracy: f64,
    pub mean_entropy: f64,
    pub mean_effective_support: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: usize,
    pub lr: f64,
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

pub fn history_rows(h: &TrainHistory) -> Vec<HistoryRow> {
    h.epochs
        .iter()
        .map(|e| HistoryRow {
            epoch: e.epoch,
            ce: e.train_loss.ce,
            sced: e.train_loss.sced,
            kl: e.train_loss.kl,
            total: e.train_loss.total,
            accuracy: e.eval.accuracy,
            mean_entropy: e.eval.mean_entropy,
            mean_effective_support: e.eval.mean_effective_support,
        })
        .collect()
}

pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(create(path)?);
    let io = |e: csv::Error| CliError::io(path, std::io::Error::other(e));
    for row in rows {
        w.serialize(row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub(crate) fn prepare_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

/// Paths of everything `cmd_train` writes.
pub fn bundle_files(out: &Path) -> Vec<PathBuf> {
    [
        HISTORY_FILE,
        STEPS_FILE,
        MODEL_FILE,
        SHAPE_FILE,
        TRAIN_SNAPSHOT,
        EVAL_SNAPSHOT,
    ]
    .iter()
    .map(|f| out.join(f))
    .collect()
}

pub fn cmd_train(config: &Path, out: &Path) -> Result<TrainHistory> {
    let cfg = KvConfig::load(config)?;
    let settings = RunSettings::from_config(&cfg)?;
    prepare_out_dir(out)?;

    let data = synth_generate(&settings.task)?;
    for (name, items) in [(TRAIN_SNAPSHOT, &data.train), (EVAL_SNAPSHOT, &data.eval)] {
        let path = out.join(name);
        let mut w = create(&path)?;
        write_snapshot(items, &mut w)
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(&path, e))?;
    }

    let started = std::time::Instant::now();
    let (model, history) = train_on(&data, &settings.train)?;
    let elapsed = started.elapsed().as_secs_f64();

    write_csv(&out.join(HISTORY_FILE), &history_rows(&history))?;
    let steps: Vec<StepRow> = history
        .steps
        .iter()
        .map(|s| StepRow {
            step: s.step,
            lr: s.lr,
            grad_norm: s.grad_norm,
            clipped_norm: s.clipped_norm,
        })
        .collect();
    write_csv(&out.join(STEPS_FILE), &steps)?;

    let model_path = out.join(MODEL_FILE);
    fs::write(&model_path, model.to_le_bytes()).map_err(|e| CliError::io(&model_path, e))?;
    let shape_path = out.join(SHAPE_FILE);
    fs::write(&shape_path, format!("{}\n", model.shape_line()))
        .map_err(|e| CliError::io(&shape_path, e))?;

    if let Some(last) = history.last() {
        println!(
            "epochs: {}  steps: {}  final accuracy: {}  effective support: {}  total loss: {}",
            last.epoch,
            history.steps.len(),
            last.eval.accuracy,
            last.eval.mean_effective_support,
            last.train_loss.total
        );
    }
    println!("wall time: {elapsed:.3}s  output: {}", out.display());
    Ok(history)
}
