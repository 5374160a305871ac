//! Typed settings built from a [`KvConfig`].

use caref_core::toy::{SynthTaskConfig, TrainConfig};
use caref_core::{CarefWeights, ScedParams, Vocab};

use crate::config::KvConfig;
use crate::error::{CliError, Result};

/// Reads the `preset` key (`toy` or `faithful`) and returns the matching
/// training defaults.
fn preset(cfg: &KvConfig) -> Result<TrainConfig> {
    match cfg.get::<String>("preset")?.as_deref() {
        None | Some("toy") => Ok(TrainConfig::toy()),
        Some("faithful") => Ok(TrainConfig::faithful()),
        Some(other) => Err(CliError::Usage(format!(
            "unknown preset `{other}` (expected `toy` or `faithful`)"
        ))),
    }
}

/// Task settings; the seed is filled in by the caller.
pub fn task_config(cfg: &KvConfig) -> Result<SynthTaskConfig> {
    let base = SynthTaskConfig::toy();
    let vocab = cfg.get_or("vocab", base.vocab.size())?;
    Ok(SynthTaskConfig {
        vocab: Vocab::new(vocab)?,
        context_len: cfg.get_or("context_len", base.context_len)?,
        relevant_set_size: cfg.get_or("relevant_set_size", base.relevant_set_size)?,
        distractor_noise: cfg.get_or("distractor_noise", base.distractor_noise)?,
        num_train: cfg.get_or("num_train", base.num_train)?,
        num_eval: cfg.get_or("num_eval", base.num_eval)?,
        seed: base.seed,
    })
}

/// Optimizer and model settings shared by `train` and `sweep`. Objective
/// coefficients and the seed come from the preset and are overridden by
/// the caller.
pub fn train_base(cfg: &KvConfig) -> Result<TrainConfig> {
    let base = preset(cfg)?;
    Ok(TrainConfig {
        lr: cfg.get_or("lr", base.lr)?,
        batch_size: cfg.get_or("batch_size", base.batch_size)?,
        epochs: cfg.get_or("epochs", base.epochs)?,
        warmup_steps: cfg.get_or("warmup_steps", base.warmup_steps)?,
        adam_beta1: cfg.get_or("adam_beta1", base.adam_beta1)?,
        adam_beta2: cfg.get_or("adam_beta2", base.adam_beta2)?,
        adam_eps: cfg.get_or("adam_eps", base.adam_eps)?,
        weight_decay: cfg.get_or("weight_decay", base.weight_decay)?,
        max_grad_norm: cfg.get_or("max_grad_norm", base.max_grad_norm)?,
        embed_dim: cfg.get_or("embed_dim", base.embed_dim)?,
        ..base
    })
}

/// Everything a single training run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub task: SynthTaskConfig,
    pub train: TrainConfig,
}

impl RunSettings {
    /// `seed` drives initialization and shuffling; `task_seed` (default:
    /// `seed`) drives data generation.
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let mut train = train_base(cfg)?;
        let alpha = cfg.get_or("alpha", train.sced.alpha())?;
        let beta = cfg.get_or("beta", train.sced.beta())?;
        train.sced = ScedParams::new(alpha, beta)?;
        let lambda_sced = cfg.get_or("lambda_sced", train.weights.lambda_sced())?;
        let lambda_kl = cfg.get_or("lambda_kl", train.weights.lambda_kl())?;
        train.weights = CarefWeights::new(lambda_sced, lambda_kl)?;
        train.seed = cfg.get_or("seed", train.seed)?;

        let mut task = task_config(cfg)?;
        task.seed = cfg.get_or("task_seed", train.seed)?;
        task.validate()?;
        train.validate()?;
        cfg.finish()?;
        Ok(Self { task, train })
    }
}
