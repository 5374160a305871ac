//! `caref gradcheck`: finite-difference audit of the objective's logit
//! gradient over random instances and an (alpha, beta) grid.

use std::fmt;
use std::path::Path;

use caref_core::objective::{caref_grad_wrt_logits, caref_gradient_audit, GradReport};
use caref_core::{CarefWeights, LogitSeq, ScedParams, TargetSeq};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::KvConfig;
use crate::error::{CliError, Result};

pub const DEFAULT_THRESHOLD: f64 = 1e-6;

/// Logit-gradient rows must sum to zero within this.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckSettings {
    pub instances: usize,
    pub max_steps: usize,
    pub max_vocab: usize,
    pub logit_range: f64,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub weights: CarefWeights,
    pub h: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self {
            instances: 100,
            max_steps: 4,
            max_vocab: 16,
            logit_range: 2.0,
            alphas: vec![1.0, 1.5, 2.0],
            betas: vec![0.0, 0.5, 1.0, 2.0],
            weights: CarefWeights::new(0.1, 0.1).expect("valid"),
            h: 1e-5,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
        }
    }
}

impl GradcheckSettings {
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let s = Self {
            instances: cfg.get_or("instances", d.instances)?,
            max_steps: cfg.get_or("max_steps", d.max_steps)?,
            max_vocab: cfg.get_or("max_vocab", d.max_vocab)?,
            logit_range: cfg.get_or("logit_range", d.logit_range)?,
            alphas: cfg.get_list_or("alphas", d.alphas)?,
            betas: cfg.get_list_or("betas", d.betas)?,
            weights: CarefWeights::new(
                cfg.get_or("lambda_sced", d.weights.lambda_sced())?,
                cfg.get_or("lambda_kl", d.weights.lambda_kl())?,
            )?,
            h: cfg.get_or("h", d.h)?,
            threshold: cfg.get_or("threshold", d.threshold)?,
            seed: cfg.get_or("seed", d.seed)?,
        };
        cfg.finish()?;
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.instances == 0 || self.max_steps == 0 {
            return bad("instances and max_steps must be positive".into());
        }
        if self.max_vocab < 2 {
            return bad(format!(
                "max_vocab must be at least 2, got {}",
                self.max_vocab
            ));
        }
        if !(self.logit_range.is_finite() && self.logit_range > 0.0) {
            return bad(format!(
                "logit_range must be positive, got {}",
                self.logit_range
            ));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return bad(format!("h must be positive, got {}", self.h));
        }
        if self.threshold.is_nan() || self.threshold <= 0.0 {
            return bad(format!(
                "threshold must be positive, got {}",
                self.threshold
            ));
        }
        for &a in &self.alphas {
            ScedParams::new(a, 0.0)?;
        }
        for &b in &self.betas {
            ScedParams::new(1.0, b)?;
        }
        Ok(())
    }
}

/// Worst audit result over the whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOutcome {
    pub audits: usize,
    pub coordinates_checked: usize,
    pub coordinates_skipped: usize,
    pub worst: GradReport,
    /// `(instance, alpha, beta, steps, vocab)` of the worst audit.
    pub worst_case: (usize, f64, f64, usize, usize),
    pub max_row_sum: f64,
    pub threshold: f64,
}

impl GradcheckOutcome {
    pub fn passed(&self) -> bool {
        self.worst.max_rel_error < self.threshold && self.max_row_sum <= ROW_SUM_TOL
    }
}

impl fmt::Display for GradcheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (inst, a, b, t, v) = self.worst_case;
        let w = &self.worst;
        writeln!(
            f,
            "audits: {}  coordinates checked: {}  skipped near kink: {}",
            self.audits, self.coordinates_checked, self.coordinates_skipped
        )?;
        writeln!(
            f,
            "worst relative error: {:e} (threshold {:e}, h = {:e})",
            w.max_rel_error, self.threshold, w.step_size
        )?;
        writeln!(
            f,
            "  at instance {inst} (T={t}, V={v}), alpha={a}, beta={b}, coordinate {:?}: analytic {:e}, numeric {:e}",
            w.worst_coordinate, w.analytic, w.numeric
        )?;
        write!(
            f,
            "max |gradient row sum|: {:e} (tolerance {:e})",
            self.max_row_sum, ROW_SUM_TOL
        )
    }
}

fn random_instance(rng: &mut ChaCha8Rng, s: &GradcheckSettings) -> Result<(LogitSeq, TargetSeq)> {
    let steps = rng.random_range(1..=s.max_steps);
    let vocab = rng.random_range(2..=s.max_vocab);
    let r = s.logit_range;
    let rows: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..vocab).map(|_| rng.random_range(-r..=r)).collect())
        .collect();
    let logits = LogitSeq::from_rows(&rows)?;
    let ids = (0..steps).map(|_| rng.random_range(0..vocab)).collect();
    let targets = TargetSeq::new(ids, logits.vocab())?;
    Ok((logits, targets))
}

/// Runs every instance against every grid point.
pub fn run_audit(s: &GradcheckSettings) -> Result<GradcheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut outcome: Option<GradcheckOutcome> = None;
    let mut audits = 0;
    let mut checked = 0;
    let mut skipped = 0;
    let mut max_row_sum: f64 = 0.0;
    for inst in 0..s.instances {
        let (logits, targets) = random_instance(&mut rng, s)?;
        for &alpha in &s.alphas {
            for &beta in &s.betas {
                let params = ScedParams::new(alpha, beta)?;
                let grad = caref_grad_wrt_logits(&logits, &targets, params, s.weights)?;
                for row in grad.iter_rows() {
                    max_row_sum = max_row_sum.max(row.iter().sum::<f64>().abs());
                }
                let r = caref_gradient_audit(&logits, &targets, params, s.weights, s.h)?;
                audits += 1;
                checked += r.checked;
                skipped += r.skipped;
                let worse = outcome
                    .as_ref()
                    .is_none_or(|o| r.max_rel_error > o.worst.max_rel_error);
                if worse {
                    outcome = Some(GradcheckOutcome {
                        audits: 0,
                        coordinates_checked: 0,
                        coordinates_skipped: 0,
                        worst: r,
                        worst_case: (inst, alpha, beta, logits.steps(), logits.vocab().size()),
                        max_row_sum: 0.0,
                        threshold: s.threshold,
                    });
                }
            }
        }
    }
    let mut o = outcome.ok_or_else(|| CliError::Usage("empty audit grid".into()))?;
    o.audits = audits;
    o.coordinates_checked = checked;
    o.coordinates_skipped = skipped;
    o.max_row_sum = max_row_sum;
    Ok(o)
}

pub fn cmd_gradcheck(config: &Path, threshold: Option<f64>) -> Result<GradcheckOutcome> {
    let cfg = KvConfig::load(config)?;
    let mut settings = GradcheckSettings::from_config(&cfg)?;
    if let Some(t) = threshold {
        if t.is_nan() || t <= 0.0 {
            return Err(CliError::Usage(format!(
                "--threshold must be positive, got {t}"
            )));
        }
        settings.threshold = t;
    }
    let outcome = run_audit(&settings)?;
    println!("{outcome}");
    if outcome.passed() {
        println!("gradcheck: PASS");
        Ok(outcome)
    } else {
        Err(CliError::Check(format!(
            "gradcheck: FAIL (worst relative error {:e}, max row sum {:e})",
            outcome.worst.max_rel_error, outcome.max_row_sum
        )))
    }
}
