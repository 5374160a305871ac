//! Composite training objective `CE + lambda_sced * SCED + lambda_kl * KL` and
//! its analytic gradient with respect to logits.
//!
//! Gradients are derived by hand and chained through the softmax Jacobian.
//! [`gradcheck`] compares them against central finite differences.

pub mod gradcheck;

use crate::dist::{log_softmax_row_into, softmax, LogitSeq, Matrix, ProbSeq, UniformPrior, Vocab};
use crate::error::{Error, Result};
use crate::regularizers::{abs_pow, kl_uniform, sced, sparsity_weight, ScedParams};

pub use gradcheck::{caref_gradient_audit, finite_diff_check, GradReport, KINK_MARGIN};

/// Floor on `1 - P` before raising it to `beta - 1` for `beta < 1`.
pub const ONE_MINUS_P_FLOOR: f64 = 1e-12;

/// Mixing weights of the two regularizers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarefWeights {
    lambda_sced: f64,
    lambda_kl: f64,
}

impl CarefWeights {
    pub fn new(lambda_sced: f64, lambda_kl: f64) -> Result<Self> {
        for (name, v) in [("lambda_sced", lambda_sced), ("lambda_kl", lambda_kl)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(Self {
            lambda_sced,
            lambda_kl,
        })
    }

    /// Plain cross-entropy.
    pub fn none() -> Self {
        Self {
            lambda_sced: 0.0,
            lambda_kl: 0.0,
        }
    }

    pub fn lambda_sced(&self) -> f64 {
        self.lambda_sced
    }

    pub fn lambda_kl(&self) -> f64 {
        self.lambda_kl
    }
}

/// Gold token per step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSeq {
    ids: Vec<usize>,
}

impl TargetSeq {
    pub fn new(ids: Vec<usize>, vocab: Vocab) -> Result<Self> {
        if let Some(&id) = ids.iter().find(|&&id| id >= vocab.size()) {
            return Err(Error::Index {
                id,
                vocab: vocab.size(),
            });
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub(crate) fn check(&self, logits: &LogitSeq) -> Result<()> {
        if self.ids.len() != logits.steps() {
            return Err(Error::Dimension {
                expected: logits.steps(),
                got: self.ids.len(),
            });
        }
        let vocab = logits.vocab().size();
        if let Some(&id) = self.ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::Index { id, vocab });
        }
        Ok(())
    }
}

/// Value of every term of the objective for one sequence or batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub ce: f64,
    pub sced: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Combines the three terms; `total` is always recomputed from them.
    pub fn new(ce: f64, sced: f64, kl: f64, weights: CarefWeights) -> Self {
        Self {
            ce,
            sced,
            kl,
            total: ce + weights.lambda_sced * sced + weights.lambda_kl * kl,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.ce.is_finite()
            && self.sced.is_finite()
            && self.kl.is_finite()
            && self.total.is_finite()
    }
}

/// `-sum_t log softmax(z_t)[y_t]`.
pub fn cross_entropy(logits: &LogitSeq, targets: &TargetSeq) -> Result<f64> {
    targets.check(logits)?;
    let z = logits.values();
    let mut row = vec![0.0; z.cols()];
    let mut total = 0.0;
    for (t, &y) in targets.ids().iter().enumerate() {
        log_softmax_row_into(z.row(t), &mut row);
        total += -row[y];
    }
    Ok(total)
}

/// Evaluates all terms of the objective from one softmax pass.
pub fn caref_loss(
    logits: &LogitSeq,
    targets: &TargetSeq,
    params: ScedParams,
    weights: CarefWeights,
) -> Result<LossBreakdown> {
    let ce = cross_entropy(logits, targets)?;
    let p = softmax(logits);
    let u = UniformPrior::new(logits.vocab());
    let s = sced(&p, params, &u)?;
    let kl = kl_uniform(&p, &u)?;
    Ok(LossBreakdown::new(ce, s, kl, weights))
}

/// Partial derivatives of SCED with respect to each probability, treating the
/// entries as independent. With `d = P ln(P/U)`, `L = ln(P/U)`:
///
/// ```text
/// g = alpha |d|^(alpha-1) sign(d) (L + 1) (1-P)^beta - beta |d|^alpha (1-P)^(beta-1)
/// ```
///
/// At `d = 0` the first term is 0 (the subgradient at the kink when
/// `alpha = 1`). The second term is 0 when `beta = 0`. For `beta < 1`, `1 - P`
/// is floored at [`ONE_MINUS_P_FLOOR`].
pub fn sced_grad_wrt_probs(p: &ProbSeq, params: ScedParams, u: &UniformPrior) -> Result<Matrix> {
    u.check(p.vocab().size())?;
    let log_u = u.log_prob();
    let (alpha, beta) = (params.alpha(), params.beta());
    let values = p.values();
    let mut grad = Matrix::zeros(values.rows(), values.cols());
    for (g, &x) in grad.as_mut_slice().iter_mut().zip(values.as_slice()) {
        let log_ratio = x.ln() - log_u;
        let d = x * log_ratio;
        let first = if d == 0.0 {
            0.0
        } else {
            alpha
                * abs_pow(d, alpha - 1.0)
                * d.signum()
                * (log_ratio + 1.0)
                * sparsity_weight(x, beta)
        };
        let second = if beta == 0.0 {
            0.0
        } else {
            let mut rest = 1.0 - x;
            if beta < 1.0 {
                rest = rest.max(ONE_MINUS_P_FLOOR);
            }
            beta * abs_pow(d, alpha) * rest.powf(beta - 1.0)
        };
        *g = first - second;
    }
    Ok(grad)
}

/// Partial derivatives of KL-from-uniform: `ln(P/U) + 1`.
pub fn kl_grad_wrt_probs(p: &ProbSeq, u: &UniformPrior) -> Result<Matrix> {
    u.check(p.vocab().size())?;
    let log_u = u.log_prob();
    let values = p.values();
    let mut grad = Matrix::zeros(values.rows(), values.cols());
    for (g, &x) in grad.as_mut_slice().iter_mut().zip(values.as_slice()) {
        *g = x.ln() - log_u + 1.0;
    }
    Ok(grad)
}

/// Pulls a probability-space gradient `g` back through the softmax:
/// `out_u = P_u (g_u - sum_v P_v g_v)`.
pub fn softmax_vjp(p_row: &[f64], g_row: &[f64], out: &mut [f64]) {
    let mean: f64 = p_row.iter().zip(g_row).map(|(p, g)| p * g).sum();
    for ((o, &p), &g) in out.iter_mut().zip(p_row).zip(g_row) {
        *o = p * (g - mean);
    }
}

/// Gradient of [`caref_loss`]'s total with respect to the logits.
pub fn caref_grad_wrt_logits(
    logits: &LogitSeq,
    targets: &TargetSeq,
    params: ScedParams,
    weights: CarefWeights,
) -> Result<Matrix> {
    targets.check(logits)?;
    let p = softmax(logits);
    let u = UniformPrior::new(logits.vocab());
    let sced_g = sced_grad_wrt_probs(&p, params, &u)?;
    let kl_g = kl_grad_wrt_probs(&p, &u)?;

    let cols = p.vocab().size();
    let mut grad = Matrix::zeros(p.steps(), cols);
    let mut combined = vec![0.0; cols];
    for (t, &y) in targets.ids().iter().enumerate() {
        let p_row = p.row(t);
        for (c, (s, k)) in combined
            .iter_mut()
            .zip(sced_g.row(t).iter().zip(kl_g.row(t)))
        {
            *c = weights.lambda_sced * s + weights.lambda_kl * k;
        }
        let out = grad.row_mut(t);
        softmax_vjp(p_row, &combined, out);
        for (o, &pv) in out.iter_mut().zip(p_row) {
            *o += pv;
        }
        out[y] -= 1.0;
    }
    Ok(grad)
}
