//! Distributional regularizers: the sparsity-calibrated entropic divergence
//! (SCED), KL divergence from the uniform prior, and three comparison
//! regularizers (entropy penalty, label smoothing, sparsemax).
//!
//! For one step `t` and token `v`, with `U = 1/|V|`:
//!
//! ```text
//! d[t][v]   = P log(P / U)
//! SCED      = sum_t sum_v |d|^alpha * (1 - P)^beta
//! KL(P||U)  = sum_t sum_v d
//! ```
//!
//! Both are sums over steps and vocabulary, not means. Because SCED takes the
//! absolute value of every `d`, tokens below uniform (`d < 0`) add to it
//! instead of cancelling, so `SCED(alpha = 1, beta = 0) >= KL` with equality
//! only on uniform rows.

use crate::dist::{log_softmax_row_into, LogitSeq, ProbSeq, UniformPrior};
use crate::error::{Error, Result};
use crate::objective::TargetSeq;

/// Lower clamp on `|d|` before taking `ln |d|`.
pub(crate) const ABS_DIV_FLOOR: f64 = 1e-300;

/// Label-smoothing mass used when none is configured.
pub const DEFAULT_SMOOTHING: f64 = 0.1;

/// Exponents of the SCED integrand: `alpha` shapes the curvature of the
/// entropic penalty, `beta` the adaptive down-weighting of confident tokens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScedParams {
    alpha: f64,
    beta: f64,
}

impl ScedParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha must be >= 1, got {alpha}"
            )));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "beta must be >= 0, got {beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Label-smoothing mass `epsilon` in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingEps(f64);

impl SmoothingEps {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::InvalidInput(format!(
                "smoothing epsilon must lie in [0, 1), got {epsilon}"
            )));
        }
        Ok(Self(epsilon))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

impl Default for SmoothingEps {
    fn default() -> Self {
        Self(DEFAULT_SMOOTHING)
    }
}

/// `d = P (ln P - ln U)`.
#[inline]
pub(crate) fn divergence(p: f64, log_u: f64) -> f64 {
    p * (p.ln() - log_u)
}

/// `|d|^alpha`, computed as `exp(alpha ln |d|)` except at `alpha = 1`.
#[inline]
pub(crate) fn abs_pow(d: f64, alpha: f64) -> f64 {
    let a = d.abs();
    if alpha == 1.0 {
        a
    } else {
        (alpha * a.max(ABS_DIV_FLOOR).ln()).exp()
    }
}

/// `(1 - P)^beta`, with the convention `x^0 = 1`.
#[inline]
pub(crate) fn sparsity_weight(p: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        1.0
    } else {
        (1.0 - p).powf(beta)
    }
}

/// KL divergence of every step from the uniform prior, summed over steps.
pub fn kl_uniform(p: &ProbSeq, u: &UniformPrior) -> Result<f64> {
    u.check(p.vocab().size())?;
    let log_u = u.log_prob();
    Ok(p.values()
        .iter_rows()
        .map(|row| row.iter().map(|&x| divergence(x, log_u)).sum::<f64>())
        .sum())
}

/// Sparsity-calibrated entropic divergence `sum |P log(P/U)|^alpha (1-P)^beta`.
pub fn sced(p: &ProbSeq, params: ScedParams, u: &UniformPrior) -> Result<f64> {
    u.check(p.vocab().size())?;
    let log_u = u.log_prob();
    let (alpha, beta) = (params.alpha(), params.beta());
    Ok(p.values()
        .iter_rows()
        .map(|row| {
            row.iter()
                .map(|&x| abs_pow(divergence(x, log_u), alpha) * sparsity_weight(x, beta))
                .sum::<f64>()
        })
        .sum())
}

/// Negative total entropy `-sum_t H(P_t)`.
///
/// The sign is chosen so that adding this term with a positive weight and
/// descending its gradient raises entropy, i.e. flattens every row.
pub fn entropy_penalty(p: &ProbSeq) -> f64 {
    -p.values()
        .iter_rows()
        .map(crate::dist::entropy)
        .sum::<f64>()
}

/// Gradient of [`entropy_penalty`] with respect to the logits that produced
/// `p`: `P_u (ln P_u + H(P))` per entry.
pub fn entropy_penalty_grad_wrt_logits(p: &ProbSeq) -> crate::dist::Matrix {
    let values = p.values();
    let mut grad = crate::dist::Matrix::zeros(values.rows(), values.cols());
    for (t, row) in values.iter_rows().enumerate() {
        let h = crate::dist::entropy(row);
        for (g, &x) in grad.row_mut(t).iter_mut().zip(row) {
            *g = x * (x.ln() + h);
        }
    }
    grad
}

/// Cross-entropy against `(1 - eps) onehot(y) + eps U`, summed over steps.
///
/// At `eps = 0` this is bit-identical to [`crate::objective::cross_entropy`].
pub fn label_smoothing_ce(
    logits: &LogitSeq,
    targets: &TargetSeq,
    eps: SmoothingEps,
    u: &UniformPrior,
) -> Result<f64> {
    let z = logits.values();
    u.check(z.cols())?;
    targets.check(logits)?;
    let eps = eps.value();
    let mut row = vec![0.0; z.cols()];
    let mut total = 0.0;
    for (t, &y) in targets.ids().iter().enumerate() {
        log_softmax_row_into(z.row(t), &mut row);
        let nll = -row[y];
        let uniform_ce = -u.prob() * row.iter().sum::<f64>();
        total += (1.0 - eps) * nll + eps * uniform_ce;
    }
    Ok(total)
}

/// Euclidean projection of a logit row onto the probability simplex.
///
/// Sort-and-threshold: with `z` sorted descending, `k` is the largest index
/// with `1 + k z_(k) > sum_{j<=k} z_(j)`, `tau = (sum_{j<=k} z_(j) - 1) / k`
/// and the output is `max(z - tau, 0)`. Entries below the threshold are
/// exactly zero.
pub fn sparsemax(row: &[f64]) -> Result<Vec<f64>> {
    if row.is_empty() {
        return Err(Error::InvalidInput("sparsemax of an empty row".into()));
    }
    if let Some(v) = row.iter().position(|z| !z.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite sparsemax input {} at index {v}",
            row[v]
        )));
    }
    let mut sorted = row.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));

    let mut cumsum = 0.0;
    let mut support = (1, sorted[0]);
    for (i, &z) in sorted.iter().enumerate() {
        cumsum += z;
        let k = (i + 1) as f64;
        if 1.0 + k * z > cumsum {
            support = (i + 1, cumsum);
        }
    }
    let (k, sum_k) = support;
    let tau = (sum_k - 1.0) / k as f64;
    Ok(row.iter().map(|&z| (z - tau).max(0.0)).collect())
}
