//! Central finite-difference audits of analytic logit gradients.

use crate::dist::{softmax, LogitSeq, Matrix, UniformPrior};
use crate::error::{Error, Result};
use crate::regularizers::{divergence, ScedParams};

use super::{caref_grad_wrt_logits, caref_loss, CarefWeights, TargetSeq};

/// At `alpha = 1`, steps holding an entry with `|P ln(P/U)|` below this are
/// skipped: the SCED integrand has a kink at `d = 0` that central differences
/// straddle.
pub const KINK_MARGIN: f64 = 1e-6;

/// Denominator floor of the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// `(step, token)` where `max_rel_error` was attained.
    pub worst_coordinate: (usize, usize),
    pub step_size: f64,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Compares `analytic` against `(f(z + h e) - f(z - h e)) / 2h` on every
/// coordinate not excluded by `skip(step, token)`.
///
/// Steps in `[1e-7, 1e-3]` are the useful range; larger ones are accepted so
/// that truncation error can be demonstrated.
pub fn finite_diff_check<F, S>(
    loss: F,
    point: &LogitSeq,
    analytic: &Matrix,
    h: f64,
    skip: S,
) -> Result<GradReport>
where
    F: Fn(&LogitSeq) -> Result<f64>,
    S: Fn(usize, usize) -> bool,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Argument(format!(
            "step size must be positive, got {h}"
        )));
    }
    let z = point.values();
    if analytic.rows() != z.rows() || analytic.cols() != z.cols() {
        return Err(Error::Dimension {
            expected: z.rows() * z.cols(),
            got: analytic.rows() * analytic.cols(),
        });
    }

    let mut report = GradReport {
        max_rel_error: 0.0,
        worst_coordinate: (0, 0),
        step_size: h,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = z.clone();
    for t in 0..z.rows() {
        for v in 0..z.cols() {
            if skip(t, v) {
                report.skipped += 1;
                continue;
            }
            let x = z.get(t, v);
            probe.set(t, v, x + h);
            let up = loss(&LogitSeq::new(probe.clone())?)?;
            probe.set(t, v, x - h);
            let down = loss(&LogitSeq::new(probe.clone())?)?;
            probe.set(t, v, x);

            let numeric = (up - down) / (2.0 * h);
            let exact = analytic.get(t, v);
            let denom = exact.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            let rel = (exact - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = rel;
                report.worst_coordinate = (t, v);
                report.analytic = exact;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Steps whose SCED term sits within [`KINK_MARGIN`] of the `alpha = 1` kink.
pub fn kink_adjacent_steps(
    logits: &LogitSeq,
    params: ScedParams,
    weights: CarefWeights,
) -> Vec<bool> {
    if params.alpha() != 1.0 || weights.lambda_sced() == 0.0 {
        return vec![false; logits.steps()];
    }
    let p = softmax(logits);
    let log_u = UniformPrior::new(logits.vocab()).log_prob();
    p.values()
        .iter_rows()
        .map(|row| {
            row.iter()
                .any(|&x| divergence(x, log_u).abs() < KINK_MARGIN)
        })
        .collect()
}

/// Audits [`caref_grad_wrt_logits`] against finite differences of
/// [`caref_loss`]'s total.
pub fn caref_gradient_audit(
    logits: &LogitSeq,
    targets: &TargetSeq,
    params: ScedParams,
    weights: CarefWeights,
    h: f64,
) -> Result<GradReport> {
    let analytic = caref_grad_wrt_logits(logits, targets, params, weights)?;
    let kinked = kink_adjacent_steps(logits, params, weights);
    finite_diff_check(
        |z| Ok(caref_loss(z, targets, params, weights)?.total),
        logits,
        &analytic,
        h,
        |t, _| kinked[t],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::cross_entropy;
    use rand::{Rng, SeedableRng};

    fn random_instance(rng: &mut impl Rng, steps: usize, vocab: usize) -> (LogitSeq, TargetSeq) {
        let rows: Vec<Vec<f64>> = (0..steps)
            .map(|_| (0..vocab).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let z = LogitSeq::from_rows(&rows).unwrap();
        let ids = (0..steps).map(|_| rng.random_range(0..vocab)).collect();
        let t = TargetSeq::new(ids, z.vocab()).unwrap();
        (z, t)
    }

    #[test]
    fn cross_entropy_gradient_is_tight() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (z, t) = random_instance(&mut rng, 3, 6);
        let params = ScedParams::new(1.0, 0.0).unwrap();
        let analytic = caref_grad_wrt_logits(&z, &t, params, CarefWeights::none()).unwrap();
        let r =
            finite_diff_check(|z| cross_entropy(z, &t), &z, &analytic, 1e-5, |_, _| false).unwrap();
        assert!(r.max_rel_error < 1e-7, "{r:?}");
        assert_eq!(r.checked, 18);
    }

    #[test]
    fn full_objective_gradient_agrees() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let w = CarefWeights::new(0.1, 0.1).unwrap();
        for &alpha in &[1.0, 1.5, 2.0] {
            for &beta in &[0.0, 0.5, 1.0, 2.0] {
                let (z, t) = random_instance(&mut rng, 3, 8);
                let p = ScedParams::new(alpha, beta).unwrap();
                let r = caref_gradient_audit(&z, &t, p, w, 1e-5).unwrap();
                assert!(r.max_rel_error < 1e-6, "alpha={alpha} beta={beta}: {r:?}");
            }
        }
    }

    #[test]
    fn corrupted_entry_is_located() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let (z, t) = random_instance(&mut rng, 2, 5);
        let p = ScedParams::new(1.5, 1.0).unwrap();
        let w = CarefWeights::new(0.1, 0.1).unwrap();
        let mut analytic = caref_grad_wrt_logits(&z, &t, p, w).unwrap();
        analytic.set(1, 3, analytic.get(1, 3) + 0.1);
        let r = finite_diff_check(
            |z| Ok(caref_loss(z, &t, p, w)?.total),
            &z,
            &analytic,
            1e-5,
            |_, _| false,
        )
        .unwrap();
        assert_eq!(r.worst_coordinate, (1, 3));
        assert!(r.max_rel_error > 1e-2);
    }

    #[test]
    fn coarse_step_shows_truncation_error() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let (z, t) = random_instance(&mut rng, 2, 6);
        let p = ScedParams::new(2.0, 1.0).unwrap();
        let w = CarefWeights::new(0.1, 0.1).unwrap();
        let r = caref_gradient_audit(&z, &t, p, w, 1e-1).unwrap();
        assert!(r.max_rel_error > 1e-6);
    }

    #[test]
    fn rejects_bad_step_and_shape() {
        let z = LogitSeq::from_rows(&[[0.0, 1.0]]).unwrap();
        let g = Matrix::zeros(1, 2);
        assert!(finite_diff_check(|_| Ok(0.0), &z, &g, 0.0, |_, _| false).is_err());
        let wrong = Matrix::zeros(2, 2);
        assert!(finite_diff_check(|_| Ok(0.0), &z, &wrong, 1e-5, |_, _| false).is_err());
    }

    #[test]
    fn kink_rows_flagged_only_at_unit_alpha() {
        let z = LogitSeq::from_rows(&[[0.0, 0.0, 0.0], [0.0, 1.0, 2.0]]).unwrap();
        let w = CarefWeights::new(0.1, 0.0).unwrap();
        let one = ScedParams::new(1.0, 0.0).unwrap();
        assert_eq!(kink_adjacent_steps(&z, one, w), vec![true, false]);
        let two = ScedParams::new(2.0, 0.0).unwrap();
        assert_eq!(kink_adjacent_steps(&z, two, w), vec![false, false]);
        assert_eq!(
            kink_adjacent_steps(&z, one, CarefWeights::none()),
            vec![false, false]
        );
    }
}
