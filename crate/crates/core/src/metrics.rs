//! Distributional diagnostics of predictive distributions: accuracy, entropy,
//! effective support `exp(H)`, top-k mass and KL from uniform.

use crate::dist::entropy;
use crate::error::{Error, Result};

/// `k` used by [`report`] for the top-k mass column.
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub mean_entropy: f64,
    pub mean_effective_support: f64,
    pub mean_topk_mass: f64,
    pub mean_kl_uniform: f64,
    pub n_items: usize,
}

/// One scored prediction: the predictive distribution, the predicted id and
/// the gold id.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredItem {
    pub probs: Vec<f64>,
    pub predicted: usize,
    pub gold: usize,
}

impl ScoredItem {
    /// Scores `probs` with the greedy prediction [`argmax`].
    pub fn greedy(probs: Vec<f64>, gold: usize) -> Self {
        let predicted = argmax(&probs);
        Self {
            probs,
            predicted,
            gold,
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Perplexity-style count of tokens carrying mass: `exp(H(row))`.
pub fn effective_support(row: &[f64]) -> f64 {
    entropy(row).exp()
}

/// Sum of the `k` largest probabilities.
pub fn topk_mass(row: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > row.len() {
        return Err(Error::Argument(format!(
            "k must lie in [1, {}], got {k}",
            row.len()
        )));
    }
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    Ok(order[..k].iter().map(|&i| row[i]).sum())
}

fn kl_from_uniform(row: &[f64]) -> f64 {
    let log_u = -(row.len() as f64).ln();
    row.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * (p.ln() - log_u))
        .sum()
}

/// Aggregates [`report_with_k`] at [`DEFAULT_TOP_K`], clamped to the
/// vocabulary size.
pub fn report(items: &[ScoredItem]) -> Result<MetricsReport> {
    let k = items
        .first()
        .map_or(DEFAULT_TOP_K, |i| DEFAULT_TOP_K.min(i.probs.len()));
    report_with_k(items, k)
}

/// Arithmetic means over `items`.
pub fn report_with_k(items: &[ScoredItem], k: usize) -> Result<MetricsReport> {
    if items.is_empty() {
        return Err(Error::Argument("cannot report on an empty set".into()));
    }
    let n = items.len() as f64;
    let mut correct = 0usize;
    let (mut ent, mut support, mut topk, mut kl) = (0.0, 0.0, 0.0, 0.0);
    for item in items {
        if item.predicted == item.gold {
            correct += 1;
        }
        let h = entropy(&item.probs);
        ent += h;
        support += h.exp();
        topk += topk_mass(&item.probs, k)?;
        kl += kl_from_uniform(&item.probs);
    }
    Ok(MetricsReport {
        accuracy: correct as f64 / n,
        mean_entropy: ent / n,
        mean_effective_support: support / n,
        mean_topk_mass: topk / n,
        mean_kl_uniform: kl / n,
        n_items: items.len(),
    })
}
