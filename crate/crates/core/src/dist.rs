//! Probability-distribution and logit primitives.
//!
//! Every distribution handed to the loss functions is a [`ProbSeq`]: a `T x |V|`
//! row-stochastic matrix whose entries have been clamped to [`PROB_FLOOR`]. The
//! floor keeps `P log(P/U)`, its powers and its derivatives finite everywhere on
//! the admissible set. All arithmetic is `f64` and all logarithms are natural.

use std::fmt;

use crate::error::{Error, Result};

/// Smallest probability a [`ProbSeq`] entry may hold.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-sum tolerance used by [`validate`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn get(&self, t: usize, v: usize) -> f64 {
        self.data[t * self.cols + v]
    }

    pub fn set(&mut self, t: usize, v: usize, value: f64) {
        self.data[t * self.cols + v] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Vocabulary size `|V|`, at least 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vocab(usize);

impl Vocab {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidInput(format!(
                "vocabulary size must be at least 2, got {size}"
            )));
        }
        Ok(Self(size))
    }

    pub fn size(self) -> usize {
        self.0
    }
}

/// Uniform prior `U_v = 1/|V|` over a vocabulary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformPrior {
    vocab: Vocab,
    prob: f64,
    log_prob: f64,
}

impl UniformPrior {
    pub fn new(vocab: Vocab) -> Self {
        let n = vocab.size() as f64;
        Self {
            vocab,
            prob: 1.0 / n,
            log_prob: -n.ln(),
        }
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    /// `1/|V|`, shared by every entry.
    pub fn prob(&self) -> f64 {
        self.prob
    }

    /// `-ln |V|`.
    pub fn log_prob(&self) -> f64 {
        self.log_prob
    }

    pub(crate) fn check(&self, cols: usize) -> Result<()> {
        if cols != self.vocab.size() {
            return Err(Error::Dimension {
                expected: self.vocab.size(),
                got: cols,
            });
        }
        Ok(())
    }
}

/// Pre-softmax scores `z[t][v]`: at least one row, every entry finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitSeq(Matrix);

impl LogitSeq {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 {
            return Err(Error::InvalidInput("logit sequence has no steps".into()));
        }
        Vocab::new(values.cols())?;
        for (t, row) in values.iter_rows().enumerate() {
            if let Some(v) = row.iter().position(|z| !z.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite logit {} at step {t}, token {v}",
                    row[v]
                )));
            }
        }
        Ok(Self(values))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }

    pub fn steps(&self) -> usize {
        self.0.rows()
    }

    pub fn vocab(&self) -> Vocab {
        Vocab(self.0.cols())
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Per-step predictive distributions `P[t][v]`, floored at [`PROB_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbSeq(Matrix);

impl ProbSeq {
    /// Validates `values` as row-stochastic, then applies the probability floor.
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 {
            return Err(Error::InvalidInput(
                "probability sequence has no steps".into(),
            ));
        }
        Vocab::new(values.cols())?;
        validate(&values)?;
        let mut values = values;
        for t in 0..values.rows() {
            apply_floor(values.row_mut(t), PROB_FLOOR);
        }
        Ok(Self(values))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    /// `steps` rows of the uniform distribution.
    pub fn uniform(vocab: Vocab, steps: usize) -> Self {
        let steps = steps.max(1);
        Self(Matrix::filled(
            steps,
            vocab.size(),
            1.0 / vocab.size() as f64,
        ))
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.0.row(t)
    }

    pub fn steps(&self) -> usize {
        self.0.rows()
    }

    pub fn vocab(&self) -> Vocab {
        Vocab(self.0.cols())
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Clamps entries to `floor` and renormalizes the row if anything moved.
fn apply_floor(row: &mut [f64], floor: f64) {
    let mut clamped = false;
    for p in row.iter_mut() {
        if *p < floor {
            *p = floor;
            clamped = true;
        }
    }
    if clamped {
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= sum);
    }
}

/// Row-wise softmax with max-shift, followed by the probability floor.
pub fn softmax(logits: &LogitSeq) -> ProbSeq {
    softmax_with_floor(logits, PROB_FLOOR)
}

/// [`softmax`] with an explicit floor, for experiments on the floor itself.
pub fn softmax_with_floor(logits: &LogitSeq, floor: f64) -> ProbSeq {
    let z = logits.values();
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for t in 0..z.rows() {
        let row = out.row_mut(t);
        softmax_row_into(z.row(t), row);
        apply_floor(row, floor);
    }
    ProbSeq(out)
}

fn softmax_row_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &zi) in out.iter_mut().zip(z) {
        *o = (zi - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Row-wise log-softmax via the shifted log-sum-exp; never `ln(softmax)`.
pub fn log_softmax(logits: &LogitSeq) -> Matrix {
    let z = logits.values();
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for t in 0..z.rows() {
        log_softmax_row_into(z.row(t), out.row_mut(t));
    }
    out
}

pub(crate) fn log_softmax_row_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|&zi| (zi - max).exp()).sum();
    let lse = max + sum.ln();
    for (o, &zi) in out.iter_mut().zip(z) {
        *o = zi - lse;
    }
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
///
/// The row is not validated; callers pass rows of a [`ProbSeq`] or rows that
/// already passed [`validate`].
pub fn entropy(row: &[f64]) -> f64 {
    -row.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// First broken simplex invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite { row: usize, col: usize, value: f64 },
    Negative { row: usize, col: usize, value: f64 },
    RowSum { row: usize, excess: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite { row, col, value } => {
                write!(f, "row {row}, entry {col} is not finite ({value})")
            }
            Violation::Negative { row, col, value } => {
                write!(f, "row {row}, entry {col} is negative ({value})")
            }
            Violation::RowSum { row, excess } => {
                write!(f, "row {row} sums to 1{excess:+e}")
            }
        }
    }
}

impl std::error::Error for Violation {}

/// Checks that every row is a probability vector.
///
/// Rows are scanned in order; within a row entries are checked before the sum,
/// and the first defect is reported.
pub fn validate(values: &Matrix) -> std::result::Result<(), Violation> {
    for (t, row) in values.iter_rows().enumerate() {
        validate_row_at(row, t)?;
    }
    Ok(())
}

/// [`validate`] for a single row.
pub fn validate_row(row: &[f64]) -> std::result::Result<(), Violation> {
    validate_row_at(row, 0)
}

fn validate_row_at(row: &[f64], t: usize) -> std::result::Result<(), Violation> {
    for (v, &p) in row.iter().enumerate() {
        if !p.is_finite() {
            return Err(Violation::NonFinite {
                row: t,
                col: v,
                value: p,
            });
        }
        if p < 0.0 {
            return Err(Violation::Negative {
                row: t,
                col: v,
                value: p,
            });
        }
    }
    let excess = row.iter().sum::<f64>() - 1.0;
    if excess.abs() > SIMPLEX_TOL {
        return Err(Violation::RowSum { row: t, excess });
    }
    Ok(())
}
