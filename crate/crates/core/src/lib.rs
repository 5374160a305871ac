//! Sparsity-calibrated entropic divergence (SCED) and the composite
//! calibration-aware objective built on it.
//!
//! * [`dist`]: validated logits and probability sequences, softmax, entropy.
//! * [`regularizers`]: SCED, KL from uniform and the comparison regularizers.
//! * [`objective`]: the composite loss, its analytic logit gradient and the
//!   finite-difference audit.
//! * [`metrics`]: accuracy and distributional statistics.
//! * [`toy`]: a synthetic task, a bag-of-embeddings model and an AdamW
//!   training loop.

pub mod dist;
pub mod error;
pub mod metrics;
pub mod objective;
pub mod regularizers;
pub mod toy;

pub use dist::{LogitSeq, Matrix, ProbSeq, UniformPrior, Vocab, PROB_FLOOR};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use objective::{CarefWeights, LossBreakdown, TargetSeq};
pub use regularizers::{ScedParams, SmoothingEps};
