//! Linear bag-of-embeddings next-token predictor.
//!
//! `logits = mean_i(embed[context_i]) * out_proj`, with `embed: |V| x D` and
//! `out_proj: D x |V|`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dist::{LogitSeq, Matrix, Vocab};
use crate::error::{Error, Result};
use crate::objective::{caref_grad_wrt_logits, caref_loss, CarefWeights, LossBreakdown, TargetSeq};
use crate::regularizers::ScedParams;

/// Standard deviation of the initial parameters.
pub const INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub embed: Matrix,
    pub out_proj: Matrix,
}

/// Gradients with the same shapes as [`ToyModel`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub embed: Matrix,
    pub out_proj: Matrix,
}

impl ModelGrads {
    pub fn zeros_like(model: &ToyModel) -> Self {
        Self {
            embed: Matrix::zeros(model.embed.rows(), model.embed.cols()),
            out_proj: Matrix::zeros(model.out_proj.rows(), model.out_proj.cols()),
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        for (a, b) in self
            .embed
            .as_mut_slice()
            .iter_mut()
            .zip(other.embed.as_slice())
        {
            *a += b;
        }
        for (a, b) in self
            .out_proj
            .as_mut_slice()
            .iter_mut()
            .zip(other.out_proj.as_slice())
        {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.embed
            .as_mut_slice()
            .iter_mut()
            .for_each(|g| *g *= factor);
        self.out_proj
            .as_mut_slice()
            .iter_mut()
            .for_each(|g| *g *= factor);
    }

    /// Euclidean norm over all parameters.
    pub fn global_norm(&self) -> f64 {
        self.embed
            .as_slice()
            .iter()
            .chain(self.out_proj.as_slice())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.embed
            .as_slice()
            .iter()
            .chain(self.out_proj.as_slice())
            .all(|g| g.is_finite())
    }
}

impl ToyModel {
    pub fn zeros(vocab: Vocab, width: usize) -> Self {
        Self {
            embed: Matrix::zeros(vocab.size(), width),
            out_proj: Matrix::zeros(width, vocab.size()),
        }
    }

    /// Parameters drawn i.i.d. from `N(0, INIT_STD^2)`.
    pub fn init(vocab: Vocab, width: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidInput(
                "embedding width must be positive".into(),
            ));
        }
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut model = Self::zeros(vocab, width);
        for x in model
            .embed
            .as_mut_slice()
            .iter_mut()
            .chain(model.out_proj.as_mut_slice())
        {
            *x = normal.sample(rng);
        }
        Ok(model)
    }

    /// Convenience for [`ToyModel::init`] from a bare seed.
    pub fn seeded(vocab: Vocab, width: usize, seed: u64) -> Result<Self> {
        Self::init(vocab, width, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.embed.rows()).expect("model vocabulary is at least 2")
    }

    pub fn width(&self) -> usize {
        self.embed.cols()
    }

    pub fn num_params(&self) -> usize {
        self.embed.as_slice().len() + self.out_proj.as_slice().len()
    }

    pub fn is_finite(&self) -> bool {
        self.embed
            .as_slice()
            .iter()
            .chain(self.out_proj.as_slice())
            .all(|x| x.is_finite())
    }

    fn mean_embedding(&self, context: &[usize]) -> Result<Vec<f64>> {
        if context.is_empty() {
            return Err(Error::InvalidInput("empty context".into()));
        }
        let vocab = self.embed.rows();
        let mut h = vec![0.0; self.width()];
        for &tok in context {
            if tok >= vocab {
                return Err(Error::Index { id: tok, vocab });
            }
            for (acc, &e) in h.iter_mut().zip(self.embed.row(tok)) {
                *acc += e;
            }
        }
        let n = context.len() as f64;
        h.iter_mut().for_each(|x| *x /= n);
        Ok(h)
    }

    fn project(&self, h: &[f64]) -> Vec<f64> {
        let mut logits = vec![0.0; self.out_proj.cols()];
        for (i, &hi) in h.iter().enumerate() {
            for (z, &w) in logits.iter_mut().zip(self.out_proj.row(i)) {
                *z += hi * w;
            }
        }
        logits
    }

    /// Next-token logits for one context.
    pub fn forward(&self, context: &[usize]) -> Result<Vec<f64>> {
        Ok(self.project(&self.mean_embedding(context)?))
    }

    /// Parameter gradients of the objective on one example, with its loss.
    pub fn backward(
        &self,
        context: &[usize],
        target: usize,
        params: ScedParams,
        weights: CarefWeights,
    ) -> Result<(ModelGrads, LossBreakdown)> {
        let h = self.mean_embedding(context)?;
        let logits = LogitSeq::new(Matrix::from_vec(1, self.out_proj.cols(), self.project(&h))?)?;
        let targets = TargetSeq::new(vec![target], logits.vocab())?;
        let loss = caref_loss(&logits, &targets, params, weights)?;
        let g_z = caref_grad_wrt_logits(&logits, &targets, params, weights)?;
        let g_z = g_z.row(0);

        let mut grads = ModelGrads::zeros_like(self);
        // d out_proj[i][v] = h_i * g_v
        for (i, &hi) in h.iter().enumerate() {
            for (g, &gv) in grads.out_proj.row_mut(i).iter_mut().zip(g_z) {
                *g = hi * gv;
            }
        }
        // d h_i = sum_v out_proj[i][v] g_v, shared by every context token
        let n = context.len() as f64;
        let d_h: Vec<f64> = (0..self.width())
            .map(|i| {
                self.out_proj
                    .row(i)
                    .iter()
                    .zip(g_z)
                    .map(|(w, g)| w * g)
                    .sum::<f64>()
                    / n
            })
            .collect();
        for &tok in context {
            for (g, &d) in grads.embed.row_mut(tok).iter_mut().zip(&d_h) {
                *g += d;
            }
        }
        Ok((grads, loss))
    }

    /// Parameters as little-endian `f64` bytes: `embed` then `out_proj`,
    /// both row-major.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.embed
            .as_slice()
            .iter()
            .chain(self.out_proj.as_slice())
            .flat_map(|x| x.to_le_bytes())
            .collect()
    }

    /// One-line shape description accompanying [`ToyModel::to_le_bytes`].
    pub fn shape_line(&self) -> String {
        format!(
            "f64le embed {} {} out_proj {} {}",
            self.embed.rows(),
            self.embed.cols(),
            self.out_proj.rows(),
            self.out_proj.cols()
        )
    }

    /// Inverse of [`ToyModel::to_le_bytes`] and [`ToyModel::shape_line`].
    pub fn from_le_bytes(shape: &str, bytes: &[u8]) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("malformed shape line {shape:?}"));
        let fields: Vec<&str> = shape.split_whitespace().collect();
        if fields.len() != 7
            || fields[0] != "f64le"
            || fields[1] != "embed"
            || fields[4] != "out_proj"
        {
            return Err(bad());
        }
        let dim = |i: usize| fields[i].parse::<usize>().map_err(|_| bad());
        let (er, ec, or, oc) = (dim(2)?, dim(3)?, dim(5)?, dim(6)?);
        if bytes.len() != 8 * (er * ec + or * oc) {
            return Err(Error::Dimension {
                expected: 8 * (er * ec + or * oc),
                got: bytes.len(),
            });
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let embed = Matrix::from_vec(er, ec, values.by_ref().take(er * ec).collect())?;
        let out_proj = Matrix::from_vec(or, oc, values.collect())?;
        Ok(Self { embed, out_proj })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: usize) -> Vocab {
        Vocab::new(n).unwrap()
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let m = ToyModel::zeros(vocab(5), 3);
        assert_eq!(m.forward(&[0, 4, 2]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn single_token_context_is_a_row_product() {
        let m = ToyModel::seeded(vocab(6), 4, 1).unwrap();
        let z = m.forward(&[3]).unwrap();
        for (v, &zv) in z.iter().enumerate() {
            let expect: f64 = (0..4)
                .map(|i| m.embed.get(3, i) * m.out_proj.get(i, v))
                .sum();
            assert!((zv - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_matches_term_by_term_recomputation() {
        let m = ToyModel::seeded(vocab(7), 5, 2).unwrap();
        let ctx = [1, 6, 1, 0, 3];
        let z = m.forward(&ctx).unwrap();
        for (v, &zv) in z.iter().enumerate() {
            let mut slow = 0.0;
            for &tok in &ctx {
                for i in 0..5 {
                    slow += m.embed.get(tok, i) * m.out_proj.get(i, v);
                }
            }
            slow /= ctx.len() as f64;
            assert!((zv - slow).abs() < 1e-14, "{zv} vs {slow}");
        }
    }

    #[test]
    fn out_of_range_token_is_rejected() {
        let m = ToyModel::zeros(vocab(3), 2);
        assert!(matches!(
            m.forward(&[0, 3]),
            Err(Error::Index { id: 3, vocab: 3 })
        ));
        assert!(m.forward(&[]).is_err());
    }

    #[test]
    fn saturated_correct_prediction_has_tiny_gradient() {
        let mut m = ToyModel::zeros(vocab(4), 1);
        m.embed.set(2, 0, 1.0);
        m.out_proj.set(0, 1, 60.0);
        let p = ScedParams::new(1.0, 0.0).unwrap();
        let (g, loss) = m.backward(&[2], 1, p, CarefWeights::none()).unwrap();
        assert!(loss.ce < 1e-20);
        // floored cold tokens leave a residue of order PROB_FLOOR
        assert!(g.global_norm() < 1e-9);
    }

    #[test]
    fn zero_embedding_gives_structured_gradients() {
        let mut m = ToyModel::seeded(vocab(5), 3, 4).unwrap();
        m.embed = Matrix::zeros(5, 3);
        let p = ScedParams::new(1.5, 1.0).unwrap();
        let w = CarefWeights::new(0.1, 0.1).unwrap();
        let (g, _) = m.backward(&[0, 2, 2], 4, p, w).unwrap();
        // mean feature is 0, so every out_proj gradient row is 0 * g_z
        assert!(g.out_proj.as_slice().iter().all(|&x| x == 0.0));
        // embedding gradient is count(tok) * out_proj g_z / |context|
        let row0 = g.embed.row(0).to_vec();
        for i in 0..3 {
            assert!((g.embed.get(2, i) - 2.0 * row0[i]).abs() < 1e-15);
        }
        assert!(g.embed.row(1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn out_proj_gradient_columns_are_proportional_to_mean_feature() {
        let m = ToyModel::seeded(vocab(5), 3, 8).unwrap();
        let ctx = [0, 1, 3];
        let p = ScedParams::new(2.0, 0.5).unwrap();
        let w = CarefWeights::new(0.1, 0.1).unwrap();
        let (g, _) = m.backward(&ctx, 2, p, w).unwrap();
        let h: Vec<f64> = (0..3)
            .map(|i| ctx.iter().map(|&t| m.embed.get(t, i)).sum::<f64>() / 3.0)
            .collect();
        for v in 0..5 {
            let ratio = g.out_proj.get(0, v) / h[0];
            for i in 1..3 {
                assert!((g.out_proj.get(i, v) - ratio * h[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn backward_matches_parameter_finite_differences() {
        let m = ToyModel::seeded(vocab(6), 4, 17).unwrap();
        let ctx = [0, 5, 5, 2];
        let target = 3;
        let w = CarefWeights::new(0.1, 0.1).unwrap();
        for (a, b) in [(1.0, 0.0), (1.5, 0.5), (2.0, 2.0)] {
            let p = ScedParams::new(a, b).unwrap();
            let (g, _) = m.backward(&ctx, target, p, w).unwrap();
            let loss = |m: &ToyModel| m.backward(&ctx, target, p, w).unwrap().1.total;
            let h = 1e-6;
            let mut worst: f64 = 0.0;
            for which in 0..2 {
                for k in 0..24 {
                    let (mut up, mut down) = (m.clone(), m.clone());
                    let (analytic, u, d) = if which == 0 {
                        (
                            g.embed.as_slice()[k],
                            &mut up.embed.as_mut_slice()[k],
                            &mut down.embed.as_mut_slice()[k],
                        )
                    } else {
                        (
                            g.out_proj.as_slice()[k],
                            &mut up.out_proj.as_mut_slice()[k],
                            &mut down.out_proj.as_mut_slice()[k],
                        )
                    };
                    *u += h;
                    *d -= h;
                    let numeric = (loss(&up) - loss(&down)) / (2.0 * h);
                    let rel =
                        (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
                    worst = worst.max(rel);
                }
            }
            assert!(worst < 1e-5, "alpha={a} beta={b}: {worst}");
        }
    }

    #[test]
    fn snapshot_bytes_round_trip() {
        let m = ToyModel::seeded(vocab(4), 3, 9).unwrap();
        let bytes = m.to_le_bytes();
        assert_eq!(bytes.len(), 8 * m.num_params());
        let back = ToyModel::from_le_bytes(&m.shape_line(), &bytes).unwrap();
        assert_eq!(back, m);
        assert!(ToyModel::from_le_bytes("f64le embed 4 3 out_proj 3 5", &bytes).is_err());
    }
}
