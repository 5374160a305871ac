//! Synthetic next-token task whose label depends only on a known subset of
//! context positions.
//!
//! The vocabulary is split in two: the lower half (rounded up) holds *signal*
//! tokens, the rest *distractors*. Each example draws one signal token `s`,
//! writes it into every relevant position, and fills the remaining positions
//! with uniformly drawn distractors. The target is `perm[s]` for a seeded
//! permutation `perm` of the whole vocabulary. Each relevant position is then
//! independently overwritten by a distractor with probability
//! `distractor_noise`; when all of them are, the example carries no
//! information about its label.

use std::io::{BufRead, Write};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dist::Vocab;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTaskConfig {
    pub vocab: Vocab,
    pub context_len: usize,
    pub relevant_set_size: usize,
    pub distractor_noise: f64,
    pub num_train: usize,
    pub num_eval: usize,
    pub seed: u64,
}

impl SynthTaskConfig {
    /// Noiseless 16-token task with 8-token contexts, 2 relevant positions and
    /// 256 train / 256 eval examples.
    pub fn toy() -> Self {
        Self {
            vocab: Vocab::new(16).expect("16 >= 2"),
            context_len: 8,
            relevant_set_size: 2,
            distractor_noise: 0.0,
            num_train: 256,
            num_eval: 256,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.relevant_set_size;
        if self.context_len == 0 || k == 0 {
            return Err(Error::InvalidInput(
                "context_len and relevant_set_size must be positive".into(),
            ));
        }
        if k > self.context_len || k > self.vocab.size() {
            return Err(Error::InvalidInput(format!(
                "relevant_set_size {k} exceeds context_len {} or vocab {}",
                self.context_len,
                self.vocab.size()
            )));
        }
        if !(0.0..1.0).contains(&self.distractor_noise) {
            return Err(Error::InvalidInput(format!(
                "distractor_noise must lie in [0, 1), got {}",
                self.distractor_noise
            )));
        }
        if self.num_train == 0 || self.num_eval == 0 {
            return Err(Error::InvalidInput(
                "num_train and num_eval must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Number of signal tokens, `ceil(|V| / 2)`.
    pub fn num_signal(&self) -> usize {
        self.vocab.size().div_ceil(2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub context: Vec<usize>,
    pub target: usize,
}

/// The generating mechanism, kept for the posterior oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTask {
    pub config: SynthTaskConfig,
    /// Target for each signal token, `perm[s]`.
    pub permutation: Vec<usize>,
    /// Sorted context positions that carry the signal.
    pub relevant_positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: SynthTask,
    pub train: Vec<Example>,
    pub eval: Vec<Example>,
}

/// Generates the train and eval splits; a pure function of `cfg`.
pub fn synth_generate(cfg: &SynthTaskConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.vocab.size();

    let mut permutation: Vec<usize> = (0..n).collect();
    permutation.shuffle(&mut rng);
    let mut relevant_positions =
        index::sample(&mut rng, cfg.context_len, cfg.relevant_set_size).into_vec();
    relevant_positions.sort_unstable();

    let task = SynthTask {
        config: cfg.clone(),
        permutation,
        relevant_positions,
    };
    let train = (0..cfg.num_train).map(|_| task.sample(&mut rng)).collect();
    let eval = (0..cfg.num_eval).map(|_| task.sample(&mut rng)).collect();
    Ok(Dataset { task, train, eval })
}

impl SynthTask {
    fn sample(&self, rng: &mut impl Rng) -> Example {
        let cfg = &self.config;
        let signal = cfg.num_signal();
        let n = cfg.vocab.size();
        let s = rng.random_range(0..signal);
        let mut context: Vec<usize> = (0..cfg.context_len)
            .map(|_| rng.random_range(signal..n))
            .collect();
        for &pos in &self.relevant_positions {
            context[pos] = s;
        }
        if cfg.distractor_noise > 0.0 {
            for &pos in &self.relevant_positions {
                if rng.random_bool(cfg.distractor_noise) {
                    context[pos] = rng.random_range(signal..n);
                }
            }
        }
        Example {
            context,
            target: self.permutation[s],
        }
    }

    fn is_signal(&self, token: usize) -> bool {
        token < self.config.num_signal()
    }

    /// Exact posterior over targets given a context. If any relevant position
    /// still holds a signal token the label is certain; otherwise every signal
    /// token's target is equally likely.
    pub fn posterior(&self, context: &[usize]) -> Vec<f64> {
        let n = self.config.vocab.size();
        let mut post = vec![0.0; n];
        let witness = self
            .relevant_positions
            .iter()
            .map(|&pos| context[pos])
            .find(|&tok| self.is_signal(tok));
        match witness {
            Some(s) => post[self.permutation[s]] = 1.0,
            None => {
                let signal = self.config.num_signal();
                for s in 0..signal {
                    post[self.permutation[s]] = 1.0 / signal as f64;
                }
            }
        }
        post
    }

    /// Expected accuracy of the Bayes-optimal predictor on `items`: the mean
    /// posterior probability of the gold label under the MAP decision.
    pub fn bayes_accuracy(&self, items: &[Example]) -> f64 {
        let total: f64 = items
            .iter()
            .map(|ex| {
                let post = self.posterior(&ex.context);
                let best = post.iter().copied().fold(0.0, f64::max);
                if post[ex.target] == best {
                    best
                } else {
                    0.0
                }
            })
            .sum();
        total / items.len() as f64
    }
}

/// Writes one example per line: space-separated context ids, a tab, the target.
pub fn write_snapshot<W: Write>(items: &[Example], mut out: W) -> std::io::Result<()> {
    for ex in items {
        let ctx: Vec<String> = ex.context.iter().map(|t| t.to_string()).collect();
        writeln!(out, "{}\t{}", ctx.join(" "), ex.target)?;
    }
    Ok(())
}

/// Parses the format produced by [`write_snapshot`].
pub fn read_snapshot<R: BufRead>(input: R) -> Result<Vec<Example>> {
    let mut items = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::InvalidInput(e.to_string()))?;
        let bad = || Error::InvalidInput(format!("malformed snapshot line {}", i + 1));
        let (ctx, target) = line.split_once('\t').ok_or_else(bad)?;
        let context = ctx
            .split(' ')
            .map(|t| t.parse().map_err(|_| bad()))
            .collect::<Result<Vec<usize>>>()?;
        let target = target.parse().map_err(|_| bad())?;
        items.push(Example { context, target });
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn config_validation() {
        let mut cfg = SynthTaskConfig::toy();
        assert!(cfg.validate().is_ok());
        cfg.relevant_set_size = 9;
        assert!(cfg.validate().is_err());
        cfg = SynthTaskConfig::toy();
        cfg.distractor_noise = 1.0;
        assert!(cfg.validate().is_err());
        cfg = SynthTaskConfig::toy();
        cfg.num_eval = 0;
        assert!(synth_generate(&cfg).is_err());
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SynthTaskConfig {
            distractor_noise: 0.3,
            ..SynthTaskConfig::toy()
        };
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        let other = SynthTaskConfig {
            seed: 1,
            ..cfg.clone()
        };
        assert_ne!(
            synth_generate(&cfg).unwrap().train,
            synth_generate(&other).unwrap().train
        );
    }

    #[test]
    fn fully_relevant_noiseless_context_determines_target() {
        let cfg = SynthTaskConfig {
            context_len: 4,
            relevant_set_size: 4,
            ..SynthTaskConfig::toy()
        };
        let data = synth_generate(&cfg).unwrap();
        let mut table: HashMap<Vec<usize>, usize> = HashMap::new();
        for ex in &data.train {
            let prev = table.insert(ex.context.clone(), ex.target);
            assert!(prev.is_none_or(|p| p == ex.target));
        }
        let hits = data
            .eval
            .iter()
            .filter(|ex| table.get(&ex.context) == Some(&ex.target))
            .count();
        assert_eq!(hits, data.eval.len());
        assert_eq!(data.task.bayes_accuracy(&data.eval), 1.0);
    }

    #[test]
    fn noisy_task_has_bayes_accuracy_below_one() {
        let cfg = SynthTaskConfig {
            relevant_set_size: 1,
            distractor_noise: 0.5,
            num_eval: 4000,
            ..SynthTaskConfig::toy()
        };
        let data = synth_generate(&cfg).unwrap();
        let acc = data.task.bayes_accuracy(&data.eval);
        // Expected 0.5 + 0.5 / 8 = 0.5625.
        assert!(acc < 1.0);
        assert!((acc - 0.5625).abs() < 0.03, "{acc}");
    }

    #[test]
    fn relevant_positions_hold_the_signal() {
        let data = synth_generate(&SynthTaskConfig::toy()).unwrap();
        let task = &data.task;
        for ex in data.train.iter().chain(&data.eval) {
            let s = ex.context[task.relevant_positions[0]];
            assert!(s < 8);
            assert_eq!(task.permutation[s], ex.target);
            for (pos, &tok) in ex.context.iter().enumerate() {
                if !task.relevant_positions.contains(&pos) {
                    assert!(tok >= 8);
                }
            }
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let data = synth_generate(&SynthTaskConfig::toy()).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&data.train[..3], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().all(|l| l.split('\t').count() == 2));
        assert_eq!(read_snapshot(&buf[..]).unwrap(), data.train[..3].to_vec());
        assert!(read_snapshot(&b"1 2 3\n"[..]).is_err());
    }
}
