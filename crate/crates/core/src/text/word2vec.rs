//! Skip-gram word embeddings trained with negative sampling.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddingMatrix, Vocab, PAD, PAD_TOKEN};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MAX_EXP: f64 = 6.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipGramConfig {
    /// Maximum context distance; the effective window is resampled per center word.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Vocabulary cutoff; rarer tokens are trained as `UNK`.
    pub min_count: usize,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_count: 2,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-MAX_EXP, MAX_EXP);
    1.0 / (1.0 + (-x).exp())
}

/// Trains input vectors for every `vocab` entry on `corpus`.
///
/// Out-of-vocabulary tokens are mapped to `UNK`, so the `UNK` row is trained
/// from the rare tokens the vocabulary dropped. The `PAD` row stays zero.
pub fn train_word2vec<S: AsRef<str>, R: Rng + ?Sized>(
    corpus: &[Vec<S>],
    vocab: &Vocab,
    dim: usize,
    cfg: &SkipGramConfig,
    rng: &mut R,
) -> Result<EmbeddingMatrix> {
    if dim < 2 {
        return Err(Error::Config(format!("embedding dim must be at least 2, got {dim}")));
    }
    if cfg.window < 1 || cfg.epochs < 1 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config(format!("invalid skip-gram config {cfg:?}")));
    }
    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| {
            s.iter()
                .map(AsRef::as_ref)
                .filter(|t| *t != PAD_TOKEN)
                .map(|t| vocab.id(t))
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect();
    let total_tokens: usize = sentences.iter().map(Vec::len).sum();
    if total_tokens == 0 {
        return Err(Error::Data("skip-gram corpus is empty".into()));
    }

    let n = vocab.len();
    let mut counts = vec![0usize; n];
    for &id in sentences.iter().flatten() {
        counts[id] += 1;
    }
    let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let noise = WeightedIndex::new(&weights)
        .map_err(|e| Error::Data(format!("negative-sampling table: {e}")))?;

    let half = 0.5 / dim as f64;
    let mut input = Matrix::zeros(n, dim);
    for id in 1..n {
        for v in input.row_mut(id) {
            *v = rng.gen_range(-half..half);
        }
    }
    let mut output = Matrix::zeros(n, dim);
    let mut grad_in = vec![0.0; dim];

    let schedule_len = (cfg.epochs * total_tokens) as f64 + 1.0;
    let mut processed = 0usize;
    for _ in 0..cfg.epochs {
        for sentence in &sentences {
            for (pos, &center) in sentence.iter().enumerate() {
                let lr = cfg.learning_rate * (1.0 - processed as f64 / schedule_len).max(1e-4);
                processed += 1;
                let reach = cfg.window - rng.gen_range(0..cfg.window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(sentence.len() - 1);
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let context = sentence[ctx_pos];
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let t = noise.sample(rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let center_row = input.row(center);
                        let out_row = output.row(target);
                        let score: f64 = center_row.iter().zip(out_row).map(|(a, b)| a * b).sum();
                        let g = (label - sigmoid(score)) * lr;
                        for (gi, &o) in grad_in.iter_mut().zip(out_row) {
                            *gi += g * o;
                        }
                        for (o, c) in output.row_mut(target).iter_mut().zip(center_row) {
                            *o += g * c;
                        }
                    }
                    if center != PAD {
                        for (v, g) in input.row_mut(center).iter_mut().zip(&grad_in) {
                            *v += g;
                        }
                    }
                }
            }
        }
    }
    EmbeddingMatrix::new(input)
}
