//! Hand-derived gradients of the pointwise cross-entropy loss.

use std::borrow::Borrow;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forward::{branch_forward, head_forward, BranchCache, EncodedPair, HeadCache, Weights};
use super::{AttentionMode, BranchParams, Model, ModelConfig, ModelParams, PoolingMode};
use crate::error::{Error, Result};
use crate::numerics::{lrelu_grad_scalar, lrelu_scalar, softmax_backprop};
use crate::text::{SequenceMatrix, PAD};

/// Instances per gradient work unit. The reduction order over units is fixed,
/// so results do not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Loss multiplier for instances labelled relevant.
    pub positive_weight: f64,
    /// Also return gradients for the embedding rows that were looked up.
    pub embedding_grads: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            positive_weight: 1.0,
            embedding_grads: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub params: ModelParams,
    /// Per vocabulary row, over the embedding columns only.
    pub embeddings: Option<BTreeMap<usize, Vec<f64>>>,
}

impl Gradients {
    fn zeros(cfg: &ModelConfig, with_embeddings: bool) -> Self {
        Self {
            params: ModelParams::zeros(cfg),
            embeddings: with_embeddings.then(BTreeMap::new),
        }
    }

    fn add(&mut self, other: &Gradients) {
        for ((_, a), b) in self.params.tensors_mut().into_iter().zip(other.params.tensors()) {
            for (x, y) in a.iter_mut().zip(b.values) {
                *x += y;
            }
        }
        if let (Some(mine), Some(theirs)) = (&mut self.embeddings, &other.embeddings) {
            for (id, g) in theirs {
                let row = mine.entry(*id).or_insert_with(|| vec![0.0; g.len()]);
                for (x, y) in row.iter_mut().zip(g) {
                    *x += y;
                }
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for (_, t) in self.params.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
        if let Some(map) = &mut self.embeddings {
            for row in map.values_mut() {
                row.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }
}

/// Mean loss over `batch` and its gradient with respect to every parameter.
pub fn backward<P: Borrow<EncodedPair> + Sync>(batch: &[P], model: &Model, loss: &LossConfig) -> Result<(Gradients, f64)> {
    if batch.is_empty() {
        return Err(Error::Data("cannot compute gradients of an empty batch".into()));
    }
    let partials: Vec<Result<(Gradients, f64)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Gradients::zeros(&model.config, loss.embedding_grads);
            let mut total = 0.0;
            for pair in chunk {
                total += instance_backward(pair.borrow(), model, loss, &mut acc)?;
            }
            Ok((acc, total))
        })
        .collect();

    let mut grads = Gradients::zeros(&model.config, loss.embedding_grads);
    let mut total = 0.0;
    for part in partials {
        let (g, l) = part?;
        grads.add(&g);
        total += l;
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((grads, total / n))
}

/// Binary cross-entropy of one pair; gradients are accumulated into `acc`.
fn instance_backward(pair: &EncodedPair, model: &Model, loss: &LossConfig, acc: &mut Gradients) -> Result<f64> {
    let cfg = &model.config;
    let params = &model.params;
    if pair.label > 1 {
        return Err(Error::Data(format!("label must be 0 or 1, got {}", pair.label)));
    }
    let q = branch_forward(&pair.question, &params.question, cfg)?;
    let a = branch_forward(&pair.answer, &params.answer, cfg)?;
    let head = head_forward(&q.pooled, &a.pooled, &params.head, cfg)?;

    let y = usize::from(pair.label);
    let weight = if y == 1 { loss.positive_weight } else { 1.0 };
    let log_norm = log_sum_exp(&head.logits);
    let value = weight * (log_norm - head.logits[y]);

    let (dq, da) = head_backward(&head, y, weight, model, acc);
    let emb_dim = cfg.emb_dim;
    let dxq = branch_backward(&pair.question, &q, &params.question, &mut acc.params.question, cfg, &dq);
    let dxa = branch_backward(&pair.answer, &a, &params.answer, &mut acc.params.answer, cfg, &da);
    if let Some(map) = &mut acc.embeddings {
        for (seq, cache, dx) in [(&pair.question, &q, dxq), (&pair.answer, &a, dxa)] {
            for (t, &p) in cache.positions.iter().enumerate() {
                let id = seq.ids[p];
                if id == PAD {
                    continue;
                }
                let row = map.entry(id).or_insert_with(|| vec![0.0; emb_dim]);
                for (r, g) in row.iter_mut().zip(&dx[t][..emb_dim]) {
                    *r += g;
                }
            }
        }
    }
    Ok(value)
}

fn log_sum_exp(logits: &[f64; 2]) -> f64 {
    let m = logits[0].max(logits[1]);
    m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln()
}

fn head_backward(head: &HeadCache, y: usize, weight: f64, model: &Model, acc: &mut Gradients) -> (Vec<f64>, Vec<f64>) {
    let params = &model.params.head;
    let grads = &mut acc.params.head;
    let mut dlogits = [0.0; 2];
    for k in 0..2 {
        let target = if k == y { 1.0 } else { 0.0 };
        dlogits[k] = if head.clamped[k] { 0.0 } else { weight * (head.probs[k] - target) };
    }
    let dhidden = params.output.backprop(&head.hidden, &dlogits, &mut grads.output);
    let dpre: Vec<f64> = dhidden.iter().zip(&head.hidden).map(|(d, g)| d * (1.0 - g * g)).collect();
    let djoint = params.hidden.backprop(&head.joint, &dpre, &mut grads.hidden);
    let width = model.config.hidden2_dim;
    (djoint[..width].to_vec(), djoint[width..].to_vec())
}

/// Backpropagates `d_pooled` through one branch; returns `dL/dx` per real token.
fn branch_backward(
    x: &SequenceMatrix,
    cache: &BranchCache,
    params: &BranchParams,
    grads: &mut BranchParams,
    cfg: &ModelConfig,
    d_pooled: &[f64],
) -> Vec<Vec<f64>> {
    let n = cache.positions.len();
    let slope = cfg.lrelu_slope;
    let width = cfg.hidden2_dim;

    let mut dz = vec![vec![0.0; width]; n];
    match cfg.pooling_mode {
        PoolingMode::Max => {
            for k in 0..width {
                dz[cache.argmax[k]][k] += d_pooled[k];
            }
        }
        PoolingMode::Sum => {
            for row in &mut dz {
                row.copy_from_slice(d_pooled);
            }
        }
    }

    let mut ds = Vec::with_capacity(n);
    for t in 0..n {
        let dpre: Vec<f64> = dz[t]
            .iter()
            .zip(&cache.pre_out[t])
            .map(|(d, &p)| d * lrelu_grad_scalar(p, slope))
            .collect();
        let du = params.output.backprop(&cache.u[t], &dpre, &mut grads.output);
        let dpre_hidden: Vec<f64> = du.iter().zip(&cache.u[t]).map(|(d, u)| d * (1.0 - u * u)).collect();
        ds.push(params.hidden.backprop(&cache.s[t], &dpre_hidden, &mut grads.hidden));
    }

    let mut dh: Vec<Vec<f64>> = vec![vec![0.0; cfg.att_dim]; n];
    match (&cache.weights, cfg.attention_mode) {
        (Weights::PerToken(w), AttentionMode::Scalar) => {
            let v = params.scorer.as_ref().expect("scalar attention has a scorer");
            let gv = grads.scorer.as_mut().expect("scalar attention has a scorer");
            let dw: Vec<f64> = (0..n)
                .map(|t| ds[t].iter().zip(&cache.h[t]).map(|(d, h)| d * h).sum())
                .collect();
            let de = softmax_backprop(w, &dw);
            for t in 0..n {
                for k in 0..cfg.att_dim {
                    let h = cache.h[t][k];
                    gv[k] += de[t] * lrelu_scalar(h, slope);
                    dh[t][k] = w[t] * ds[t][k] + de[t] * v[k] * lrelu_grad_scalar(h, slope);
                }
            }
        }
        (Weights::PerToken(w), _) => {
            for t in 0..n {
                for k in 0..cfg.att_dim {
                    dh[t][k] = w[t] * ds[t][k];
                }
            }
        }
        (Weights::PerFeature(w), _) => {
            let mut col_w = vec![0.0; n];
            let mut col_dw = vec![0.0; n];
            for k in 0..cfg.att_dim {
                for t in 0..n {
                    col_w[t] = w[t][k];
                    col_dw[t] = ds[t][k] * cache.h[t][k];
                }
                let de = softmax_backprop(&col_w, &col_dw);
                for t in 0..n {
                    let h = cache.h[t][k];
                    dh[t][k] = w[t][k] * ds[t][k] + de[t] * lrelu_grad_scalar(h, slope);
                }
            }
        }
    }

    cache
        .positions
        .iter()
        .zip(&dh)
        .map(|(&p, dht)| params.attention.backprop(x.rows.row(p), dht, &mut grads.attention))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{encode_pair, init_params, Model};
    use crate::numerics::{grad_check, Matrix};
    use crate::text::{EmbeddingMatrix, Embeddings, Vocab};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check_cfg(mode: AttentionMode, pooling: PoolingMode) -> ModelConfig {
        ModelConfig {
            emb_dim: 8,
            att_dim: 6,
            hidden1_dim: 6,
            hidden2_dim: 6,
            head_hidden_dim: 8,
            attention_mode: mode,
            pooling_mode: pooling,
            question_overlap: true,
            ..ModelConfig::with_emb_dim(8)
        }
    }

    fn embeddings(rng: &mut ChaCha8Rng, dim: usize) -> Embeddings {
        let vocab = Vocab::from_tokens((0..12).map(|i| format!("w{i}")), 1).unwrap();
        let mut rows = vec![vec![0.0; dim]];
        for _ in 1..vocab.len() {
            rows.push((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
        }
        Embeddings::new(vocab, EmbeddingMatrix::new(Matrix::from_rows(&rows).unwrap()).unwrap()).unwrap()
    }

    fn random_batch(rng: &mut ChaCha8Rng, cfg: &ModelConfig, e: &Embeddings, n: usize) -> Vec<EncodedPair> {
        (0..n)
            .map(|_| {
                let ql = rng.gen_range(1..=6);
                let al = rng.gen_range(1..=6);
                let q: Vec<String> = (0..ql).map(|_| format!("w{}", rng.gen_range(0..14))).collect();
                let a: Vec<String> = (0..al).map(|_| format!("w{}", rng.gen_range(0..14))).collect();
                encode_pair(&q, &a, rng.gen_range(0..2), cfg, e).unwrap()
            })
            .collect()
    }

    fn mean_loss(model: &Model, batch: &[EncodedPair], loss: &LossConfig) -> f64 {
        backward(batch, model, loss).unwrap().1
    }

    fn check_model(mode: AttentionMode, pooling: PoolingMode, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = check_cfg(mode, pooling);
        let e = embeddings(&mut rng, 8);
        let params = init_params(&cfg, 6, &mut rng).unwrap();
        let model = Model::new(cfg, params).unwrap();
        let batch = random_batch(&mut rng, &model.config, &e, 3);
        let loss = LossConfig::default();
        let (grads, _) = backward(&batch, &model, &loss).unwrap();
        let mut probe = model.clone();
        grad_check(
            |flat| {
                probe.params.assign_flat(flat).unwrap();
                mean_loss(&probe, &batch, &loss)
            },
            &model.params.to_flat(),
            &grads.params.to_flat(),
            1e-5,
        )
        .unwrap()
        .max_relative_error
    }

    #[test]
    fn gradients_match_finite_differences() {
        for mode in [AttentionMode::Scalar, AttentionMode::Featurewise, AttentionMode::Uniform] {
            for pooling in [PoolingMode::Max, PoolingMode::Sum] {
                let err = check_model(mode, pooling, 17);
                assert!(err < 1e-4, "{mode:?}/{pooling:?}: {err}");
            }
        }
    }

    #[test]
    fn embedding_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let cfg = check_cfg(AttentionMode::Scalar, PoolingMode::Sum);
        let e = embeddings(&mut rng, 8);
        let model = Model::new(cfg.clone(), init_params(&cfg, 6, &mut rng).unwrap()).unwrap();
        let q: Vec<String> = ["w1", "w2", "w3"].map(String::from).to_vec();
        let a: Vec<String> = ["w3", "w4", "w13"].map(String::from).to_vec();
        let pair = encode_pair(&q, &a, 1, &cfg, &e).unwrap();
        let loss = LossConfig { embedding_grads: true, ..Default::default() };
        let (grads, _) = backward(std::slice::from_ref(&pair), &model, &loss).unwrap();
        let emb_grads = grads.embeddings.unwrap();
        let ids: Vec<usize> = emb_grads.keys().copied().collect();
        assert!(ids.contains(&e.vocab.id("w13")), "OOV maps to UNK row");

        let mut flat = Vec::new();
        let mut analytic = Vec::new();
        for &id in &ids {
            flat.extend_from_slice(e.table.row(id));
            analytic.extend_from_slice(&emb_grads[&id]);
        }
        let rebuild = |flat: &[f64]| {
            let mut rows: Vec<Vec<f64>> = (0..e.table.len()).map(|i| e.table.row(i).to_vec()).collect();
            for (j, &id) in ids.iter().enumerate() {
                rows[id].copy_from_slice(&flat[j * 8..(j + 1) * 8]);
            }
            Embeddings::new(
                e.vocab.clone(),
                EmbeddingMatrix::new(Matrix::from_rows(&rows).unwrap()).unwrap(),
            )
            .unwrap()
        };
        let r = grad_check(
            |flat| {
                let e2 = rebuild(flat);
                let p = encode_pair(&q, &a, 1, &cfg, &e2).unwrap();
                mean_loss(&model, std::slice::from_ref(&p), &LossConfig::default())
            },
            &flat,
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn duplicated_instance_doubles_contribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = check_cfg(AttentionMode::Scalar, PoolingMode::Max);
        let e = embeddings(&mut rng, 8);
        let model = Model::new(cfg.clone(), init_params(&cfg, 6, &mut rng).unwrap()).unwrap();
        let batch = random_batch(&mut rng, &cfg, &e, 2);
        let loss = LossConfig::default();
        let (g0, _) = backward(&batch[..1], &model, &loss).unwrap();
        let (g1, _) = backward(&batch[1..], &model, &loss).unwrap();
        let tripled = vec![batch[0].clone(), batch[0].clone(), batch[1].clone()];
        let (g, _) = backward(&tripled, &model, &loss).unwrap();
        let expect: Vec<f64> = g0
            .params
            .to_flat()
            .iter()
            .zip(g1.params.to_flat())
            .map(|(a, b)| (2.0 * a + b) / 3.0)
            .collect();
        for (x, y) in g.params.to_flat().iter().zip(expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn uninformed_prediction_costs_ln2() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = check_cfg(AttentionMode::Scalar, PoolingMode::Max);
        let e = embeddings(&mut rng, 8);
        let mut params = init_params(&cfg, 6, &mut rng).unwrap();
        params.head = ModelParams::zeros(&cfg).head;
        let model = Model::new(cfg.clone(), params).unwrap();
        for label in [0, 1] {
            let pair = encode_pair(&["w1"], &["w2", "w3"], label, &cfg, &e).unwrap();
            let (_, l) = backward(&[pair], &model, &LossConfig::default()).unwrap();
            assert!((l - 2f64.ln()).abs() < 1e-15);
        }
        assert!(matches!(backward(&[] as &[EncodedPair], &model, &LossConfig::default()), Err(Error::Data(_))));
    }

    #[test]
    fn reduction_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = check_cfg(AttentionMode::Featurewise, PoolingMode::Max);
        let e = embeddings(&mut rng, 8);
        let model = Model::new(cfg.clone(), init_params(&cfg, 6, &mut rng).unwrap()).unwrap();
        let batch = random_batch(&mut rng, &cfg, &e, 37);
        let a = backward(&batch, &model, &LossConfig::default()).unwrap();
        let b = backward(&batch, &model, &LossConfig::default()).unwrap();
        assert_eq!(a.1.to_bits(), b.1.to_bits());
        assert_eq!(a.0, b.0);
    }
}
