use serde::{Deserialize, Serialize};

use super::{AttentionMode, BranchParams, HeadParams, Model, ModelConfig, PoolingMode, LOGIT_CLAMP};
use crate::error::{Error, Result};
use crate::numerics::{lrelu_scalar, softmax_unchecked};
use crate::text::{embed_sequence, Embeddings, SequenceMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Question,
    Answer,
}

/// Per-token attention weights for one side of a pair.
///
/// `weights[i]` belongs to `tokens[i]`; padded positions carry exactly 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub side: Side,
    pub tokens: Vec<String>,
    pub weights: Vec<f64>,
}

impl AttentionTrace {
    /// Position of the highest weight (first one on ties).
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &w) in self.weights.iter().enumerate() {
            if best.map_or(true, |b| w > self.weights[b]) {
                best = Some(i);
            }
        }
        best
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Output of the attention layer: weighted states per position plus the trace.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    /// One row per position; padded rows are zero.
    pub states: Vec<Vec<f64>>,
    pub trace: AttentionTrace,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Weights {
    PerToken(Vec<f64>),
    /// `[token][feature]`, each feature column summing to 1 over tokens.
    PerFeature(Vec<Vec<f64>>),
}

impl Weights {
    fn token_weight(&self, t: usize) -> f64 {
        match self {
            Weights::PerToken(w) => w[t],
            Weights::PerFeature(w) => w[t].iter().sum::<f64>() / w[t].len() as f64,
        }
    }
}

/// Intermediates of one branch, indexed by real-token order.
#[derive(Clone, Debug)]
pub(crate) struct BranchCache {
    pub positions: Vec<usize>,
    pub h: Vec<Vec<f64>>,
    pub weights: Weights,
    pub s: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub pre_out: Vec<Vec<f64>>,
    /// For max pooling, which real token supplied each output dimension.
    pub argmax: Vec<usize>,
    pub pooled: Vec<f64>,
}

fn check_width(x: &SequenceMatrix, cfg: &ModelConfig) -> Result<()> {
    if x.width() != cfg.input_dim() {
        return Err(Error::Dimension(format!(
            "token rows have width {}, model expects {}",
            x.width(),
            cfg.input_dim()
        )));
    }
    Ok(())
}

fn attention_cache(x: &SequenceMatrix, branch: &BranchParams, cfg: &ModelConfig) -> Result<(Vec<usize>, Vec<Vec<f64>>, Weights)> {
    check_width(x, cfg)?;
    let positions: Vec<usize> = x.real_positions().collect();
    if positions.is_empty() {
        return Err(Error::Data("sequence has no unmasked tokens".into()));
    }
    let slope = cfg.lrelu_slope;
    let h: Vec<Vec<f64>> = positions.iter().map(|&p| branch.attention.apply(x.rows.row(p))).collect();
    let n = positions.len();
    let weights = match cfg.attention_mode {
        AttentionMode::Scalar => {
            let v = branch
                .scorer
                .as_ref()
                .ok_or_else(|| Error::Dimension("scalar attention needs a scoring vector".into()))?;
            let scores: Vec<f64> = h
                .iter()
                .map(|ht| ht.iter().zip(v).map(|(&hk, vk)| lrelu_scalar(hk, slope) * vk).sum())
                .collect();
            Weights::PerToken(softmax_unchecked(&scores))
        }
        AttentionMode::Featurewise => {
            let mut w = vec![vec![0.0; cfg.att_dim]; n];
            let mut column = vec![0.0; n];
            for k in 0..cfg.att_dim {
                for (t, c) in column.iter_mut().enumerate() {
                    *c = lrelu_scalar(h[t][k], slope);
                }
                for (t, p) in softmax_unchecked(&column).into_iter().enumerate() {
                    w[t][k] = p;
                }
            }
            Weights::PerFeature(w)
        }
        AttentionMode::Uniform => Weights::PerToken(vec![1.0 / n as f64; n]),
    };
    Ok((positions, h, weights))
}

fn weighted_states(h: &[Vec<f64>], weights: &Weights) -> Vec<Vec<f64>> {
    h.iter()
        .enumerate()
        .map(|(t, ht)| match weights {
            Weights::PerToken(w) => ht.iter().map(|v| w[t] * v).collect(),
            Weights::PerFeature(w) => ht.iter().zip(&w[t]).map(|(v, wk)| wk * v).collect(),
        })
        .collect()
}

fn trace_for(x: &SequenceMatrix, positions: &[usize], weights: &Weights, side: Side) -> AttentionTrace {
    let mut full = vec![0.0; x.len()];
    for (t, &p) in positions.iter().enumerate() {
        full[p] = weights.token_weight(t);
    }
    AttentionTrace {
        side,
        tokens: x.tokens.clone(),
        weights: full,
    }
}

/// The attention layer alone.
pub fn attend(x: &SequenceMatrix, branch: &BranchParams, cfg: &ModelConfig, side: Side) -> Result<Attention> {
    let (positions, h, weights) = attention_cache(x, branch, cfg)?;
    let s = weighted_states(&h, &weights);
    let mut states = vec![vec![0.0; cfg.att_dim]; x.len()];
    for (t, &p) in positions.iter().enumerate() {
        states[p].clone_from(&s[t]);
    }
    let trace = trace_for(x, &positions, &weights, side);
    Ok(Attention { states, trace })
}

pub(crate) fn branch_forward(x: &SequenceMatrix, branch: &BranchParams, cfg: &ModelConfig) -> Result<BranchCache> {
    let (positions, h, weights) = attention_cache(x, branch, cfg)?;
    let s = weighted_states(&h, &weights);
    let u: Vec<Vec<f64>> = s
        .iter()
        .map(|st| branch.hidden.apply(st).into_iter().map(f64::tanh).collect())
        .collect();
    let pre_out: Vec<Vec<f64>> = u.iter().map(|ut| branch.output.apply(ut)).collect();
    let slope = cfg.lrelu_slope;
    let width = cfg.hidden2_dim;
    let mut pooled = vec![0.0; width];
    let mut argmax = Vec::new();
    match cfg.pooling_mode {
        PoolingMode::Max => {
            argmax = vec![0; width];
            for k in 0..width {
                let mut best = lrelu_scalar(pre_out[0][k], slope);
                for (t, pt) in pre_out.iter().enumerate().skip(1) {
                    let z = lrelu_scalar(pt[k], slope);
                    if z > best {
                        best = z;
                        argmax[k] = t;
                    }
                }
                pooled[k] = best;
            }
        }
        PoolingMode::Sum => {
            for pt in &pre_out {
                for (acc, &v) in pooled.iter_mut().zip(pt) {
                    *acc += lrelu_scalar(v, slope);
                }
            }
        }
    }
    Ok(BranchCache {
        positions,
        h,
        weights,
        s,
        u,
        pre_out,
        argmax,
        pooled,
    })
}

/// Runs one branch encoder, returning its fixed-width output and the attention trace.
pub fn encode_branch(
    x: &SequenceMatrix,
    branch: &BranchParams,
    cfg: &ModelConfig,
    side: Side,
) -> Result<(Vec<f64>, AttentionTrace)> {
    let cache = branch_forward(x, branch, cfg)?;
    let trace = trace_for(x, &cache.positions, &cache.weights, side);
    Ok((cache.pooled, trace))
}

/// Concatenated question and answer branch outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct JointVector(pub Vec<f64>);

#[derive(Clone, Debug)]
pub(crate) struct HeadCache {
    pub joint: Vec<f64>,
    pub hidden: Vec<f64>,
    /// Which logits were clamped (their gradient is zero).
    pub clamped: [bool; 2],
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

pub(crate) fn head_forward(qv: &[f64], av: &[f64], head: &HeadParams, cfg: &ModelConfig) -> Result<HeadCache> {
    if qv.len() != cfg.hidden2_dim || av.len() != cfg.hidden2_dim {
        return Err(Error::Dimension(format!(
            "branch vectors have widths {} and {}, head expects {}",
            qv.len(),
            av.len(),
            cfg.hidden2_dim
        )));
    }
    let joint: Vec<f64> = qv.iter().chain(av).copied().collect();
    let hidden: Vec<f64> = head.hidden.apply(&joint).into_iter().map(f64::tanh).collect();
    let raw = head.output.apply(&hidden);
    let mut logits = [0.0; 2];
    let mut clamped = [false; 2];
    for k in 0..2 {
        logits[k] = raw[k].clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        clamped[k] = raw[k].abs() > LOGIT_CLAMP;
    }
    let p = softmax_unchecked(&logits);
    if !(p[0].is_finite() && p[1].is_finite()) {
        return Err(Error::NumericDomain("non-finite relevance score".into()));
    }
    Ok(HeadCache {
        joint,
        hidden,
        clamped,
        logits,
        probs: [p[0], p[1]],
    })
}

/// Scores a pair of branch vectors; returns the relevant-class probability.
pub fn score_pair(qv: &[f64], av: &[f64], head: &HeadParams, cfg: &ModelConfig) -> Result<(f64, JointVector)> {
    let cache = head_forward(qv, av, head, cfg)?;
    Ok((cache.probs[1], JointVector(cache.joint)))
}

/// Both sides of a candidate pair. Answer tokens carry overlap flags; question tokens only with `question_overlap`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedPair {
    pub question: SequenceMatrix,
    pub answer: SequenceMatrix,
    pub label: u8,
}

pub fn encode_pair<S: AsRef<str>, T: AsRef<str>>(
    q_tokens: &[S],
    a_tokens: &[T],
    label: u8,
    cfg: &ModelConfig,
    embeddings: &Embeddings,
) -> Result<EncodedPair> {
    if q_tokens.is_empty() {
        return Err(Error::Data("question has no tokens".into()));
    }
    if a_tokens.is_empty() {
        return Err(Error::Data("answer has no tokens".into()));
    }
    if label > 1 {
        return Err(Error::Data(format!("label must be 0 or 1, got {label}")));
    }
    let question = if cfg.question_overlap {
        embed_sequence(q_tokens, embeddings, a_tokens, cfg.max_q_len)?
    } else {
        embed_sequence(q_tokens, embeddings, &[] as &[&str], cfg.max_q_len)?
    };
    let answer = embed_sequence(a_tokens, embeddings, q_tokens, cfg.max_a_len)?;
    Ok(EncodedPair { question, answer, label })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub relevance: f64,
    pub question_trace: AttentionTrace,
    pub answer_trace: AttentionTrace,
}

impl Model {
    pub fn predict_encoded(&self, pair: &EncodedPair) -> Result<Prediction> {
        let cfg = &self.config;
        let q = branch_forward(&pair.question, &self.params.question, cfg)?;
        let a = branch_forward(&pair.answer, &self.params.answer, cfg)?;
        let head = head_forward(&q.pooled, &a.pooled, &self.params.head, cfg)?;
        Ok(Prediction {
            relevance: head.probs[1],
            question_trace: trace_for(&pair.question, &q.positions, &q.weights, Side::Question),
            answer_trace: trace_for(&pair.answer, &a.positions, &a.weights, Side::Answer),
        })
    }
}

/// Full pipeline from tokens to relevance probability and both attention traces.
pub fn forward<S: AsRef<str>, T: AsRef<str>>(
    q_tokens: &[S],
    a_tokens: &[T],
    model: &Model,
    embeddings: &Embeddings,
) -> Result<Prediction> {
    model.check_compatible(embeddings)?;
    let pair = encode_pair(q_tokens, a_tokens, 0, &model.config, embeddings)?;
    model.predict_encoded(&pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelParams};
    use crate::numerics::Matrix;
    use crate::text::{EmbeddingMatrix, Vocab, PAD_TOKEN};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(mode: AttentionMode, pooling: PoolingMode) -> ModelConfig {
        ModelConfig {
            emb_dim: 4,
            att_dim: 5,
            hidden1_dim: 3,
            hidden2_dim: 4,
            head_hidden_dim: 6,
            attention_mode: mode,
            pooling_mode: pooling,
            ..ModelConfig::with_emb_dim(4)
        }
    }

    fn embeddings(seed: u64) -> Embeddings {
        let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let vocab = Vocab::from_tokens(words, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = vec![vec![0.0; 4]];
        for _ in 1..vocab.len() {
            rows.push((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        }
        Embeddings::new(vocab, EmbeddingMatrix::new(Matrix::from_rows(&rows).unwrap()).unwrap()).unwrap()
    }

    fn model(c: ModelConfig, seed: u64) -> Model {
        let p = init_params(&c, 4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        Model::new(c, p).unwrap()
    }

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    const ALL_MODES: [AttentionMode; 3] = [AttentionMode::Scalar, AttentionMode::Featurewise, AttentionMode::Uniform];

    #[test]
    fn single_token_gets_full_weight() {
        let e = embeddings(1);
        for mode in ALL_MODES {
            let m = model(cfg(mode, PoolingMode::Max), 2);
            let seq = embed_sequence(&["w3"], &e, &["w3"], 10).unwrap();
            let att = attend(&seq, &m.params.answer, &m.config, Side::Answer).unwrap();
            assert!((att.trace.weights[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicate_tokens_share_weight() {
        let e = embeddings(1);
        let m = model(cfg(AttentionMode::Scalar, PoolingMode::Max), 3);
        let seq = embed_sequence(&words("w1 w2 w1"), &e, &words("w9"), 10).unwrap();
        let att = attend(&seq, &m.params.answer, &m.config, Side::Answer).unwrap();
        assert_eq!(att.trace.weights[0], att.trace.weights[2]);
    }

    #[test]
    fn padding_leaves_attention_unchanged() {
        let e = embeddings(1);
        for mode in ALL_MODES {
            let m = model(cfg(mode, PoolingMode::Sum), 3);
            let plain = embed_sequence(&words("w1 w2 w5"), &e, &words("w2"), 10).unwrap();
            let mut padded_tokens = words("w1 w2 w5");
            padded_tokens.push(PAD_TOKEN.into());
            let padded = embed_sequence(&padded_tokens, &e, &words("w2"), 10).unwrap();
            let a = attend(&plain, &m.params.answer, &m.config, Side::Answer).unwrap();
            let b = attend(&padded, &m.params.answer, &m.config, Side::Answer).unwrap();
            assert_eq!(&b.trace.weights[..3], a.trace.weights.as_slice());
            assert_eq!(b.trace.weights[3], 0.0);
            assert_eq!(&b.states[..3], a.states.as_slice());
        }
    }

    #[test]
    fn all_masked_is_rejected() {
        let e = embeddings(1);
        let m = model(cfg(AttentionMode::Scalar, PoolingMode::Max), 3);
        let seq = embed_sequence(&[PAD_TOKEN, PAD_TOKEN], &e, &["w1"], 10).unwrap();
        assert!(matches!(
            attend(&seq, &m.params.answer, &m.config, Side::Answer),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn branch_width_is_length_independent() {
        let e = embeddings(1);
        let m = model(cfg(AttentionMode::Featurewise, PoolingMode::Max), 3);
        for len in [1, 5, 50] {
            let toks: Vec<String> = (0..len).map(|i| format!("w{}", i % 20)).collect();
            let seq = embed_sequence(&toks, &e, &words("w0"), 100).unwrap();
            let (v, _) = encode_branch(&seq, &m.params.answer, &m.config, Side::Answer).unwrap();
            assert_eq!(v.len(), 4);
        }
    }

    #[test]
    fn single_token_sum_equals_max() {
        let e = embeddings(1);
        let seq = embed_sequence(&["w7"], &e, &["w7"], 10).unwrap();
        let max = model(cfg(AttentionMode::Scalar, PoolingMode::Max), 8);
        let mut sum = max.clone();
        sum.config.pooling_mode = PoolingMode::Sum;
        let (a, _) = encode_branch(&seq, &max.params.answer, &max.config, Side::Answer).unwrap();
        let (b, _) = encode_branch(&seq, &sum.params.answer, &sum.config, Side::Answer).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn permutation_invariance() {
        let e = embeddings(5);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for mode in ALL_MODES {
            for pooling in [PoolingMode::Max, PoolingMode::Sum] {
                let m = model(cfg(mode, pooling), rng.gen());
                let toks: Vec<String> = (0..7).map(|_| format!("w{}", rng.gen_range(0..20))).collect();
                let mut shuffled = toks.clone();
                shuffled.reverse();
                shuffled.swap(0, 3);
                let other = words("w1 w4 w9");
                let s1 = embed_sequence(&toks, &e, &other, 20).unwrap();
                let s2 = embed_sequence(&shuffled, &e, &other, 20).unwrap();
                let (v1, _) = encode_branch(&s1, &m.params.answer, &m.config, Side::Answer).unwrap();
                let (v2, _) = encode_branch(&s2, &m.params.answer, &m.config, Side::Answer).unwrap();
                for (a, b) in v1.iter().zip(&v2) {
                    assert!((a - b).abs() < 1e-12, "{mode:?}/{pooling:?}");
                }
            }
        }
    }

    #[test]
    fn head_contracts() {
        let c = cfg(AttentionMode::Scalar, PoolingMode::Max);
        let m = model(c.clone(), 1);
        let (p, joint) = score_pair(&[0.1, 0.2, 0.3, 0.4], &[0.5, -0.1, 0.0, 1.0], &m.params.head, &c).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert_eq!(joint.0.len(), 8);
        let cache = head_forward(&[0.1; 4], &[0.2; 4], &m.params.head, &c).unwrap();
        assert!((cache.probs[0] + cache.probs[1] - 1.0).abs() < 1e-9);

        let zeros = ModelParams::zeros(&c);
        let (p, _) = score_pair(&[0.3; 4], &[0.9; 4], &zeros.head, &c).unwrap();
        assert_eq!(p, 0.5);
        assert!(matches!(score_pair(&[0.0; 3], &[0.0; 4], &zeros.head, &c), Err(Error::Dimension(_))));
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let e = embeddings(2);
        let m = model(cfg(AttentionMode::Scalar, PoolingMode::Max), 4);
        let a = forward(&words("w1 w2"), &words("w2 w3 w4"), &m, &e).unwrap();
        let b = forward(&words("w1 w2"), &words("w2 w3 w4"), &m, &e).unwrap();
        assert_eq!(a, b);
        assert!(a.relevance > 0.0 && a.relevance < 1.0);
        assert_eq!(a.answer_trace.weights.len(), 3);
        assert!((a.answer_trace.total() - 1.0).abs() < 1e-6);
        assert!(matches!(forward::<String, String>(&[], &words("w1"), &m, &e), Err(Error::Data(_))));
    }

    #[test]
    fn incompatible_embeddings() {
        let m = model(ModelConfig::with_emb_dim(3), 1);
        let e = embeddings(1);
        assert!(matches!(forward(&["w1"], &["w2"], &m, &e), Err(Error::Incompatible(_))));
    }

    #[test]
    fn question_flags_follow_config() {
        let e = embeddings(3);
        let base = cfg(AttentionMode::Scalar, PoolingMode::Max);
        let flag_col = |c: &ModelConfig| {
            let pair = encode_pair(&words("w1 w2"), &words("w2 w5"), 1, c, &e).unwrap();
            let q: Vec<f64> = (0..2).map(|t| pair.question.rows.get(t, c.emb_dim)).collect();
            let a: Vec<f64> = (0..2).map(|t| pair.answer.rows.get(t, c.emb_dim)).collect();
            (q, a)
        };
        assert_eq!(flag_col(&base), (vec![0.0, 0.0], vec![1.0, 0.0]));
        let both = ModelConfig { question_overlap: true, ..base };
        assert_eq!(flag_col(&both), (vec![0.0, 1.0], vec![1.0, 0.0]));
    }
}
