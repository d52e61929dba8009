//! The twin-branch attention ranker.
//!
//! Each side (question, answer) runs its own encoder:
//!
//! ```text
//! x_t  = [embedding | overlap flag]
//! h_t  = x_t W_att + b_att
//! a_t  = lrelu(h_t)
//! w    = softmax over real tokens of (a_t . v)        scalar mode
//!        softmax over real tokens per feature of a_t   featurewise mode
//! s_t  = w_t * h_t
//! u_t  = tanh(s_t W_1 + b_1)
//! z_t  = lrelu(u_t W_2 + b_2)
//! out  = max_t z_t  (or sum_t z_t)
//! ```
//!
//! The head concatenates both branch outputs, applies a tanh layer, then a
//! two-way softmax whose second entry is the relevance probability.

mod backward;
mod checkpoint;
mod forward;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{init_bound, init_uniform, DenseLayer};
use crate::text::Embeddings;

pub use backward::{backward, Gradients, LossConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{
    attend, encode_branch, encode_pair, forward, score_pair, Attention, AttentionTrace, EncodedPair,
    JointVector, Prediction, Side,
};

/// Logits are clamped to this magnitude before the output softmax.
pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// One weight per token from a learned scoring vector.
    Scalar,
    /// Softmax across tokens taken separately for every feature.
    Featurewise,
    /// Every real token gets `1/n`; the no-attention ablation.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    Max,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub emb_dim: usize,
    pub att_dim: usize,
    pub hidden1_dim: usize,
    pub hidden2_dim: usize,
    pub head_hidden_dim: usize,
    pub lrelu_slope: f64,
    pub attention_mode: AttentionMode,
    pub pooling_mode: PoolingMode,
    pub max_q_len: usize,
    pub max_a_len: usize,
    /// Also flag question tokens that occur in the answer. Off: the question's flag column stays 0.
    #[serde(default)]
    pub question_overlap: bool,
}

impl ModelConfig {
    pub const DEFAULT_LRELU_SLOPE: f64 = 0.01002;
    pub const DEFAULT_MAX_Q_LEN: usize = 40;
    pub const DEFAULT_MAX_A_LEN: usize = 1000;

    /// Every hidden width equal to the embedding width.
    pub fn with_emb_dim(emb_dim: usize) -> Self {
        Self {
            emb_dim,
            att_dim: emb_dim,
            hidden1_dim: emb_dim,
            hidden2_dim: emb_dim,
            head_hidden_dim: emb_dim,
            lrelu_slope: Self::DEFAULT_LRELU_SLOPE,
            attention_mode: AttentionMode::Scalar,
            pooling_mode: PoolingMode::Max,
            max_q_len: Self::DEFAULT_MAX_Q_LEN,
            max_a_len: Self::DEFAULT_MAX_A_LEN,
            question_overlap: false,
        }
    }

    /// Width of a token row: embedding plus the overlap flag.
    pub fn input_dim(&self) -> usize {
        self.emb_dim + 1
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("emb_dim", self.emb_dim),
            ("att_dim", self.att_dim),
            ("hidden1_dim", self.hidden1_dim),
            ("hidden2_dim", self.hidden2_dim),
            ("head_hidden_dim", self.head_hidden_dim),
            ("max_q_len", self.max_q_len),
            ("max_a_len", self.max_a_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(self.lrelu_slope > 0.0 && self.lrelu_slope < 1.0) {
            return Err(Error::Config(format!(
                "lrelu slope must lie in (0,1), got {}",
                self.lrelu_slope
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchParams {
    pub attention: DenseLayer,
    /// Attention scoring vector `v`; present only in scalar mode.
    pub scorer: Option<Vec<f64>>,
    pub hidden: DenseLayer,
    pub output: DenseLayer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub hidden: DenseLayer,
    pub output: DenseLayer,
}

/// All trainable weights. Gradients use the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub question: BranchParams,
    pub answer: BranchParams,
    pub head: HeadParams,
}

impl BranchParams {
    fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            attention: DenseLayer::zeros(cfg.input_dim(), cfg.att_dim),
            scorer: (cfg.attention_mode == AttentionMode::Scalar).then(|| vec![0.0; cfg.att_dim]),
            hidden: DenseLayer::zeros(cfg.att_dim, cfg.hidden1_dim),
            output: DenseLayer::zeros(cfg.hidden1_dim, cfg.hidden2_dim),
        }
    }

    fn random<R: Rng + ?Sized>(cfg: &ModelConfig, bound: f64, rng: &mut R) -> Result<Self> {
        let mut layer = |i, o| -> Result<DenseLayer> {
            Ok(DenseLayer::new(init_uniform(i, o, bound, rng)?, vec![0.0; o])?)
        };
        let attention = layer(cfg.input_dim(), cfg.att_dim)?;
        let hidden = layer(cfg.att_dim, cfg.hidden1_dim)?;
        let output = layer(cfg.hidden1_dim, cfg.hidden2_dim)?;
        let scorer = match cfg.attention_mode {
            AttentionMode::Scalar => Some(init_uniform(1, cfg.att_dim, bound, rng)?.as_slice().to_vec()),
            _ => None,
        };
        Ok(Self {
            attention,
            scorer,
            hidden,
            output,
        })
    }
}

/// A named view of one parameter tensor.
#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub values: &'a [f64],
}

macro_rules! branch_tensors {
    ($out:ident, $b:expr, $prefix:literal, $view:ident, $dense:ident) => {{
        $dense!($out, $b.attention, concat!($prefix, ".attention"));
        if let Some(v) = $view!($b.scorer) {
            $out.push((concat!($prefix, ".scorer"), 1, v.len(), v));
        }
        $dense!($out, $b.hidden, concat!($prefix, ".hidden"));
        $dense!($out, $b.output, concat!($prefix, ".output"));
    }};
}

macro_rules! dense_ref {
    ($out:ident, $l:expr, $name:expr) => {{
        let (r, c) = ($l.weight.rows(), $l.weight.cols());
        $out.push((concat!($name, ".weight"), r, c, $l.weight.as_slice()));
        $out.push((concat!($name, ".bias"), 1, c, $l.bias.as_slice()));
    }};
}

macro_rules! dense_mut {
    ($out:ident, $l:expr, $name:expr) => {{
        let (r, c) = ($l.weight.rows(), $l.weight.cols());
        $out.push((concat!($name, ".weight"), r, c, $l.weight.as_mut_slice()));
        $out.push((concat!($name, ".bias"), 1, c, $l.bias.as_mut_slice()));
    }};
}

macro_rules! opt_ref {
    ($o:expr) => {
        $o.as_deref()
    };
}

macro_rules! opt_mut {
    ($o:expr) => {
        $o.as_deref_mut()
    };
}

impl ModelParams {
    /// All-zero parameters shaped for `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            question: BranchParams::zeros(cfg),
            answer: BranchParams::zeros(cfg),
            head: HeadParams {
                hidden: DenseLayer::zeros(2 * cfg.hidden2_dim, cfg.head_hidden_dim),
                output: DenseLayer::zeros(cfg.head_hidden_dim, 2),
            },
        }
    }

    /// Tensors in checkpoint order: question branch, answer branch, head;
    /// within a branch attention, scorer (scalar mode), hidden, output; each
    /// layer as weight then bias.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out: Vec<(&'static str, usize, usize, &[f64])> = Vec::new();
        branch_tensors!(out, self.question, "question", opt_ref, dense_ref);
        branch_tensors!(out, self.answer, "answer", opt_ref, dense_ref);
        dense_ref!(out, self.head.hidden, "head.hidden");
        dense_ref!(out, self.head.output, "head.output");
        out.into_iter()
            .map(|(name, rows, cols, values)| TensorRef { name, rows, cols, values })
            .collect()
    }

    /// Mutable tensors, same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, usize, usize, &mut [f64])> = Vec::new();
        branch_tensors!(out, self.question, "question", opt_mut, dense_mut);
        branch_tensors!(out, self.answer, "answer", opt_mut, dense_mut);
        dense_mut!(out, self.head.hidden, "head.hidden");
        dense_mut!(out, self.head.output, "head.output");
        out.into_iter().map(|(n, _, _, v)| (n, v)).collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.values.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.values.iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for (_, t) in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// True when `other` has exactly the same tensor layout.
    pub fn same_shape(&self, other: &Self) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| x.name == y.name && x.rows == y.rows && x.cols == y.cols)
    }

    fn shaped_for(&self, cfg: &ModelConfig) -> bool {
        self.same_shape(&Self::zeros(cfg))
    }
}

/// Initializes every weight uniformly on `±√(6 / a_max_len)`; biases start at zero.
pub fn init_params<R: Rng + ?Sized>(cfg: &ModelConfig, a_max_len: usize, rng: &mut R) -> Result<ModelParams> {
    cfg.validate()?;
    let bound = init_bound(a_max_len)?;
    let question = BranchParams::random(cfg, bound, rng)?;
    let answer = BranchParams::random(cfg, bound, rng)?;
    let hidden = DenseLayer::new(
        init_uniform(2 * cfg.hidden2_dim, cfg.head_hidden_dim, bound, rng)?,
        vec![0.0; cfg.head_hidden_dim],
    )?;
    let output = DenseLayer::new(init_uniform(cfg.head_hidden_dim, 2, bound, rng)?, vec![0.0; 2])?;
    Ok(ModelParams {
        question,
        answer,
        head: HeadParams { hidden, output },
    })
}

/// A configuration with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        if !params.shaped_for(&config) {
            return Err(Error::Dimension("parameter shapes do not match the model config".into()));
        }
        Ok(Self { config, params })
    }

    /// Errors unless `embeddings` has the width this model was built for.
    pub fn check_compatible(&self, embeddings: &Embeddings) -> Result<()> {
        if embeddings.dim() != self.config.emb_dim {
            return Err(Error::Incompatible(format!(
                "model expects {}-dimensional embeddings, table has {}",
                self.config.emb_dim,
                embeddings.dim()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            emb_dim: 4,
            att_dim: 3,
            hidden1_dim: 5,
            hidden2_dim: 2,
            head_hidden_dim: 6,
            ..ModelConfig::with_emb_dim(4)
        }
    }

    #[test]
    fn init_bound_and_biases() {
        let cfg = small();
        let p = init_params(&cfg, 24, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for t in p.tensors() {
            if t.name.ends_with(".bias") {
                assert!(t.values.iter().all(|&v| v == 0.0), "{}", t.name);
            } else {
                assert!(t.values.iter().all(|v| v.abs() <= 0.5), "{}", t.name);
            }
        }
        let p6 = init_params(&cfg, 6, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let max = p6.to_flat().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 1.0 && max > 0.5);
        assert!(matches!(
            init_params(&cfg, 0, &mut ChaCha8Rng::seed_from_u64(1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = small();
        let a = init_params(&cfg, 10, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = init_params(&cfg, 10, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let c = init_params(&cfg, 10, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a.question, a.answer, "branches must not be tied");
    }

    #[test]
    fn tensor_layout() {
        let cfg = small();
        let p = ModelParams::zeros(&cfg);
        let names: Vec<_> = p.tensors().iter().map(|t| t.name).collect();
        assert_eq!(names.len(), 7 * 2 + 4);
        assert_eq!(names[0], "question.attention.weight");
        assert_eq!(names[2], "question.scorer");
        assert_eq!(names[names.len() - 1], "head.output.bias");
        let expected = 2 * (5 * 3 + 3 + 3 + 3 * 5 + 5 + 5 * 2 + 2) + (4 * 6 + 6) + (6 * 2 + 2);
        assert_eq!(p.num_params(), expected);

        let featurewise = ModelConfig { attention_mode: AttentionMode::Featurewise, ..cfg };
        assert_eq!(ModelParams::zeros(&featurewise).tensors().len(), 6 * 2 + 4);
    }

    #[test]
    fn flat_round_trip() {
        let cfg = small();
        let p = init_params(&cfg, 10, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut q = ModelParams::zeros(&cfg);
        q.assign_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert!(q.assign_flat(&[1.0]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(small().validate().is_ok());
        assert!(ModelConfig { att_dim: 0, ..small() }.validate().is_err());
        assert!(ModelConfig { lrelu_slope: 1.0, ..small() }.validate().is_err());
    }
}
