//! Pointwise mini-batch SGD over (question, candidate, label) instances.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::QuestionGroup;
use crate::error::{Error, Result};
use crate::evaluation::{mrr, relevance_cutoff, score_run, EvalOptions, DEFAULT_GRADE_THRESHOLD};
use crate::model::{backward, encode_pair, init_params, EncodedPair, LossConfig, Model, ModelConfig, ModelParams};
use crate::text::{tokenize, Embeddings};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub question_id: String,
    pub q_tokens: Vec<String>,
    pub a_tokens: Vec<String>,
    pub label: u8,
    /// The original grade, kept for graded evaluation.
    pub grade: u32,
}

/// One instance per (question, candidate) pair.
///
/// Grades at or above `grade_threshold` become label 1; binary data passes through unchanged.
pub fn make_instances(groups: &[QuestionGroup], grade_threshold: u32) -> Result<Vec<Instance>> {
    let max_grade = groups.iter().flat_map(|g| &g.candidates).map(|c| c.grade).max().unwrap_or(0);
    let cutoff = relevance_cutoff(max_grade, grade_threshold);
    let mut out = Vec::new();
    for g in groups {
        if g.candidates.is_empty() {
            return Err(Error::Data(format!("question {} has no candidates", g.question_id)));
        }
        let q_tokens = tokenize(&g.question);
        if q_tokens.is_empty() {
            return Err(Error::Data(format!("question {} has no tokens", g.question_id)));
        }
        for c in &g.candidates {
            let a_tokens = tokenize(&c.text);
            if a_tokens.is_empty() {
                return Err(Error::Data(format!(
                    "answer {} of question {} has no tokens",
                    c.answer_id, g.question_id
                )));
            }
            out.push(Instance {
                question_id: g.question_id.clone(),
                q_tokens: q_tokens.clone(),
                a_tokens,
                label: u8::from(c.grade >= cutoff),
                grade: c.grade,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// `|a_max|` for initialization; measured from the training answers when `None`.
    pub a_max_len_observed: Option<usize>,
    /// Stop after this many epochs without a dev MRR improvement. Needs a dev set.
    pub patience: Option<usize>,
    pub positive_weight: f64,
    pub fine_tune_embeddings: bool,
    pub grade_threshold: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 50,
            learning_rate: 0.1,
            epochs: 25,
            seed: 0,
            shuffle: true,
            a_max_len_observed: None,
            patience: Some(5),
            positive_weight: 1.0,
            fine_tune_embeddings: false,
            grade_threshold: DEFAULT_GRADE_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.positive_weight > 0.0 && self.positive_weight.is_finite()) {
            return Err(Error::Config(format!("positive_weight must be positive, got {}", self.positive_weight)));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.a_max_len_observed == Some(0) {
            return Err(Error::Config("a_max_len_observed must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub dev_mrr: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,loss,dev_mrr,seconds";

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let dev = e.dev_mrr.map(|m| m.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{:.3}\n", e.epoch, e.loss, dev, e.seconds));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best dev MRR, or lowest training loss without a dev set.
    pub best: Model,
    pub best_epoch: usize,
    pub last: Model,
    pub history: TrainHistory,
    /// The tuned table when embedding fine-tuning is on.
    pub embeddings: Option<Embeddings>,
}

/// `θ ← θ − lr·g` elementwise.
pub fn sgd_step(params: &mut ModelParams, gradients: &ModelParams, lr: f64) -> Result<()> {
    if !params.same_shape(gradients) {
        return Err(Error::Dimension("gradient shapes do not match the parameters".into()));
    }
    for ((_, p), g) in params.tensors_mut().into_iter().zip(gradients.tensors()) {
        for (x, d) in p.iter_mut().zip(g.values) {
            *x -= lr * d;
        }
    }
    Ok(())
}

pub fn train(
    train_set: &[QuestionGroup],
    dev: Option<&[QuestionGroup]>,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    embeddings: &Embeddings,
) -> Result<TrainOutcome> {
    train_with_callback(train_set, dev, cfg, model_cfg, embeddings, |_| {})
}

/// [`train`], calling `on_epoch` after each completed epoch.
pub fn train_with_callback(
    train_set: &[QuestionGroup],
    dev: Option<&[QuestionGroup]>,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    embeddings: &Embeddings,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if model_cfg.emb_dim != embeddings.dim() {
        return Err(Error::Incompatible(format!(
            "model expects {}-dimensional embeddings, table has {}",
            model_cfg.emb_dim,
            embeddings.dim()
        )));
    }
    let instances = make_instances(train_set, cfg.grade_threshold)?;
    let a_max = match cfg.a_max_len_observed {
        Some(n) => n,
        None => instances.iter().map(|i| i.a_tokens.len()).max().unwrap_or(1),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(model_cfg.clone(), init_params(model_cfg, a_max, &mut rng)?)?;
    let mut emb = embeddings.clone();
    let loss_cfg = LossConfig {
        positive_weight: cfg.positive_weight,
        embedding_grads: cfg.fine_tune_embeddings,
    };
    let eval_opts = EvalOptions {
        grade_threshold: cfg.grade_threshold,
        drop_unanswerable: false,
    };

    let mut items: Vec<(usize, EncodedPair)> = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| Ok((i, encode_pair(&inst.q_tokens, &inst.a_tokens, inst.label, model_cfg, &emb)?)))
        .collect::<Result<_>>()?;

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        if cfg.shuffle {
            items.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for (b, chunk) in items.chunks_mut(cfg.batch_size).enumerate() {
            if cfg.fine_tune_embeddings {
                for (i, pair) in chunk.iter_mut() {
                    let inst = &instances[*i];
                    *pair = encode_pair(&inst.q_tokens, &inst.a_tokens, inst.label, model_cfg, &emb)?;
                }
            }
            let pairs: Vec<&EncodedPair> = chunk.iter().map(|(_, p)| p).collect();
            let (grads, loss) = match backward(&pairs, &model, &loss_cfg) {
                Err(Error::NumericDomain(_)) => {
                    return Err(Error::TrainingDiverged { epoch, batch: b + 1, loss: f64::NAN });
                }
                other => other?,
            };
            let finite = loss.is_finite() && grads.params.tensors().iter().all(|t| t.values.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(Error::TrainingDiverged { epoch, batch: b + 1, loss });
            }
            sgd_step(&mut model.params, &grads.params, cfg.learning_rate)?;
            if let Some(rows) = &grads.embeddings {
                for (&id, g) in rows {
                    emb.table.update_row(id, g, cfg.learning_rate);
                }
            }
            loss_sum += loss * chunk.len() as f64;
        }
        let loss = loss_sum / items.len() as f64;
        let dev_mrr = match dev {
            Some(d) if !d.is_empty() => Some(mrr(&score_run(&model, &emb, d)?, &eval_opts)?),
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            loss,
            dev_mrr,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.epochs.push(record);

        // higher is better: dev MRR, else negated training loss
        let merit = dev_mrr.unwrap_or(-loss);
        if best.as_ref().map_or(true, |(m, _, _)| merit > *m) {
            best = Some((merit, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if let (Some(p), Some(_)) = (cfg.patience, dev_mrr) {
            if since_best >= p {
                break;
            }
        }
    }

    let (_, best_epoch, best_model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best: best_model,
        best_epoch,
        last: model,
        history,
        embeddings: cfg.fine_tune_embeddings.then_some(emb),
    })
}
