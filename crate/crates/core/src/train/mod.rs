//! AdamW, the classifier / distilled-student / masked-LM loops, and
//! evaluation.

mod optim;
mod report;

pub use optim::{optimizer_step, OptimizerState};
pub use report::{EpochRecord, TrainReport};

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamId, Var};
use crate::data::{batch_iter, sequential_batches, Batch, Dataset, MASK};
use crate::distill::{
    combined_loss_var, distill_loss_var, feature_distill_loss_var, soften_var, task_loss_var, DistillConfig,
    DistillMode, SoftLabelStore,
};
use crate::error::{contract, Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{encode, EncoderModel, ModelConfig, ModelVars};
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub distill: Option<DistillConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 10,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(5.0),
            seed: 0,
            distill: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be nonnegative, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm must be positive, got {c}"));
            }
        }
        if let Some(d) = &self.distill {
            d.validate()?;
        }
        Ok(())
    }

    fn epoch_seed(&self, epoch: usize) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64)
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

fn check_compatible(config: &ModelConfig, dataset: &Dataset) -> Result<()> {
    contract!(!dataset.is_empty(), "dataset is empty");
    contract!(
        config.num_classes == dataset.num_classes(),
        "model predicts {} classes, dataset has {}",
        config.num_classes,
        dataset.num_classes()
    );
    if let Some(max) = dataset.max_token_id() {
        if max >= config.vocab_size {
            return Err(Error::Vocab {
                id: max,
                vocab_size: config.vocab_size,
            });
        }
    }
    if dataset.max_seq_len() > config.max_seq_len {
        return Err(Error::Length {
            len: dataset.max_seq_len(),
            max: config.max_seq_len,
        });
    }
    Ok(())
}

pub fn predict(model: &EncoderModel, dataset: &Dataset) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(dataset.len());
    for batch in sequential_batches(dataset, EVAL_BATCH)? {
        let logits = model.predict_logits(&batch.token_ids, &batch.mask)?;
        out.extend((0..batch.len()).map(|i| argmax(logits.row(i))));
    }
    Ok(out)
}

/// Argmax predictions scored against the dataset labels.
pub fn evaluate(model: &EncoderModel, dataset: &Dataset) -> Result<MetricsReport> {
    check_compatible(model.config(), dataset)?;
    let preds = predict(model, dataset)?;
    MetricsReport::from_predictions(&preds, &dataset.labels(), dataset.num_classes())
}

/// Loss and logits of one batch.
struct StepOutput {
    loss: Var,
    logits: Var,
}

/// Everything a batch objective may read: the graph, handles for the model
/// parameters, handles for extra trainable tensors, and the batch.
type Objective<'a> = dyn FnMut(&mut Graph, &ModelVars, &[Var], &Batch) -> Result<StepOutput> + 'a;

fn register(g: &mut Graph, config: &ModelConfig, params: &[Tensor], n_model: usize) -> (ModelVars, Vec<Var>) {
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, t)| g.param(ParamId(i), t.clone()))
        .collect();
    (ModelVars::from_slice(config, &vars[..n_model]), vars[n_model..].to_vec())
}

/// Shared epoch/batch loop. `extra` tensors are trained alongside the model
/// under ids following the model's own.
fn fit(
    model: EncoderModel,
    mut extra: Vec<(String, Tensor)>,
    dataset: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
    objective: &mut Objective<'_>,
) -> Result<(EncoderModel, TrainReport)> {
    cfg.validate()?;
    let config = *model.config();
    check_compatible(&config, dataset)?;
    if let Some(v) = validation {
        check_compatible(&config, v)?;
    }
    let n_model = model.params().len();
    let mut names = model.param_names();
    let mut params = model.params().to_vec();
    for (name, t) in extra.drain(..) {
        names.push(name);
        params.push(t);
    }
    let mut state = OptimizerState::new(names, &params);
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        let batches = batch_iter(dataset, cfg.batch_size, cfg.epoch_seed(epoch))?;
        for (b, batch) in batches.iter().enumerate() {
            let mut g = Graph::new();
            let (mv, xv) = register(&mut g, &config, &params, n_model);
            let out = objective(&mut g, &mv, &xv, batch)?;
            let loss = g.value(out.loss).item();
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss is {loss} at epoch {} batch {}",
                    epoch + 1,
                    b + 1
                )));
            }
            let logits = g.value(out.logits);
            correct += (0..batch.len())
                .filter(|&i| argmax(logits.row(i)) == batch.labels[i])
                .count();
            seen += batch.len();
            let grads = g.backward(out.loss)?;
            drop(g);
            optimizer_step(&mut params, &grads, &mut state, cfg)
                .map_err(|e| at_step(e, epoch, b))?;
            loss_sum += loss;
            report.batch_losses.push(loss);
        }
        let (val_acc, val_f1) = match validation {
            Some(v) => {
                let m = EncoderModel::from_params(config, params[..n_model].to_vec())?;
                let r = evaluate(&m, v)?;
                let out = (Some(r.accuracy), Some(r.f1()));
                report.final_validation = Some(r);
                out
            }
            None => (None, None),
        };
        report.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / batches.len() as f64,
            train_acc: correct as f64 / seen as f64,
            val_acc,
            val_f1,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    params.truncate(n_model);
    Ok((EncoderModel::from_params(config, params)?, report))
}

fn at_step(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Training(m) => Error::Training(format!("{m} at epoch {} batch {}", epoch + 1, batch + 1)),
        other => other,
    }
}

/// Plain supervised training on the true labels.
pub fn train_classifier(
    model: EncoderModel,
    dataset: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(EncoderModel, TrainReport)> {
    let config = *model.config();
    let mut objective = |g: &mut Graph, mv: &ModelVars, _: &[Var], batch: &Batch| {
        let fwd = encode(g, mv, &config, &batch.token_ids, &batch.mask)?;
        let probs = g.softmax_rows(fwd.logits)?;
        let loss = task_loss_var(g, &batch.labels, probs)?;
        Ok(StepOutput {
            loss,
            logits: fwd.logits,
        })
    };
    fit(model, vec![], dataset, validation, cfg, &mut objective)
}

/// Training on the combined task and distillation objective. `teacher` is
/// needed only for feature distillation, whose projection is trained with
/// the student and then discarded.
pub fn train_student_distilled(
    student: EncoderModel,
    soft_labels: &SoftLabelStore,
    dataset: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
    teacher: Option<&EncoderModel>,
) -> Result<(EncoderModel, TrainReport)> {
    let dcfg = cfg
        .distill
        .ok_or_else(|| Error::Config("distillation settings missing from training config".into()))?;
    dcfg.validate()?;
    soft_labels.check_covers(dataset)?;
    let config = *student.config();
    let feature = dcfg.mode == DistillMode::OutputPlusFeature;
    let mut extra = vec![];
    if feature {
        let t = teacher.ok_or_else(|| Error::Config("feature distillation needs the teacher model".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        extra.push((
            "feature.projection".to_string(),
            Tensor::xavier_uniform(config.d_model, t.config().d_model, &mut rng),
        ));
    }
    let mut objective = |g: &mut Graph, mv: &ModelVars, xv: &[Var], batch: &Batch| {
        let fwd = encode(g, mv, &config, &batch.token_ids, &batch.mask)?;
        let probs = g.softmax_rows(fwd.logits)?;
        let l_task = task_loss_var(g, &batch.labels, probs)?;
        let targets = g.constant(soft_labels.targets(&batch.example_ids)?);
        let soft = soften_var(g, fwd.logits, dcfg.temperature)?;
        let l_distill = distill_loss_var(g, targets, soft)?;
        let mut loss = combined_loss_var(g, l_task, l_distill, &dcfg)?;
        if feature {
            let t = teacher.expect("checked above");
            let mut tg = Graph::new();
            let tv = t.register(&mut tg, false);
            let tf = t.forward(&mut tg, &tv, &batch.token_ids, &batch.mask)?;
            let th = g.constant(tg.value(tf.hidden).clone());
            let lf = feature_distill_loss_var(g, th, fwd.hidden, xv[0])?;
            let lf = g.scale(lf, dcfg.feature_weight)?;
            loss = g.add(loss, lf)?;
        }
        Ok(StepOutput {
            loss,
            logits: fwd.logits,
        })
    };
    fit(student, extra, dataset, validation, cfg, &mut objective)
}

/// Masked-token pre-training with the vocabulary head tied to the embedding
/// matrix. A `mask_fraction` share of each sequence's content positions
/// (CLS excluded, at least one when the share rounds up to one or more) is
/// replaced by MASK; the classifier head is frozen. Returns the mean loss of
/// every step taken.
pub fn pretrain_mlm(
    model: EncoderModel,
    corpus: &Dataset,
    cfg: &TrainConfig,
    mask_fraction: f64,
) -> Result<(EncoderModel, Vec<f64>)> {
    cfg.validate()?;
    contract!(
        (0.0..=1.0).contains(&mask_fraction),
        "mask fraction {mask_fraction} outside [0, 1]"
    );
    contract!(
        corpus.len() >= cfg.batch_size,
        "corpus has {} sequences, fewer than one batch of {}",
        corpus.len(),
        cfg.batch_size
    );
    let config = *model.config();
    contract!(config.vocab_size > MASK, "vocabulary lacks the MASK token");
    if let Some(max) = corpus.max_token_id() {
        if max >= config.vocab_size {
            return Err(Error::Vocab {
                id: max,
                vocab_size: config.vocab_size,
            });
        }
    }
    let n = model.params().len();
    let mut params = model.params().to_vec();
    let mut state = OptimizerState::new(model.param_names(), &params);
    for id in model.head_param_ids() {
        state.freeze(id);
    }
    let mut losses = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d6c_6d00);
    for epoch in 0..cfg.epochs {
        for (b, batch) in batch_iter(corpus, cfg.batch_size, cfg.epoch_seed(epoch))?.iter().enumerate() {
            let s = batch.token_ids[0].len();
            let mut inputs = batch.token_ids.clone();
            let mut rows = Vec::new();
            let mut targets = Vec::new();
            for (r, seq) in inputs.iter_mut().enumerate() {
                let content: Vec<usize> = (1..s).filter(|&p| batch.mask.row(r)[p]).collect();
                let k = (mask_fraction * content.len() as f64).round() as usize;
                let mut chosen: Vec<usize> = sample(&mut rng, content.len(), k).into_iter().map(|i| content[i]).collect();
                chosen.sort_unstable();
                for p in chosen {
                    targets.push(seq[p]);
                    seq[p] = MASK;
                    rows.push(r * s + p);
                }
            }
            if rows.is_empty() {
                continue;
            }
            let mut g = Graph::new();
            let (mv, _) = register(&mut g, &config, &params, n);
            let fwd = encode(&mut g, &mv, &config, &inputs, &batch.mask)?;
            let picked = g.gather_rows(fwd.hidden, &rows)?;
            let logits = g.matmul_nt(picked, mv.embed_w)?;
            let probs = g.softmax_rows(logits)?;
            let loss = task_loss_var(&mut g, &targets, probs)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Training(format!(
                    "masked-LM loss is {value} at epoch {} batch {}",
                    epoch + 1,
                    b + 1
                )));
            }
            let grads = g.backward(loss)?;
            optimizer_step(&mut params, &grads, &mut state, cfg).map_err(|e| at_step(e, epoch, b))?;
            losses.push(value);
        }
    }
    Ok((EncoderModel::from_params(config, params)?, losses))
}
