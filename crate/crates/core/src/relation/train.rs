use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{backward, embed_elements, forward, masked_cross_entropy, PassOptions, Segment};
use super::params::{ModelMeta, RelationModelParams};
use super::TrainingExample;
use crate::document::{Category, GridBox};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub schedule: LrSchedule,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// Cosine decay from the base rate to zero over the run.
    #[default]
    Cosine,
    Constant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: Some(1.0),
            schedule: LrSchedule::Cosine,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be finite and >= 0"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(invalid("weight_decay must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, examples: usize) -> usize {
        examples.div_ceil(self.batch_size)
    }
}

/// Pages stacked row-wise for one forward pass.
pub(crate) struct Batch {
    pub boxes: Vec<GridBox>,
    pub cats: Vec<Category>,
    pub targets: Vec<usize>,
    pub segments: Vec<Segment>,
}

impl Batch {
    pub fn new<'a>(examples: impl IntoIterator<Item = &'a TrainingExample>) -> Self {
        let mut b = Batch {
            boxes: Vec::new(),
            cats: Vec::new(),
            targets: Vec::new(),
            segments: Vec::new(),
        };
        for ex in examples {
            b.segments.push((b.boxes.len(), ex.boxes.len()));
            b.boxes.extend_from_slice(&ex.boxes);
            b.cats.extend_from_slice(&ex.cats);
            b.targets.extend(ex.target.ranks().iter().copied());
        }
        b
    }
}

/// Loss and gradients of one batch.
pub(crate) fn loss_and_grad(
    params: &RelationModelParams,
    batch: &Batch,
    dropout_rng: Option<&mut ChaCha8Rng>,
    skip: &[bool],
) -> Result<(f64, RelationModelParams)> {
    let feats = embed_elements(&batch.boxes, &batch.cats, params)?;
    let out = forward(params, feats, &batch.segments, &PassOptions { skip }, dropout_rng, true, false);
    let (loss, dlogits) = masked_cross_entropy(&out.logits, &batch.segments, &batch.targets);
    let mut grads = params.zeros_like();
    backward(
        params,
        out.trace.as_ref().expect("trace requested"),
        &dlogits,
        &batch.boxes,
        &batch.cats,
        &batch.segments,
        &mut grads,
    );
    Ok((loss, grads))
}

/// Loss of `examples` as one batch and its gradient, with dropout off.
pub fn loss_and_gradients(params: &RelationModelParams, examples: &[TrainingExample]) -> Result<(f64, RelationModelParams)> {
    for ex in examples {
        ex.check(params.config.max_elements)?;
    }
    let skip = vec![false; params.layers.len()];
    loss_and_grad(params, &Batch::new(examples), None, &skip)
}

/// Mean per-element loss over `examples` with dropout off.
pub fn dataset_loss(params: &RelationModelParams, examples: &[TrainingExample]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in examples.chunks(64) {
        let batch = Batch::new(chunk);
        let feats = embed_elements(&batch.boxes, &batch.cats, params)?;
        let out = forward::<ChaCha8Rng>(params, feats, &batch.segments, &PassOptions::default(), None, false, false);
        let (loss, _) = masked_cross_entropy(&out.logits, &batch.segments, &batch.targets);
        total += loss * batch.targets.len() as f64;
        count += batch.targets.len();
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

struct AdamW {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    decay: Vec<bool>,
    t: i32,
}

impl AdamW {
    fn new(params: &RelationModelParams) -> Self {
        let zeros = || params.tensors().iter().map(|t| Array2::zeros(t.raw_dim())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            decay: params.decay_mask(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut RelationModelParams, grads: &RelationModelParams, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let scale = match cfg.grad_clip {
            Some(clip) => {
                let norm = grads.tensors().iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
                if norm > clip {
                    clip / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for (i, (p, g)) in params.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
            let decay = if self.decay[i] { cfg.weight_decay } else { 0.0 };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g * scale;
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
                *p -= lr * (update + decay * *p);
            });
        }
    }
}

fn scheduled_lr(schedule: LrSchedule, base: f64, step: usize, total: usize) -> f64 {
    if schedule == LrSchedule::Constant || total <= 1 {
        return base;
    }
    0.5 * base * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

/// Run `total_steps` AdamW steps over shuffled mini-batches of `examples`,
/// with the learning rate following `cfg.schedule`. Returns the
/// mean training loss of each pass over the data (a partial final pass
/// included).
pub fn train_steps(
    params: &mut RelationModelParams,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
    total_steps: usize,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(invalid("training needs at least one example"));
    }
    for ex in examples {
        ex.check(params.config.max_elements)?;
    }
    let mut opt = AdamW::new(params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut curve = Vec::new();
    let mut step = 0;
    let use_dropout = params.config.dropout > 0.0;
    let skip = vec![false; params.layers.len()];
    while step < total_steps {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if step >= total_steps {
                break;
            }
            let batch = Batch::new(chunk.iter().map(|&i| &examples[i]));
            let (loss, grads) = loss_and_grad(params, &batch, use_dropout.then_some(&mut drop_rng), &skip)?;
            if !loss.is_finite() {
                return Err(invalid(format!("loss diverged at step {step}")));
            }
            opt.step(params, &grads, scheduled_lr(cfg.schedule, cfg.learning_rate, step, total_steps), cfg);
            sum += loss;
            batches += 1;
            step += 1;
        }
        curve.push(sum / batches as f64);
        log::debug!("pass {} loss {:.4}", curve.len(), sum / batches as f64);
    }
    Ok(curve)
}

/// Train from the given initial parameters for `cfg.epochs` epochs.
pub fn train_relation_model(
    mut params: RelationModelParams,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<(RelationModelParams, ModelMeta)> {
    if examples.is_empty() {
        return Err(invalid("training needs at least one example"));
    }
    let total = cfg.epochs * cfg.steps_per_epoch(examples.len());
    let mut curve = vec![dataset_loss(&params, examples)?];
    curve.extend(train_steps(&mut params, examples, cfg, total)?);
    let meta = ModelMeta {
        seed: cfg.seed,
        loss_curve: curve,
        steps: total,
        learning_rate: cfg.learning_rate,
        notes: Vec::new(),
    };
    Ok((params, meta))
}

/// Continue training for `fraction` of the original step budget at a tenth
/// of the original learning rate.
pub fn finetune(
    mut params: RelationModelParams,
    examples: &[TrainingExample],
    fraction: f64,
    original: &ModelMeta,
    cfg: &TrainConfig,
) -> Result<(RelationModelParams, ModelMeta)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(format!("fine-tune fraction {fraction} outside (0, 1]")));
    }
    let steps = ((original.steps as f64) * fraction).round().max(1.0) as usize;
    let lr = original.learning_rate * 0.1;
    let ft = TrainConfig {
        learning_rate: lr,
        ..cfg.clone()
    };
    let mut curve = vec![dataset_loss(&params, examples)?];
    curve.extend(train_steps(&mut params, examples, &ft, steps)?);
    let mut meta = original.clone();
    meta.loss_curve = curve;
    meta.steps = steps;
    meta.learning_rate = lr;
    meta.notes.push(format!("fine-tuned {steps} steps at lr {lr}"));
    Ok((params, meta))
}
