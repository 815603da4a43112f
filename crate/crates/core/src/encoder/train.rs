use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::argmax;
use super::params::Params;
use super::{EncoderError, Model, Scalar};
use crate::label::RegionLabel;
use crate::normalizer::TokenWindow;
use crate::seed::{self, stream};
use crate::simlm::{apply_mask, plan_for_epoch, MaskRates};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of all steps spent warming the learning rate up from zero.
    pub warmup: f64,
    pub weight_decay: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub rates: MaskRates,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch: 8,
            epochs: 3,
            seed: 0,
            warmup: 0.05,
            weight_decay: 0.01,
            clip: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            rates: MaskRates::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    /// Masked-token accuracy when pre-training, label accuracy when
    /// fine-tuning; measured on the training batches.
    pub accuracy: f64,
    /// Macro F1 on the validation windows, fine-tuning only.
    pub val_f1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochMetrics>,
    /// Windows skipped for having too few maskable tokens.
    pub skipped: usize,
    /// Epoch (1-based) whose weights were kept: the best validation F1,
    /// earliest on ties. None when there was no validation set.
    #[serde(default)]
    pub best_epoch: Option<usize>,
}

/// A window together with its ground-truth class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledWindow {
    pub ids: Vec<usize>,
    pub label: RegionLabel,
}

impl LabeledWindow {
    pub fn from_window(w: &TokenWindow) -> Option<Self> {
        Some(LabeledWindow { ids: w.ids(), label: w.label? })
    }
}

struct AdamW<F> {
    m: Params<F>,
    v: Params<F>,
    t: i32,
}

impl<F: Scalar> AdamW<F> {
    fn new(p: &Params<F>) -> Self {
        let mut m = p.clone();
        m.scale(F::zero());
        AdamW { v: m.clone(), m, t: 0 }
    }

    /// Decoupled weight decay applies to matrices only; biases and
    /// layer-norm vectors are `1 x n`.
    fn step(&mut self, params: &mut Params<F>, grads: &Params<F>, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (F::of(cfg.beta1), F::of(cfg.beta2));
        let c1 = F::of(1.0 - cfg.beta1.powi(self.t));
        let c2 = F::of(1.0 - cfg.beta2.powi(self.t));
        let lr_f = F::of(lr);
        let eps = F::of(cfg.adam_eps);
        let decay = F::of(1.0 - lr * cfg.weight_decay);
        let one = F::one();
        let tensors = params.named_mut().into_iter().zip(grads.named()).zip(self.m.named_mut()).zip(self.v.named_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in tensors {
            let matrix = p.nrows() > 1;
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                if matrix {
                    *p *= decay;
                }
                *p -= lr_f * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// Linear warmup to `lr`, then linear decay to zero.
fn scheduled_lr(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    let warm = ((cfg.warmup * total as f64).round() as usize).max(1);
    if step < warm {
        cfg.lr * (step + 1) as f64 / warm as f64
    } else {
        cfg.lr * (total - step) as f64 / (total - warm + 1) as f64
    }
}

fn clip(grads: &mut Params<f32>, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.norm().to_f64();
    if norm > max_norm {
        grads.scale((max_norm / norm) as f32);
    }
}

struct StepOutput {
    loss: f64,
    grads: Params<f32>,
    hits: usize,
    count: usize,
}

/// Per-sequence gradients in parallel, reduced in batch order so the sum is
/// the same however rayon schedules the work.
fn run_batch<T: Sync>(
    model: &Model<f32>,
    items: &[T],
    f: impl Fn(&Model<f32>, &T) -> StepOutput + Sync,
) -> StepOutput {
    let outs: Vec<StepOutput> = items.par_iter().map(|it| f(model, it)).collect();
    let mut total = Params::zeros(&model.config);
    let (mut loss, mut hits, mut count) = (0.0, 0, 0);
    for o in &outs {
        total.add_assign(&o.grads);
        loss += o.loss;
        hits += o.hits;
        count += o.count;
    }
    total.scale(1.0 / items.len() as f32);
    StepOutput { loss: loss / items.len() as f64, grads: total, hits, count }
}

fn run_epochs<T: Sync + Clone>(
    model: &mut Model<f32>,
    cfg: &TrainConfig,
    items_for_epoch: impl Fn(usize) -> Vec<T>,
    step_fn: impl Fn(&Model<f32>, &T, u64) -> StepOutput + Sync,
    mut after_epoch: impl FnMut(&Model<f32>, &mut EpochMetrics),
    tag: &str,
) -> Vec<EpochMetrics> {
    let batch = cfg.batch.max(1);
    let epoch_items: Vec<Vec<T>> = (0..cfg.epochs).map(&items_for_epoch).collect();
    let total: usize = epoch_items.iter().map(|it| it.len().div_ceil(batch)).sum();
    let mut opt = AdamW::new(&model.params);
    let mut step = 0usize;
    let mut log = Vec::with_capacity(cfg.epochs);
    for (epoch, items) in epoch_items.into_iter().enumerate() {
        let (mut loss_sum, mut hits, mut count, mut steps) = (0.0, 0, 0, 0);
        let indexed: Vec<(u64, T)> = items.into_iter().enumerate().map(|(i, t)| (i as u64, t)).collect();
        for chunk in indexed.chunks(batch) {
            let drop_root = seed::derive(cfg.seed, &[stream::DROPOUT, epoch as u64, step as u64]);
            let mut out = run_batch(model, chunk, |m, (i, t)| step_fn(m, t, seed::derive(drop_root, &[*i])));
            clip(&mut out.grads, cfg.clip);
            opt.step(&mut model.params, &out.grads, scheduled_lr(cfg, step, total), cfg);
            loss_sum += out.loss;
            hits += out.hits;
            count += out.count;
            steps += 1;
            step += 1;
        }
        let mut m = EpochMetrics {
            epoch: epoch + 1,
            steps,
            mean_loss: if steps == 0 { 0.0 } else { loss_sum / steps as f64 },
            accuracy: if count == 0 { 0.0 } else { hits as f64 / count as f64 },
            val_f1: None,
        };
        after_epoch(model, &mut m);
        info!(
            "{tag} epoch {}: loss {:.4} acc {:.4}{}",
            m.epoch,
            m.mean_loss,
            m.accuracy,
            m.val_f1.map_or(String::new(), |f| format!(" val_f1 {f:.4}"))
        );
        log.push(m);
    }
    log
}

fn shuffled<T: Clone>(items: &[T], root: u64, tag: u64, epoch: usize) -> Vec<T> {
    let mut out = items.to_vec();
    out.shuffle(&mut seed::derived_rng(root, &[stream::SHUFFLE, tag, epoch as u64]));
    out
}

/// Masked-LM pre-training. Every epoch draws fresh mask plans from the root
/// seed, so two runs with the same seed log identical metrics.
pub fn train_pretrain(
    model: &mut Model<f32>,
    windows: &[TokenWindow],
    cfg: &TrainConfig,
) -> Result<TrainLog, EncoderError> {
    if windows.is_empty() {
        return Err(EncoderError::EmptyCorpus);
    }
    for w in windows {
        if w.is_empty() || w.len() > model.config.max_len {
            return Err(EncoderError::ShapeMismatch(format!("window of {} tokens", w.len())));
        }
    }
    // Windows are addressed by ordinal so mask seeds do not depend on the
    // shuffle order.
    let ordinals: Vec<usize> = (0..windows.len()).collect();
    let skipped = std::sync::atomic::AtomicUsize::new(0);
    let epochs = run_epochs(
        model,
        cfg,
        |epoch| {
            shuffled(&ordinals, cfg.seed, 0, epoch)
                .into_iter()
                .filter_map(|i| {
                    let plan = plan_for_epoch(&windows[i], cfg.seed, i as u64, epoch as u64, &cfg.rates).ok();
                    if plan.is_none() && epoch == 0 {
                        skipped.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    }
                    let masked = apply_mask(&windows[i], &plan?).ok()?;
                    let targets: Vec<(usize, usize)> =
                        masked.selected().into_iter().map(|(p, t)| (p, t.id())).collect();
                    Some((masked.input_ids(), targets))
                })
                .collect()
        },
        |m, (ids, targets), s| {
            let mut rng = seed::rng(s);
            let (loss, grads, hits) = m.mlm_step(ids, targets, Some(&mut rng));
            StepOutput { loss: loss.to_f64(), grads, hits, count: targets.len() }
        },
        |_, _| {},
        "pretrain",
    );
    let skipped = skipped.into_inner();
    if epochs.iter().all(|e| e.steps == 0) {
        return Err(EncoderError::EmptyCorpus);
    }
    Ok(TrainLog { epochs, skipped, best_epoch: None })
}

/// Train the region head and the encoder end to end. Every window needs a
/// label. When `val` is non-empty, validation macro F1 is logged after each
/// epoch and the model ends up with the weights of the best epoch.
pub fn train_finetune(
    model: &mut Model<f32>,
    train: &[TokenWindow],
    val: &[TokenWindow],
    cfg: &TrainConfig,
) -> Result<TrainLog, EncoderError> {
    if train.is_empty() {
        return Err(EncoderError::EmptyCorpus);
    }
    let items = labeled(train, 0)?;
    let val = labeled(val, train.len())?;
    model.finetuned = true;
    let mut best: Option<(f64, usize, Params<f32>)> = None;
    let epochs = run_epochs(
        model,
        cfg,
        |epoch| shuffled(&items, cfg.seed, 1, epoch),
        |m, w, s| {
            let mut rng = seed::rng(s);
            let (loss, grads, predicted) = m.cls_step(&w.ids, w.label, Some(&mut rng));
            StepOutput { loss: loss.to_f64(), grads, hits: usize::from(predicted == w.label.index()), count: 1 }
        },
        |m, metrics| {
            if !val.is_empty() {
                let f1 = macro_f1(m, &val);
                metrics.val_f1 = Some(f1);
                if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
                    best = Some((f1, metrics.epoch, m.params.clone()));
                }
            }
        },
        "finetune",
    );
    let best_epoch = best.map(|(_, epoch, params)| {
        model.params = params;
        epoch
    });
    Ok(TrainLog { epochs, skipped: 0, best_epoch })
}

fn labeled(windows: &[TokenWindow], base: usize) -> Result<Vec<LabeledWindow>, EncoderError> {
    windows
        .iter()
        .enumerate()
        .map(|(i, w)| LabeledWindow::from_window(w).ok_or(EncoderError::MissingLabels(base + i)))
        .collect()
}

/// Predicted class for each window, in parallel.
pub(crate) fn predict_all(model: &Model<f32>, windows: &[LabeledWindow]) -> Vec<usize> {
    windows
        .par_iter()
        .map(|w| model.class_probs(&w.ids).map(|p| argmax(p)).unwrap_or(RegionLabel::NativeData.index()))
        .collect()
}

fn macro_f1(model: &Model<f32>, windows: &[LabeledWindow]) -> f64 {
    let predicted = predict_all(model, windows);
    // Classes absent from both truth and predictions do not count.
    let (mut f1, mut present) = (0.0, 0);
    for c in 0..RegionLabel::COUNT {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for (w, &p) in windows.iter().zip(&predicted) {
            let t = w.label.index();
            match (p == c, t == c) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
        let denom = 2.0 * tp + fp + fn_;
        if denom > 0.0 {
            f1 += 2.0 * tp / denom;
            present += 1;
        }
    }
    if present == 0 {
        0.0
    } else {
        f1 / present as f64
    }
}
