//! K-class softmax linear model over sparse hashed features.
//!
//! Training is plain mini-batch gradient descent on the sample-weighted
//! cross-entropy plus an L2 penalty on the weight matrix, with a linear
//! warm-up / linear decay learning-rate schedule and early stopping on dev
//! macro-F1.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fairmetrics;
use crate::featurize::FeatureVector;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u32, num_classes: usize },
    #[error("feature dimension {got} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training and dev data must be non-empty")]
    EmptyData,
    #[error("non-finite loss at epoch {epoch}, step {step} (lr {lr})")]
    NonFiniteLoss { epoch: usize, step: usize, lr: f64 },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("sample weights must be positive and finite, got {0}")]
    BadWeight(f64),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint was written for featurizer {found:#018x}, expected {expected:#018x}")]
    FeaturizerMismatch { expected: u64, found: u64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, ClassifierError>;

/// Weights are stored feature-major: `weights[j * K + k]` is the weight of
/// feature `j` for class `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    num_classes: usize,
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Self {
            num_classes,
            dim,
            weights: vec![0.0; num_classes * dim],
            bias: vec![0.0; num_classes],
        }
    }

    pub fn from_parts(
        num_classes: usize,
        dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != num_classes * dim || bias.len() != num_classes {
            return Err(ClassifierError::BadConfig(format!(
                "parameter shapes do not match K={num_classes}, D={dim}"
            )));
        }
        Ok(Self {
            num_classes,
            dim,
            weights,
            bias,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.weights[feature * self.num_classes + class]
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    fn check_dim(&self, x: &FeatureVector) -> Result<()> {
        if x.dim != self.dim {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.dim,
                got: x.dim,
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(logits_scaled(&self.weights, 1.0, &self.bias, x))
    }

    pub fn squared_weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }
}

fn logits_scaled(weights: &[f64], scale: f64, bias: &[f64], x: &FeatureVector) -> Vec<f64> {
    let k = bias.len();
    let mut acc = vec![0.0; k];
    for &(j, v) in &x.entries {
        let row = &weights[j as usize * k..(j as usize + 1) * k];
        for (a, w) in acc.iter_mut().zip(row) {
            *a += w * v;
        }
    }
    acc.iter().zip(bias).map(|(a, b)| scale * a + b).collect()
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// First index of the maximum; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict_scores(model: &LinearModel, x: &FeatureVector) -> Result<Vec<f64>> {
    Ok(softmax(&model.logits(x)?))
}

pub fn predict_label(model: &LinearModel, x: &FeatureVector) -> Result<u32> {
    Ok(argmax(&predict_scores(model, x)?) as u32)
}

/// Score a batch; rows are probability vectors.
pub fn predict_scores_batch(model: &LinearModel, xs: &[FeatureVector]) -> Result<Vec<Vec<f64>>> {
    xs.iter().map(|x| predict_scores(model, x)).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x: &'a FeatureVector,
    pub label: u32,
    pub weight: f64,
}

/// Dense gradient with the same layout as [`LinearModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

fn check_sample(model: &LinearModel, s: &Sample) -> Result<()> {
    model.check_dim(s.x)?;
    if s.label as usize >= model.num_classes {
        return Err(ClassifierError::LabelOutOfRange {
            label: s.label,
            num_classes: model.num_classes,
        });
    }
    if !(s.weight > 0.0 && s.weight.is_finite()) {
        return Err(ClassifierError::BadWeight(s.weight));
    }
    Ok(())
}

/// Per-sample logit residuals `w_i (p_i - onehot(y_i)) / Σw` and the
/// weighted data loss, evaluated at `weights * scale + bias`.
fn batch_residuals(
    weights: &[f64],
    scale: f64,
    bias: &[f64],
    batch: &[Sample],
) -> (f64, Vec<Vec<f64>>) {
    let total_w: f64 = batch.iter().map(|s| s.weight).sum();
    let mut loss = 0.0;
    let residuals = batch
        .iter()
        .map(|s| {
            let z = logits_scaled(weights, scale, bias, s.x);
            let lse = log_sum_exp(&z);
            loss += s.weight * (lse - z[s.label as usize]);
            let c = s.weight / total_w;
            z.iter()
                .enumerate()
                .map(|(k, zk)| {
                    let p = (zk - lse).exp();
                    let y = if k == s.label as usize { 1.0 } else { 0.0 };
                    c * (p - y)
                })
                .collect()
        })
        .collect();
    (loss / total_w, residuals)
}

/// Weighted cross-entropy, normalized by total sample weight, plus
/// `l2_penalty * ||weights||^2`; returns the loss and its exact gradient.
pub fn loss_and_grad(
    model: &LinearModel,
    batch: &[Sample],
    l2_penalty: f64,
) -> Result<(f64, Gradient)> {
    if batch.is_empty() {
        return Err(ClassifierError::EmptyData);
    }
    for s in batch {
        check_sample(model, s)?;
    }
    let k = model.num_classes;
    let (data_loss, residuals) = batch_residuals(&model.weights, 1.0, &model.bias, batch);
    let mut grad = Gradient {
        weights: model.weights.iter().map(|w| 2.0 * l2_penalty * w).collect(),
        bias: vec![0.0; k],
    };
    for (s, r) in batch.iter().zip(&residuals) {
        for &(j, v) in &s.x.entries {
            let row = &mut grad.weights[j as usize * k..(j as usize + 1) * k];
            for (g, rk) in row.iter_mut().zip(r) {
                *g += rk * v;
            }
        }
        for (g, rk) in grad.bias.iter_mut().zip(r) {
            *g += rk;
        }
    }
    Ok((data_loss + l2_penalty * model.squared_weight_norm(), grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub warmup_fraction: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub l2_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 16,
            max_epochs: 6,
            warmup_fraction: 0.1,
            early_stop_patience: 2,
            seed: 0,
            l2_penalty: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ClassifierError::BadConfig(m.to_string()));
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.max_epochs < 1 {
            return bad("max_epochs must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1]");
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return bad("l2_penalty must be non-negative");
        }
        Ok(())
    }
}

/// Linear warm-up from 0 to `peak` over `warmup_steps`, then linear decay to
/// 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        Self {
            peak,
            warmup_steps: (warmup_fraction * total_steps as f64).floor() as usize,
            total_steps,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.peak * step as f64 / self.warmup_steps as f64
        } else if step >= self.total_steps {
            0.0
        } else {
            let remaining = (self.total_steps - step) as f64;
            let span = (self.total_steps - self.warmup_steps).max(1) as f64;
            self.peak * remaining / span
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Tracks the best dev score; ties keep the earliest epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Record an epoch score; returns true if it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if score > self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.patience > 0 && self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Borrowed features plus labels.
#[derive(Debug, Clone, Copy)]
pub struct Examples<'a> {
    pub features: &'a [FeatureVector],
    pub labels: &'a [u32],
}

impl<'a> Examples<'a> {
    pub fn new(features: &'a [FeatureVector], labels: &'a [u32]) -> Self {
        assert_eq!(features.len(), labels.len(), "features/labels length mismatch");
        Self { features, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Dev macro-F1 and mean (unweighted) cross-entropy.
pub fn dev_metrics(model: &LinearModel, dev: Examples) -> Result<(f64, f64)> {
    let mut preds = Vec::with_capacity(dev.len());
    let mut loss = 0.0;
    for (x, &y) in dev.features.iter().zip(dev.labels) {
        let z = model.logits(x)?;
        loss += log_sum_exp(&z) - z[y as usize];
        preds.push(argmax(&softmax(&z)) as u32);
    }
    let f1 = fairmetrics::macro_f1(dev.labels, &preds, model.num_classes)
        .map_err(|e| ClassifierError::BadConfig(e.to_string()))?;
    Ok((f1, loss / dev.len() as f64))
}

pub fn train(
    train_data: Examples,
    dev_data: Examples,
    num_classes: usize,
    class_weights: Option<&[f64]>,
    cfg: &TrainConfig,
) -> Result<(LinearModel, TrainReport)> {
    if dev_data.is_empty() {
        return Err(ClassifierError::EmptyData);
    }
    for &y in dev_data.labels {
        if y as usize >= num_classes {
            return Err(ClassifierError::LabelOutOfRange {
                label: y,
                num_classes,
            });
        }
    }
    train_with_monitor(train_data, num_classes, class_weights, cfg, |m| {
        dev_metrics(m, dev_data)
    })
}

/// Training loop with a caller-supplied end-of-epoch evaluator returning
/// `(macro_f1, loss)` for the dev data.
pub fn train_with_monitor<F>(
    train_data: Examples,
    num_classes: usize,
    class_weights: Option<&[f64]>,
    cfg: &TrainConfig,
    mut monitor: F,
) -> Result<(LinearModel, TrainReport)>
where
    F: FnMut(&LinearModel) -> Result<(f64, f64)>,
{
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(ClassifierError::EmptyData);
    }
    if num_classes < 2 {
        return Err(ClassifierError::BadConfig("need at least 2 classes".into()));
    }
    let dim = train_data.features[0].dim;
    let uniform = vec![1.0; num_classes];
    let cw = class_weights.unwrap_or(&uniform);
    if cw.len() != num_classes {
        return Err(ClassifierError::BadConfig(format!(
            "expected {num_classes} class weights, got {}",
            cw.len()
        )));
    }
    if let Some(&w) = cw.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(ClassifierError::BadWeight(w));
    }
    let mut model = LinearModel::zeros(num_classes, dim);
    for (x, &y) in train_data.features.iter().zip(train_data.labels) {
        check_sample(
            &model,
            &Sample {
                x,
                label: y,
                weight: cw.get(y as usize).copied().unwrap_or(1.0),
            },
        )?;
    }

    let n = train_data.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let schedule = LrSchedule::new(
        cfg.learning_rate,
        cfg.warmup_fraction,
        steps_per_epoch * cfg.max_epochs,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();

    // Effective weights are `scale * v`; the L2 shrinkage is folded into
    // `scale` so each step only touches the columns present in the batch.
    let mut v = vec![0.0; num_classes * dim];
    let mut scale = 1.0f64;
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut best: Option<LinearModel> = None;
    let mut epochs = Vec::new();
    let mut step = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let lr = schedule.lr(step);
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&i| Sample {
                    x: &train_data.features[i],
                    label: train_data.labels[i],
                    weight: cw[train_data.labels[i] as usize],
                })
                .collect();
            let (loss, residuals) = batch_residuals(&v, scale, &model.bias, &batch);
            if !loss.is_finite() {
                return Err(ClassifierError::NonFiniteLoss { epoch, step, lr });
            }
            loss_sum += loss;

            let new_scale = scale * (1.0 - 2.0 * lr * cfg.l2_penalty);
            let step_size = lr / new_scale;
            for (s, r) in batch.iter().zip(&residuals) {
                for &(j, x) in &s.x.entries {
                    let row = &mut v[j as usize * num_classes..(j as usize + 1) * num_classes];
                    for (w, rk) in row.iter_mut().zip(r) {
                        *w -= step_size * rk * x;
                    }
                }
            }
            for (b, g) in model
                .bias
                .iter_mut()
                .zip((0..num_classes).map(|k| residuals.iter().map(|r| r[k]).sum::<f64>()))
            {
                *b -= lr * g;
            }
            scale = new_scale;
            if scale < 1e-6 {
                v.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
            step += 1;
        }

        for (w, vi) in model.weights.iter_mut().zip(&v) {
            *w = scale * vi;
        }
        if !model.is_finite() {
            return Err(ClassifierError::NonFiniteLoss {
                epoch,
                step,
                lr: schedule.lr(step),
            });
        }
        let (dev_f1, dev_loss) = monitor(&model)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / steps_per_epoch as f64,
            dev_loss,
            dev_macro_f1: dev_f1,
        });
        if stopper.observe(epoch, dev_f1) {
            best = Some(model.clone());
        }
        if stopper.should_stop() && epoch < cfg.max_epochs {
            stopped_early = true;
            break;
        }
    }

    let report = TrainReport {
        epochs,
        best_epoch: stopper.best_epoch(),
        stopped_early,
    };
    Ok((best.unwrap_or(model), report))
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"BBLM";
const CHECKPOINT_VERSION: u32 = 1;

/// Binary checkpoint, little-endian:
/// magic `BBLM`, version u32, K u32, D u64, featurizer fingerprint u64,
/// K bias f64, then the number of non-zero feature rows u64 followed by
/// `(feature u32, K x f64)` for each.
pub fn save_checkpoint<W: Write>(
    mut w: W,
    model: &LinearModel,
    featurizer_fingerprint: u64,
) -> Result<()> {
    let k = model.num_classes;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(k as u32).to_le_bytes())?;
    w.write_all(&(model.dim as u64).to_le_bytes())?;
    w.write_all(&featurizer_fingerprint.to_le_bytes())?;
    for b in &model.bias {
        w.write_all(&b.to_le_bytes())?;
    }
    let rows: Vec<(usize, &[f64])> = model
        .weights
        .chunks(k)
        .enumerate()
        .filter(|(_, row)| row.iter().any(|x| *x != 0.0))
        .collect();
    w.write_all(&(rows.len() as u64).to_le_bytes())?;
    for (j, row) in rows {
        w.write_all(&(j as u32).to_le_bytes())?;
        for x in row {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| ClassifierError::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

/// Load a checkpoint, rejecting it if `expected_fingerprint` is given and
/// differs from the stored featurizer fingerprint.
pub fn load_checkpoint<R: Read>(
    mut r: R,
    expected_fingerprint: Option<u64>,
) -> Result<(LinearModel, u64)> {
    if &read_array::<4, _>(&mut r)? != CHECKPOINT_MAGIC {
        return Err(ClassifierError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(ClassifierError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let k = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let dim = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let fingerprint = u64::from_le_bytes(read_array(&mut r)?);
    if let Some(expected) = expected_fingerprint {
        if expected != fingerprint {
            return Err(ClassifierError::FeaturizerMismatch {
                expected,
                found: fingerprint,
            });
        }
    }
    let mut model = LinearModel::zeros(k, dim);
    for b in model.bias.iter_mut() {
        *b = f64::from_le_bytes(read_array(&mut r)?);
    }
    let rows = u64::from_le_bytes(read_array(&mut r)?);
    for _ in 0..rows {
        let j = u32::from_le_bytes(read_array(&mut r)?) as usize;
        if j >= dim {
            return Err(ClassifierError::Checkpoint(format!(
                "feature row {j} out of range"
            )));
        }
        for x in &mut model.weights[j * k..(j + 1) * k] {
            *x = f64::from_le_bytes(read_array(&mut r)?);
        }
    }
    Ok((model, fingerprint))
}
