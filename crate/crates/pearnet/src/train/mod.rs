//! Training loop, stratified k-fold cross-validation and evaluation.

pub mod metrics;
pub mod optim;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use metrics::{Confusion, Metrics, MetricsReport};
pub use optim::{AdamW, AdamWConfig};

use crate::diff::Tape;
use crate::error::{Error, Result};
use crate::model::{class_weights, LossBreakdown, ModelConfig, PearNetModel};
use crate::signal::{Dataset, NUM_CLASSES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub k_folds: usize,
    /// Set from the run-level seed rather than read from config files.
    #[serde(skip)]
    pub seed: u64,
    pub vif_loss: bool,
    /// Fixed class weights; derived from each training fold when absent.
    pub class_weights: Option<[f64; NUM_CLASSES]>,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 120,
            k_folds: 20,
            seed: 0,
            vif_loss: true,
            class_weights: None,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        if self.k_folds < 2 {
            return Err(Error::config("train.k_folds", "must be >= 2"));
        }
        if let Some(w) = &self.class_weights {
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::config("train.class_weights", "weights must be finite and >= 0"));
            }
        }
        self.optimizer.validate("train.optimizer")
    }
}

/// Loss of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Train and test indices of one fold, each ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split: each class is shuffled, the classes are laid out one
/// after another and position `i` goes to fold `i mod k`.
pub fn kfold_split(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be >= 2, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::invalid(format!("k = {k} exceeds the {} available epochs", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(labels.len());
    for class in 0..=u8::MAX {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        order.extend(members);
    }
    let mut assignment = vec![0; labels.len()];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok((0..k)
        .map(|f| {
            let (test, train) = (0..labels.len()).partition(|&i| assignment[i] == f);
            Fold { train, test }
        })
        .collect())
}

/// A deterministic seed for one role within one fold.
pub fn derive_seed(seed: u64, fold: usize, role: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64 * 16 + role);
    rng.next_u64()
}

/// Train `model` on the epochs at `indices`. Returns the loss of every step.
pub fn fit(
    model: &mut PearNetModel,
    data: &Dataset,
    indices: &[usize],
    cfg: &TrainConfig,
    weights: &[f64; NUM_CLASSES],
    seed: u64,
) -> Result<Vec<StepRecord>> {
    cfg.validate()?;
    if indices.is_empty() {
        return Err(Error::invalid("no training epochs"));
    }
    if data.epoch_len() != model.config.epoch_len {
        return Err(Error::invalid(format!(
            "dataset epochs have {} samples, model expects {}",
            data.epoch_len(),
            model.config.epoch_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = AdamW::new(cfg.optimizer.clone(), model.store.values());
    let mut order = indices.to_vec();
    let mut trace = Vec::new();
    let epochs = data.epochs();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let samples: Vec<&[f64]> = batch.iter().map(|&i| epochs[i].samples.as_slice()).collect();
            let labels: Vec<u8> = batch.iter().map(|&i| epochs[i].label).collect();
            let mut tape = Tape::new();
            let p = model.store.bind(&mut tape);
            let loss = model.total_loss(&mut tape, &p, &samples, &labels, weights, cfg.vif_loss, true, &mut rng)?;
            let b = loss.breakdown(&tape);
            let step = trace.len();
            if !b.total.is_finite() {
                return Err(Error::Diverged { step, value: b.total });
            }
            tape.backward(loss.total)?;
            let grads = model.store.grads(&tape, &p);
            opt.step(model.store.values_mut(), &grads)?;
            trace.push(StepRecord { epoch, step, loss: b });
        }
    }
    Ok(trace)
}

/// Most probable class, lowest index on ties.
pub fn argmax(probs: &[f64]) -> u8 {
    let mut best = 0;
    for k in 1..probs.len() {
        if probs[k] > probs[best] {
            best = k;
        }
    }
    best as u8
}

/// Eval-mode metrics on the epochs at `indices`.
pub fn evaluate(model: &PearNetModel, data: &Dataset, indices: &[usize]) -> Result<Metrics> {
    if indices.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty index set"));
    }
    let epochs = data.epochs();
    let samples: Vec<&[f64]> = indices.iter().map(|&i| epochs[i].samples.as_slice()).collect();
    let truth: Vec<u8> = indices.iter().map(|&i| epochs[i].label).collect();
    let predicted: Vec<u8> = model.predict(&samples)?.iter().map(|p| argmax(p)).collect();
    Metrics::from_predictions(&truth, &predicted)
}

/// Outcome of a full cross-validation run.
#[derive(Clone, Debug)]
pub struct CvOutcome {
    pub report: MetricsReport,
    pub traces: Vec<Vec<StepRecord>>,
    /// Model trained on the first fold.
    pub first_model: PearNetModel,
}

/// Train and evaluate one model per fold; metrics are pooled over folds.
/// `on_fold` sees each fold's index and test metrics as it finishes.
pub fn cross_validate(
    data: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut on_fold: impl FnMut(usize, &Metrics),
) -> Result<CvOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    let folds = kfold_split(&data.labels(), cfg.k_folds, derive_seed(cfg.seed, 0, 15))?;
    let labels = data.labels();
    let mut fold_metrics = Vec::with_capacity(folds.len());
    let mut traces = Vec::with_capacity(folds.len());
    let mut first_model = None;
    for (f, fold) in folds.iter().enumerate() {
        let mut model = PearNetModel::new(model_cfg.clone(), derive_seed(cfg.seed, f, 0))?;
        let weights = match cfg.class_weights {
            Some(w) => w,
            None => class_weights(&fold.train.iter().map(|&i| labels[i]).collect::<Vec<_>>())?,
        };
        let trace = fit(&mut model, data, &fold.train, cfg, &weights, derive_seed(cfg.seed, f, 1))?;
        let m = evaluate(&model, data, &fold.test)?;
        on_fold(f, &m);
        fold_metrics.push(m);
        traces.push(trace);
        if f == 0 {
            first_model = Some(model);
        }
    }
    Ok(CvOutcome {
        report: MetricsReport::pool(fold_metrics)?,
        traces,
        first_model: first_model.expect("at least two folds"),
    })
}

#[cfg(test)]
mod tests;
