//! Training loop: Adam with bias correction, per-epoch validation, early
//! stopping on macro F1, and the evaluation entry point. The run is fully
//! determined by `{seed, config, dataset}`.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{Dataset, SampleRecord};
use crate::metrics::{compute_metrics, MetricsError, MetricsReport};
use crate::model::{Medformer, ModelConfig, ModelError, Variant};
use crate::nn::{cross_entropy, ForwardCtx};
use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("train: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without validation-F1 improvement.
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 41,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lr < 0.0 {
            return Err(TrainError::Invalid("learning rate must be >= 0".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(TrainError::Invalid(
                "batch_size, max_epochs, patience must be positive".into(),
            ));
        }
        if self.patience > self.max_epochs {
            return Err(TrainError::Invalid(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

/// First/second moment buffers, one pair per parameter tensor.
pub struct AdamState<T: Scalar> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update from the parameters' accumulated gradients:
/// m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2; bias-corrected;
/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
/// Parameters without a gradient are left untouched.
pub fn adam_step<T: Scalar>(params: &[Tensor<T>], state: &mut AdamState<T>, cfg: &TrainConfig) {
    state.step += 1;
    let b1 = T::cast_from(cfg.beta1);
    let b2 = T::cast_from(cfg.beta2);
    let one = T::one();
    let lr = T::cast_from(cfg.lr);
    let eps = T::cast_from(cfg.eps);
    let bias1 = T::cast_from(1.0 - cfg.beta1.powi(state.step as i32));
    let bias2 = T::cast_from(1.0 - cfg.beta2.powi(state.step as i32));

    for (i, p) in params.iter().enumerate() {
        let Some(grad) = p.grad() else { continue };
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        p.with_data_mut(|data| {
            for j in 0..data.len() {
                let g = grad[j];
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                data[j] = data[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
}

/// Maximize validation F1; strict improvement resets the counter, so ties
/// keep the earliest epoch.
pub struct EarlyStopper {
    patience: usize,
    best_f1: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { patience, best_f1: f64::NEG_INFINITY, best_epoch: 0, stale: 0 }
    }

    /// Record an epoch's validation F1; returns true when it improved.
    pub fn update(&mut self, epoch: usize, f1: f64) -> bool {
        if f1 > self.best_f1 {
            self.best_f1 = f1;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_f1(&self) -> f64 {
        self.best_f1
    }
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub wall_clock_secs: f64,
}

impl RunLog {
    /// Deterministic CSV: epoch, train loss, six validation metrics.
    /// Wall-clock deliberately excluded so two identical runs emit identical
    /// bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,accuracy,precision,recall,f1,auroc,auprc\n");
        for e in &self.epochs {
            let v = e.val.values();
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                e.epoch, e.train_loss, v[0], v[1], v[2], v[3], v[4], v[5]
            ));
        }
        out
    }

    pub fn best_val_f1(&self) -> f64 {
        self.epochs
            .iter()
            .map(|e| e.val.f1)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn to_scalar_batch<T: Scalar>(records: &[SampleRecord]) -> (Vec<Vec<T>>, Vec<usize>) {
    let series = records
        .iter()
        .map(|r| r.series.iter().map(|&v| T::cast_from(v as f64)).collect())
        .collect();
    let labels = records.iter().map(|r| r.label as usize).collect();
    (series, labels)
}

/// Eval-mode metrics of the model on a record set.
pub fn evaluate<T: Scalar>(model: &Medformer<T>, records: &[SampleRecord]) -> Result<MetricsReport, TrainError> {
    if records.is_empty() {
        return Err(TrainError::Invalid("evaluation set is empty".into()));
    }
    let (series, labels) = to_scalar_batch::<T>(records);
    let mut probs = Vec::with_capacity(series.len());
    for s in &series {
        probs.push(model.predict_proba(s)?);
    }
    Ok(compute_metrics(&probs, &labels, model.config().num_classes)?)
}

/// Adam training with early stopping on validation F1. On return the model
/// holds the parameters of the best-F1 epoch (earliest on ties) and the log
/// records every epoch that ran.
pub fn train<T: Scalar>(
    model: &Medformer<T>,
    train_records: &[SampleRecord],
    val_records: &[SampleRecord],
    cfg: &TrainConfig,
) -> Result<RunLog, TrainError> {
    cfg.validate()?;
    if train_records.is_empty() || val_records.is_empty() {
        return Err(TrainError::Invalid("train and val sets must be nonempty".into()));
    }
    let started = Instant::now();
    let (series, labels) = to_scalar_batch::<T>(train_records);
    let params = model.params();
    let mut adam = AdamState::new(&params);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best_snapshot = model.param_snapshot();
    let mut epochs = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..series.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Vec<T>> = chunk.iter().map(|&i| series[i].clone()).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut ctx = ForwardCtx::train(rng.gen::<u64>());
            // fold the forward's own non-finite fail-fast into the NaN
            // diagnostic so the abort always names (epoch, batch)
            let non_finite = |e: ModelError| match e {
                ModelError::Tensor(TensorError::NonFinite { .. }) => {
                    TrainError::NanLoss { epoch, batch: batch_index }
                }
                other => TrainError::Model(other),
            };
            let logits = model.forward_batch(&batch, &mut ctx).map_err(non_finite)?;
            let loss = cross_entropy(&logits, &batch_labels)?;
            let loss_value = loss.item().cast_f64();
            if !loss_value.is_finite() {
                return Err(TrainError::NanLoss { epoch, batch: batch_index });
            }
            loss_sum += loss_value * chunk.len() as f64;
            for p in &params {
                p.zero_grad();
            }
            loss.backward()?;
            adam_step(&params, &mut adam, cfg);
        }
        let train_loss = loss_sum / series.len() as f64;

        let val = evaluate(model, val_records)?;
        if stopper.update(epoch, val.f1) {
            best_snapshot = model.param_snapshot();
        }
        epochs.push(EpochLog { epoch, train_loss, val });
        if stopper.should_stop() {
            break;
        }
    }

    model.restore_snapshot(&best_snapshot);
    Ok(RunLog {
        epochs,
        best_epoch: stopper.best_epoch(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// One ablation table row: per-metric mean and population std over seeds.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

pub fn summarize_runs(values: &[[f64; 6]]) -> ([f64; 6], [f64; 6]) {
    let n = values.len() as f64;
    let mut mean = [0.0; 6];
    let mut std = [0.0; 6];
    for v in values {
        for i in 0..6 {
            mean[i] += v[i] / n;
        }
    }
    for v in values {
        for i in 0..6 {
            std[i] += (v[i] - mean[i]) * (v[i] - mean[i]) / n;
        }
    }
    for s in &mut std {
        *s = s.sqrt();
    }
    (mean, std)
}

/// Train and test every ablation variant under each seed.
pub fn run_ablation<T: Scalar>(
    base: &ModelConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    test_set: &Dataset,
    train_cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let mut cfg = base.clone();
        cfg.variant = variant;
        let mut results = Vec::new();
        for &seed in seeds {
            let model = Medformer::<T>::seeded(cfg.clone(), seed)?;
            let mut run_cfg = train_cfg.clone();
            run_cfg.seed = seed;
            train(&model, &train_set.records, &val_set.records, &run_cfg)?;
            results.push(evaluate(&model, &test_set.records)?.values());
        }
        let (mean, std) = summarize_runs(&results);
        rows.push(AblationRow { variant, mean, std });
    }
    Ok(rows)
}

/// CSV for the ablation table: variant, six means, six stds.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "variant,accuracy,precision,recall,f1,auroc,auprc,\
         accuracy_std,precision_std,recall_std,f1_std,auroc_std,auprc_std\n",
    );
    for r in rows {
        out.push_str(&r.variant.to_string());
        for v in r.mean.iter().chain(r.std.iter()) {
            out.push_str(&format!(",{:.6}", v));
        }
        out.push('\n');
    }
    out
}
