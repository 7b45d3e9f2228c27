//! Loss, optimiser, one-cycle schedule, gradient accumulation, early stopping
//! and decision-threshold search.

mod optim;
mod schedule;
mod threshold;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::AdamW;
pub use schedule::LrSchedule;
pub use threshold::{optimize_threshold, ThresholdGrid};

use crate::error::{HtdsError, Result};
use crate::metrics::micro_f1;
use crate::model::{model_backward, model_forward, round_to_f32, ModelConfig, ModelParams};
use crate::pipeline::{predict_all, PreparedStay};

pub const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub epochs_max: usize,
    pub patience: usize,
    pub effective_batch: usize,
    pub micro_batch: usize,
    pub phase_fracs: [f64; 3],
    pub lr_div_start: f64,
    pub lr_div_final: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub threshold_grid: ThresholdGrid,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 5e-5,
            epochs_max: 20,
            patience: 5,
            effective_batch: 16,
            micro_batch: 1,
            phase_fracs: [0.3, 0.3, 0.4],
            lr_div_start: 25.0,
            lr_div_final: 1000.0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            threshold_grid: ThresholdGrid::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_max == 0 || self.effective_batch == 0 || self.micro_batch == 0 {
            return Err(HtdsError::Config("epochs_max, effective_batch and micro_batch must be >= 1".into()));
        }
        if !self.effective_batch.is_multiple_of(self.micro_batch) {
            return Err(HtdsError::Config(format!(
                "effective_batch {} is not a multiple of micro_batch {}",
                self.effective_batch, self.micro_batch
            )));
        }
        if self.phase_fracs.iter().any(|&f| f < 0.0) || (self.phase_fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(HtdsError::Config(format!("phase fractions {:?} must sum to 1", self.phase_fracs)));
        }
        self.threshold_grid.validate()
    }

    pub fn accumulation_steps(&self) -> usize {
        self.effective_batch / self.micro_batch
    }

    pub fn schedule(&self, total_steps: usize) -> Result<LrSchedule> {
        LrSchedule::new(total_steps, self.peak_lr, self.phase_fracs, self.lr_div_start, self.lr_div_final)
    }
}

/// Mean binary cross-entropy over labels, probabilities clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(probs: &[f64], gold: &[f64]) -> Result<f64> {
    if probs.len() != gold.len() || probs.is_empty() {
        return Err(HtdsError::Shape(format!("{} probabilities for {} labels", probs.len(), gold.len())));
    }
    let sum: f64 = probs
        .iter()
        .zip(gold)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / probs.len() as f64)
}

/// Accumulates `scale * grad` of each stay's loss into `grads`; returns the
/// summed (unscaled) loss.
pub fn accumulate_gradients(params: &ModelParams, cfg: &ModelConfig, stays: &[&PreparedStay], scale: f64, grads: &mut ModelParams) -> Result<f64> {
    let mut loss = 0.0;
    for s in stays {
        let trace = model_forward(params, cfg, &s.chunks)?;
        loss += bce_loss(&trace.probs, &s.gold)?;
        model_backward(params, cfg, &trace, &s.gold, scale, grads)?;
    }
    Ok(loss)
}

/// Mean loss over `stays` and its gradient.
pub fn batch_gradient(params: &ModelParams, cfg: &ModelConfig, stays: &[&PreparedStay]) -> Result<(f64, ModelParams)> {
    let mut grads = params.zeros_like();
    let n = stays.len().max(1) as f64;
    let loss = accumulate_gradients(params, cfg, stays, 1.0 / n, &mut grads)?;
    Ok((loss / n, grads))
}

/// One optimiser update: gradients of every micro-batch are accumulated and
/// averaged over all stays, then a single AdamW step is taken at `lr`.
pub fn train_step(params: &mut ModelParams, opt: &mut AdamW, cfg: &ModelConfig, micro_batches: &[Vec<&PreparedStay>], lr: f64) -> Result<f64> {
    let total: usize = micro_batches.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(HtdsError::Data("empty optimisation step".into()));
    }
    let scale = 1.0 / total as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for mb in micro_batches {
        loss += accumulate_gradients(params, cfg, mb, scale, &mut grads)?;
    }
    let loss = loss / total as f64;
    if !loss.is_finite() {
        return Err(HtdsError::Numeric(format!("non-finite loss {loss} over {total} stays")));
    }
    opt.step(params, &grads, lr);
    Ok(loss)
}

/// Training log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Step { step: usize, epoch: usize, lr: f64, loss: f64 },
    Epoch { epoch: usize, dev_micro_f1: f64, threshold: f64, improved: bool },
}

impl LogRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("serialisable log record")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopState {
    pub best_score: f64,
    pub best_epoch: Option<usize>,
    pub since_improvement: usize,
}

impl Default for EarlyStopState {
    fn default() -> Self {
        EarlyStopState { best_score: f64::NEG_INFINITY, best_epoch: None, since_improvement: 0 }
    }
}

impl EarlyStopState {
    /// Records an epoch score; true when it strictly improves on the best.
    pub fn update(&mut self, epoch: usize, score: f64) -> bool {
        if score > self.best_score {
            self.best_score = score;
            self.best_epoch = Some(epoch);
            self.since_improvement = 0;
            true
        } else {
            self.since_improvement += 1;
            false
        }
    }

    pub fn should_stop(&self, patience: usize) -> bool {
        self.since_improvement >= patience
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Best-epoch parameters, rounded to checkpoint precision.
    pub params: ModelParams,
    pub threshold: f64,
    pub best_epoch: usize,
    pub best_dev_micro_f1: f64,
    pub epochs_run: usize,
    pub log: Vec<LogRecord>,
}

/// Dev micro-F1 at the best grid threshold.
pub fn dev_score(params: &ModelParams, cfg: &ModelConfig, dev: &[PreparedStay], grid: &ThresholdGrid, threads: usize) -> Result<(f64, f64)> {
    let probs = predict_all(params, cfg, dev, threads)?;
    let gold: Vec<Vec<bool>> = dev.iter().map(PreparedStay::gold_bool).collect();
    let t = optimize_threshold(&probs, &gold, grid)?;
    Ok((micro_f1(&probs, &gold, t), t))
}

/// Epoch loop with one-cycle schedule, gradient accumulation and early
/// stopping on dev micro-F1. Parameters are initialised from `cfg.seed`.
pub fn fit(train: &[PreparedStay], dev: &[PreparedStay], model_cfg: &ModelConfig, cfg: &TrainConfig, threads: usize) -> Result<FitResult> {
    let params = ModelParams::init(model_cfg, cfg.seed)?;
    fit_from(params, train, dev, model_cfg, cfg, threads)
}

pub fn fit_from(mut params: ModelParams, train: &[PreparedStay], dev: &[PreparedStay], model_cfg: &ModelConfig, cfg: &TrainConfig, threads: usize) -> Result<FitResult> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train.is_empty() {
        return Err(HtdsError::Data("training split is empty".into()));
    }
    if dev.is_empty() {
        return Err(HtdsError::Data("dev split is empty".into()));
    }
    let steps_per_epoch = train.len().div_ceil(cfg.effective_batch);
    let schedule = cfg.schedule(cfg.epochs_max * steps_per_epoch)?;
    let mut opt = AdamW::new(&params, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut log = Vec::new();
    let mut stop = EarlyStopState::default();
    let mut best: Option<(ModelParams, f64)> = None;
    let mut step = 0;
    let mut epochs_run = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs_max {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.effective_batch) {
            let micro: Vec<Vec<&PreparedStay>> = batch.chunks(cfg.micro_batch).map(|mb| mb.iter().map(|&i| &train[i]).collect()).collect();
            let lr = schedule.lr(step)?;
            let loss = train_step(&mut params, &mut opt, model_cfg, &micro, lr)?;
            log.push(LogRecord::Step { step, epoch, lr, loss });
            step += 1;
        }
        epochs_run = epoch;
        let (score, threshold) = dev_score(&params, model_cfg, dev, &cfg.threshold_grid, threads)?;
        let improved = stop.update(epoch, score);
        log.push(LogRecord::Epoch { epoch, dev_micro_f1: score, threshold, improved });
        if improved {
            let mut snapshot = params.clone();
            round_to_f32(&mut snapshot);
            best = Some((snapshot, threshold));
        }
        if stop.should_stop(cfg.patience) {
            break;
        }
    }
    let (params, threshold) = best.expect("at least one epoch ran");
    Ok(FitResult {
        params,
        threshold,
        best_epoch: stop.best_epoch.expect("at least one epoch ran"),
        best_dev_micro_f1: stop.best_score,
        epochs_run,
        log,
    })
}
