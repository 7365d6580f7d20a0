//! Mini-batch gradient training with momentum, learning-rate scheduling,
//! and best-checkpoint tracking.
//!
//! Each epoch re-draws augmentations per sample (keyed by epoch and sample
//! index), shuffles batch order, walks batches on a fresh tape, and applies
//! one optimizer step per batch using the mean per-sample loss. Validation
//! runs a pure forward pass; with no validation split the training loss
//! stands in. The checkpoint (when a path is given) is rewritten whenever
//! validation improves, so it always holds the best-so-far parameters. The
//! learning rate never increases: it decays by a fixed factor on a fixed
//! epoch interval, decays again after a patience run of non-improving
//! epochs, and is floored at `min_lr`.

use std::path::Path;

use crate::datapipe::augment::AugmentConfig;
use crate::datapipe::{batch_indices, prepare_sample, Sample};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::segnet::SegNet;
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::checkpoint::save_params;
use super::loss::{bce_dice_taped, bce_dice_value};
use super::metrics::evaluate_masks;

/// Parameter update rule.
#[derive(Debug, Clone, Copy)]
pub enum Optimizer {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Sgd { momentum: 0.9 }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_bce: f64,
    pub lambda_dice: f64,
    pub optimizer: Optimizer,
    /// Decay the rate by `step_factor` every `step_interval` epochs (0 disables).
    pub step_interval: usize,
    pub step_factor: f64,
    /// Decay by `plateau_factor` after this many consecutive epochs without
    /// validation improvement.
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    /// Seed for per-epoch batch shuffling.
    pub shuffle_seed: u64,
    /// Mask threshold used for IoU-based early stopping and evaluation.
    pub threshold: f64,
    /// Stop once pooled training IoU reaches this value (checked per epoch).
    pub stop_at_train_iou: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 4,
            learning_rate: 0.1,
            lambda_bce: 1.0,
            lambda_dice: 1.0,
            optimizer: Optimizer::default(),
            step_interval: 20,
            step_factor: 0.5,
            plateau_patience: 5,
            plateau_factor: 0.1,
            min_lr: 1e-6,
            shuffle_seed: 0,
            threshold: 0.5,
            stop_at_train_iou: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "train: learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train: batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "train: threshold must lie in [0,1], got {}",
                self.threshold
            )));
        }
        for (name, v) in [
            ("lambda_bce", self.lambda_bce),
            ("lambda_dice", self.lambda_dice),
            ("step_factor", self.step_factor),
            ("plateau_factor", self.plateau_factor),
            ("min_lr", self.min_lr),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "train: {} must be finite and non-negative, got {}",
                    name, v
                )));
            }
        }
        Ok(())
    }
}

/// Mutable scheduler state carried across epochs.
#[derive(Debug, Clone, Copy)]
pub struct TrainState {
    /// Current epoch, 1-based; 0 before training starts.
    pub epoch: usize,
    pub lr: f64,
    pub best_val_loss: f64,
    pub since_improve: usize,
}

impl TrainState {
    pub fn new(initial_lr: f64) -> Self {
        TrainState { epoch: 0, lr: initial_lr, best_val_loss: f64::INFINITY, since_improve: 0 }
    }
}

/// Apply the post-epoch learning-rate schedule: record improvement, decay
/// on the step interval, decay on plateau, floor at `min_lr`, and never
/// let the rate increase.
pub fn update_learning_rate(state: &mut TrainState, cfg: &TrainConfig, val_loss: f64) {
    let improved = val_loss < state.best_val_loss;
    if improved {
        state.best_val_loss = val_loss;
        state.since_improve = 0;
    } else {
        state.since_improve += 1;
    }
    let mut lr = state.lr;
    if cfg.step_interval > 0 && state.epoch % cfg.step_interval == 0 {
        lr *= cfg.step_factor;
    }
    if !improved && state.since_improve >= cfg.plateau_patience {
        lr *= cfg.plateau_factor;
        state.since_improve = 0;
    }
    lr = lr.max(cfg.min_lr);
    if lr > state.lr {
        lr = state.lr;
    }
    state.lr = lr;
}

/// One history row. `lr` is the rate used during the epoch (pre-update).
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub history: Vec<EpochStats>,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Write history as CSV with header `epoch,train_loss,val_loss,lr`.
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for h in history {
        out.push_str(&format!("{},{},{},{}\n", h.epoch, h.train_loss, h.val_loss, h.lr));
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct OptState<T: Scalar> {
    velocity: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: usize,
}

impl<T: Scalar> OptState<T> {
    fn new(net: &SegNet<T>) -> Self {
        let zeros: Vec<Tensor<T>> =
            net.params().iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        OptState { velocity: zeros.clone(), second: zeros, step: 0 }
    }

    fn apply(&mut self, net: &mut SegNet<T>, opt: Optimizer, lr: f64) {
        self.step += 1;
        let lr_t = T::from_f64(lr);
        match opt {
            Optimizer::Sgd { momentum } => {
                let mu = T::from_f64(momentum);
                for (p, v) in net.params_mut().iter_mut().zip(&mut self.velocity) {
                    let vd = v.data_mut();
                    let pd = p.value.data_mut();
                    for ((vi, pi), &gi) in vd.iter_mut().zip(pd.iter_mut()).zip(p.grad.data()) {
                        *vi = mu * *vi + gi;
                        *pi -= lr_t * *vi;
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let b1 = T::from_f64(beta1);
                let b2 = T::from_f64(beta2);
                let one = T::ONE;
                let bc1 = T::from_f64(1.0 - beta1.powi(self.step as i32));
                let bc2 = T::from_f64(1.0 - beta2.powi(self.step as i32));
                let eps_t = T::from_f64(eps);
                for ((p, m), v) in
                    net.params_mut().iter_mut().zip(&mut self.velocity).zip(&mut self.second)
                {
                    let md = m.data_mut();
                    let vd = v.data_mut();
                    let pd = p.value.data_mut();
                    for (((mi, vi), pi), &gi) in
                        md.iter_mut().zip(vd.iter_mut()).zip(pd.iter_mut()).zip(p.grad.data())
                    {
                        *mi = b1 * *mi + (one - b1) * gi;
                        *vi = b2 * *vi + (one - b2) * gi * gi;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        *pi -= lr_t * m_hat / (v_hat.sqrt() + eps_t);
                    }
                }
            }
        }
    }
}

fn mean_val_loss<T: Scalar>(net: &SegNet<T>, prepared: &[Sample], cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0f64;
    for s in prepared {
        let p = net.forward(&s.image.cast::<T>())?;
        total += bce_dice_value(&p, &s.mask.cast::<T>(), cfg.lambda_bce, cfg.lambda_dice)?;
    }
    Ok(total / prepared.len() as f64)
}

fn pooled_train_iou<T: Scalar>(
    net: &SegNet<T>,
    prepared: &[Sample],
    threshold: f64,
) -> Result<f64> {
    let mut preds = Vec::with_capacity(prepared.len());
    let mut truths = Vec::with_capacity(prepared.len());
    for s in prepared {
        preds.push(net.predict_mask(&s.image.cast::<T>(), threshold)?);
        truths.push(s.mask.cast::<T>());
    }
    Ok(evaluate_masks(&preds, &truths)?.micro.iou)
}

/// Train the network in place. `train_base` and `val` hold raw [0,1]
/// samples; augmentation (train only) and normalization happen per epoch
/// inside the loop. Returns the per-epoch history; on a non-finite loss
/// the error names the offending epoch.
pub fn train_model<T: Scalar>(
    net: &mut SegNet<T>,
    train_base: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    checkpoint_path: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainResult> {
    cfg.validate()?;
    aug.validate()?;
    if train_base.is_empty() {
        return Err(Error::Data("train: no training samples".into()));
    }
    let off = AugmentConfig::off();
    let val_prepared: Vec<Sample> = val
        .iter()
        .enumerate()
        .map(|(i, s)| prepare_sample(s, &off, 0, i))
        .collect::<Result<_>>()?;
    // Normalized-but-unaugmented training samples, for IoU early stopping.
    let train_eval: Vec<Sample> = if cfg.stop_at_train_iou.is_some() {
        train_base
            .iter()
            .enumerate()
            .map(|(i, s)| prepare_sample(s, &off, 0, i))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let mut opt_state = OptState::new(net);
    let mut state = TrainState::new(cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_epoch = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        state.epoch = epoch;
        let lr_used = state.lr;
        let batches =
            batch_indices(train_base.len(), cfg.batch_size, true, cfg.shuffle_seed, epoch)?;
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;

        for batch in batches {
            net.zero_grads();
            let mut tape: Tape<T> = Tape::new();
            let binds = net.bind(&mut tape);
            let mut batch_loss = None;
            for &idx in &batch {
                let s = prepare_sample(&train_base[idx], aug, epoch, idx)?;
                let x = tape.leaf(s.image.cast::<T>());
                let y = tape.leaf(s.mask.cast::<T>());
                let p = net.forward_taped(&mut tape, x, &binds)?;
                let l = bce_dice_taped(&mut tape, p, y, cfg.lambda_bce, cfg.lambda_dice)?;
                batch_loss = Some(match batch_loss {
                    None => l,
                    Some(acc) => tape.add(acc, l)?,
                });
            }
            let total = batch_loss.expect("batches are non-empty");
            let loss_id = tape.scale(total, T::from_f64(1.0 / batch.len() as f64));
            let loss_val = tape.value(loss_id).item()?.to_f64();
            if !loss_val.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("batch loss is {}", loss_val),
                });
            }
            let mut grads = tape.backward(loss_id)?;
            net.accumulate_grads(&mut grads, &binds)?;
            opt_state.apply(net, cfg.optimizer, lr_used);
            loss_sum += loss_val * batch.len() as f64;
            seen += batch.len();
        }

        let train_loss = loss_sum / seen as f64;
        let val_loss = if val_prepared.is_empty() {
            train_loss
        } else {
            mean_val_loss(net, &val_prepared, cfg)?
        };
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("validation loss is {}", val_loss),
            });
        }

        let improved = val_loss < state.best_val_loss;
        if improved {
            best_epoch = epoch;
            if let Some(path) = checkpoint_path {
                save_params(path, net.params())?;
            }
        }
        let stats = EpochStats { epoch, train_loss, val_loss, lr: lr_used };
        history.push(stats);
        on_epoch(&stats);
        update_learning_rate(&mut state, cfg, val_loss);

        if let Some(target) = cfg.stop_at_train_iou {
            if pooled_train_iou(net, &train_eval, cfg.threshold)? >= target {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainResult {
        history,
        best_val_loss: state.best_val_loss,
        best_epoch,
        stopped_early,
    })
}
