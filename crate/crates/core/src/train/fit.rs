use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::loss::{weighted_loss, LossBreakdown};
use crate::datapipe::{make_batches, normalize, split_train_val, LabeledExample};
use crate::error::{Error, Result};
use crate::eval::auc_roc;
use crate::model::{forward_batch, init_model, Checkpoint, HeadKind, ModelConfig, ModelParams};
use crate::numerics::{adam_step, AdamState, Tensor2};
use crate::rng::{derive, STREAM_DROPOUT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 64, max_epochs: 1000, patience: 10, lr: 1e-3, val_fraction: 0.2, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(Error::InvalidConfig("patience must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.batch_size < 2 || self.max_epochs < 1 {
            return Err(Error::InvalidConfig("batch_size must be ≥ 2 and max_epochs ≥ 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// NaN when the validation split holds a single class.
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
}

/// Stops once validation loss has not improved for `patience` epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best_loss: f64::INFINITY, best_epoch: 0 }
    }

    /// Records `epoch`'s loss; returns `true` when it is a new best.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            true
        } else {
            false
        }
    }

    pub fn should_stop(&self, epoch: usize) -> bool {
        epoch >= self.best_epoch + self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Routed probabilities for `examples` (inference mode) and the weighted loss
/// over them treated as a single batch.
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    examples: &[LabeledExample],
) -> Result<(Vec<f64>, LossBreakdown)> {
    let items: Vec<(&Tensor2, HeadKind)> =
        examples.iter().map(|e| (e.series.values(), config.route(e.source))).collect();
    let (probs, _) = forward_batch(params, &items, 0.0, None)?;
    let (mut gp, mut gt, mut lp, mut lt) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for ((p, (_, head)), e) in probs.iter().zip(&items).zip(examples) {
        match head {
            HeadKind::Global => {
                gp.push(*p);
                gt.push(e.target());
            }
            HeadKind::Local => {
                lp.push(*p);
                lt.push(e.target());
            }
        }
    }
    let (breakdown, _) = weighted_loss(&gp, &gt, &lp, &lt, config.alpha)?;
    Ok((probs, breakdown))
}

/// Trains on the combined pools with an 80/20 (by default) stratified
/// validation split, Adam, and early stopping on validation loss. Returns
/// the parameters of the best validation epoch.
pub fn train(
    config: &ModelConfig,
    tconfig: &TrainConfig,
    global: &[LabeledExample],
    local: &[LabeledExample],
) -> Result<TrainOutcome> {
    config.validate()?;
    tconfig.validate()?;
    if local.is_empty() {
        return Err(Error::Precondition("training needs at least one local example".into()));
    }
    if config.multi_headed && global.is_empty() {
        return Err(Error::Precondition("a multi-headed model needs global examples".into()));
    }

    let combined: Vec<LabeledExample> = global.iter().chain(local).cloned().collect();
    let split = split_train_val(&combined, tconfig.val_fraction, tconfig.seed)?;
    let (train_set, stats) = normalize(&split.train, None)?;
    let (val_set, _) = normalize(&split.val, Some(&stats))?;
    let val_labels: Vec<bool> = val_set.iter().map(|e| e.label).collect();

    let mut params = init_model(config)?;
    let mut adam = AdamState::with_lr(&params.tensor_sizes(), tconfig.lr);
    let mut stopper = EarlyStopping::new(tconfig.patience);
    let mut best_params = params.clone();
    let mut epochs = Vec::new();

    for epoch in 1..=tconfig.max_epochs {
        let batches = make_batches(&train_set, tconfig.batch_size, tconfig.seed, epoch)?;
        let mut loss_sum = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let (global_part, local_part): (Vec<&LabeledExample>, Vec<&LabeledExample>) =
                if config.multi_headed {
                    (batch.global.clone(), batch.local.clone())
                } else {
                    (Vec::new(), batch.global.iter().chain(&batch.local).copied().collect())
                };
            let items: Vec<(&Tensor2, HeadKind)> = global_part
                .iter()
                .map(|e| (e.series.values(), HeadKind::Global))
                .chain(local_part.iter().map(|e| (e.series.values(), HeadKind::Local)))
                .collect();
            let dropout_seed = (config.lstm_dropout > 0.0)
                .then(|| derive(tconfig.seed, &[STREAM_DROPOUT, epoch as u64, b as u64]));
            let (probs, tape) = forward_batch(&params, &items, config.lstm_dropout, dropout_seed)?;

            let n_g = global_part.len();
            let gt: Vec<f64> = global_part.iter().map(|e| e.target()).collect();
            let lt: Vec<f64> = local_part.iter().map(|e| e.target()).collect();
            let (breakdown, dloss) = weighted_loss(&probs[..n_g], &gt, &probs[n_g..], &lt, config.alpha)?;
            if !breakdown.total.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            loss_sum += breakdown.total;

            let d_probs: Vec<f64> = dloss.d_global.into_iter().chain(dloss.d_local).collect();
            let grads = tape.backward(&params, &d_probs)?;
            let grad_views: Vec<&[f64]> = grads.named_tensors().into_iter().map(|t| t.data).collect();
            adam_step(&mut adam, &mut params.tensors_mut(), &grad_views)?;
        }

        let (val_probs, val_breakdown) = evaluate(&params, config, &val_set)?;
        if !val_breakdown.total.is_finite() {
            return Err(Error::Diverged { epoch, batch: batches.len() });
        }
        let val_auc = auc_roc(&val_probs, &val_labels).unwrap_or(f64::NAN);
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            val_loss: val_breakdown.total,
            val_auc,
        };
        log::debug!(
            "epoch {epoch}: train {:.5} val {:.5} auc {:.4}",
            record.train_loss,
            record.val_loss,
            record.val_auc
        );
        epochs.push(record);
        if stopper.observe(epoch, val_breakdown.total) {
            best_params = params.clone();
        }
        if stopper.should_stop(epoch) {
            break;
        }
    }

    let stopped_epoch = epochs.len();
    Ok(TrainOutcome {
        checkpoint: Checkpoint { config: config.clone(), normalization: stats, params: best_params },
        history: TrainHistory { epochs, best_epoch: stopper.best_epoch(), stopped_epoch },
    })
}
