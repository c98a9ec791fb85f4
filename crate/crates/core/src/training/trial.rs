use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::loss;
use super::optim::Adam;
use super::stopping::run_schedule;
use super::{streams, TrainConfig};
use crate::dataset::make_input;
use crate::error::{Error, Result};
use crate::evaluation::{auc_macro, predict};
use crate::ingest::TileSample;
use crate::models::{FusionModel, Strategy};
use crate::nn::Mode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
    /// Clamped mixture probabilities during the epoch.
    #[serde(default)]
    pub clamped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub strategy: Strategy,
    pub trial_index: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub stopped_epoch: usize,
    pub stopped_early: bool,
    /// Best-validation checkpoint, once written.
    pub checkpoint: Option<PathBuf>,
}

fn labels_of(samples: &[&TileSample]) -> Vec<usize> {
    samples.iter().map(|s| s.label.index()).collect()
}

/// Macro validation AUC of the model in evaluation mode.
pub(crate) fn validation_auc<T: Scalar>(
    model: &mut FusionModel<T>,
    val: &[&TileSample],
    batch_size: usize,
) -> Result<f64> {
    let preds = predict(model, val, batch_size)?;
    auc_macro(&preds.probs, preds.num_classes, &labels_of(val))
}

/// Trains until the validation AUC has been strictly below its best for more
/// than `patience_epochs` epochs, or `max_epochs`. On return the model holds
/// the best-validation weights.
pub fn train_trial<T: Scalar>(
    model: &mut FusionModel<T>,
    train: &[&TileSample],
    val: &[&TileSample],
    config: &TrainConfig,
    trial_index: usize,
) -> Result<TrialResult> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Dataset("training and validation sets must be nonempty".into()));
    }
    let strategy = model.strategy();
    let seed = config.seed_for(trial_index);
    let lr = config.learning_rate_for(strategy);
    let mut shuffle = streams::rng(seed, streams::SHUFFLE);
    let mut adam = Adam::new(lr, config.beta1, config.beta2, config.epsilon);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best_state: Option<BTreeMap<String, Tensor<T>>> = None;

    let model_cell = std::cell::RefCell::new(model);
    let history_cell = std::cell::RefCell::new(&mut history);
    let schedule = run_schedule(
        config.patience_epochs,
        config.max_epochs,
        |epoch| {
            let mut model = model_cell.borrow_mut();
            order.shuffle(&mut shuffle);
            let (mut total, mut clamped) = (0.0, 0);
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<&TileSample> = chunk.iter().map(|&i| train[i]).collect();
                let input = make_input::<T>(&batch, strategy)?;
                let out = model.forward(&input, Mode::Train)?;
                let l = loss(strategy, &out, &labels_of(&batch))?;
                if !l.value.is_finite() {
                    return Err(Error::Dataset(format!("non-finite training loss at epoch {epoch}")));
                }
                model.zero_grad();
                model.backward(&l.grad)?;
                adam.step(&mut model);
                total += l.value * batch.len() as f64;
                clamped += l.clamped;
            }
            let val_auc = validation_auc(&mut model, val, config.batch_size)?;
            let record = EpochRecord {
                epoch,
                train_loss: total / train.len() as f64,
                val_auc,
                clamped,
            };
            log::info!(
                "{strategy} trial {trial_index} epoch {epoch}: loss {:.4} val auc {:.4}",
                record.train_loss,
                val_auc
            );
            history_cell.borrow_mut().push(record);
            Ok(val_auc)
        },
        |_| {
            best_state = Some(model_cell.borrow().state());
            Ok(())
        },
    )?;
    let model = model_cell.into_inner();
    model.load_state(&best_state.expect("at least one epoch ran"))?;
    Ok(TrialResult {
        strategy,
        trial_index,
        seed,
        learning_rate: lr,
        history,
        best_epoch: schedule.best_epoch,
        best_val_auc: schedule.best_auc,
        stopped_epoch: schedule.stopped_epoch,
        stopped_early: schedule.stopped_early,
        checkpoint: None,
    })
}
