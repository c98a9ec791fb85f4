//! Seeded multi-trial training: losses, Adam, AUC-patience early stopping,
//! resumable experiment runs and a learning-rate sweep.

mod experiment;
mod loss;
mod optim;
mod stopping;
mod trial;

use serde::{Deserialize, Serialize};

pub use experiment::{
    load_completed, run_experiment, trial_dir, tune_lr, ExperimentConfig, ExperimentData, ExperimentRun, CHECKPOINT_FILE, COMPLETE_MARKER,
};
pub use loss::{loss, LossOutput, PROB_FLOOR};
pub use optim::Adam;
pub use stopping::{run_schedule, EarlyStopping, Schedule, StopDecision};
pub use trial::{train_trial, EpochRecord, TrialResult};

use crate::error::{Error, Result};
use crate::models::Strategy;

fn default_batch_size() -> usize {
    64
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_patience() -> usize {
    10
}
fn default_max_epochs() -> usize {
    200
}
fn default_n_trials() -> usize {
    50
}

/// Optimization and trial settings. Trial `i` uses seed `seed_offset + i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// `None` picks the per-strategy default.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_patience")]
    pub patience_epochs: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_n_trials")]
    pub n_trials: usize,
    #[serde(default)]
    pub seed_offset: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch_size(),
            learning_rate: None,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            patience_epochs: default_patience(),
            max_epochs: default_max_epochs(),
            n_trials: default_n_trials(),
            seed_offset: 0,
        }
    }
}

/// Default learning rate per strategy.
pub fn default_learning_rate(strategy: Strategy) -> f64 {
    match strategy {
        Strategy::Early | Strategy::Late => 1e-3,
        Strategy::Moe => 1e-4,
    }
}

impl TrainConfig {
    pub fn learning_rate_for(&self, strategy: Strategy) -> f64 {
        self.learning_rate.unwrap_or_else(|| default_learning_rate(strategy))
    }

    pub fn seed_for(&self, trial: usize) -> u64 {
        self.seed_offset.wrapping_add(trial as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patience_epochs < 1 {
            return Err(Error::Config("patience_epochs must be at least 1".into()));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("learning_rate must be positive, got {lr}")));
            }
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("Adam betas must lie in [0, 1) and epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Independent random streams drawn from one trial seed.
pub(crate) mod streams {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub const INIT: u64 = 0;
    pub const REBALANCE: u64 = 1;
    pub const SHUFFLE: u64 = 2;

    pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_strategy_learning_rates() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate_for(Strategy::Early), 1e-3);
        assert_eq!(c.learning_rate_for(Strategy::Late), 1e-3);
        assert_eq!(c.learning_rate_for(Strategy::Moe), 1e-4);
        let fixed = TrainConfig {
            learning_rate: Some(0.01),
            ..c
        };
        assert_eq!(fixed.learning_rate_for(Strategy::Moe), 0.01);
    }

    #[test]
    fn validation_rejects_bad_values() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { patience_epochs: 0, ..Default::default() },
            TrainConfig { learning_rate: Some(0.0), ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn trial_seed_is_trial_index_by_default() {
        let c = TrainConfig::default();
        assert_eq!((0..50).map(|i| c.seed_for(i)).collect::<Vec<_>>(), (0..50).collect::<Vec<u64>>());
    }
}
