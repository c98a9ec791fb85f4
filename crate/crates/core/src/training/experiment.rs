use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use super::trial::{train_trial, TrialResult};
use super::{streams, TrainConfig};
use crate::dataset::{rebalance_indices, BandStats, RebalancePlan};
use crate::error::{Error, Result};
use crate::ingest::{Label, TileSample};
use crate::models::{save_checkpoint, FusionModel, FusionModelSpec, Strategy};
use crate::scalar::Scalar;

pub const COMPLETE_MARKER: &str = "COMPLETE";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
const HISTORY_FILE: &str = "history.jsonl";
const RESULT_FILE: &str = "result.json";

/// Normalized splits; `train` holds each training cell once.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: Vec<TileSample>,
    pub val: Vec<TileSample>,
    pub test: Vec<TileSample>,
    pub band_stats: BandStats,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub model: FusionModelSpec,
    pub train: TrainConfig,
    pub rebalance: RebalancePlan,
    pub pretrained: Option<PathBuf>,
    /// Root holding `trials/<strategy>/trial_<i>/`.
    pub out_dir: PathBuf,
    /// Defaults to `0..n_trials`.
    pub trials: Option<Range<usize>>,
}

#[derive(Clone, Debug)]
pub struct ExperimentRun {
    pub results: Vec<TrialResult>,
    /// Trials trained by this call; the others were already complete.
    pub executed: Vec<usize>,
}

pub fn trial_dir(out_dir: &Path, strategy: Strategy, trial: usize) -> PathBuf {
    out_dir.join("trials").join(strategy.name()).join(format!("trial_{trial}"))
}

fn read_result(dir: &Path) -> Result<TrialResult> {
    let path = dir.join(RESULT_FILE);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Results of every completed trial of `strategy`, by trial index.
pub fn load_completed(out_dir: &Path, strategy: Strategy) -> Result<Vec<TrialResult>> {
    let root = out_dir.join("trials").join(strategy.name());
    if !root.exists() {
        return Ok(Vec::new());
    }
    let mut results = Vec::new();
    for entry in fs::read_dir(&root).map_err(Error::io(&root))? {
        let dir = entry.map_err(Error::io(&root))?.path();
        let is_trial = dir
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.strip_prefix("trial_").is_some_and(|i| i.parse::<usize>().is_ok()));
        if is_trial && dir.join(COMPLETE_MARKER).exists() {
            results.push(read_result(&dir)?);
        }
    }
    results.sort_by_key(|r| r.trial_index);
    Ok(results)
}

fn build_and_train<T: Scalar>(
    data: &ExperimentData,
    cfg: &ExperimentConfig,
    train_cfg: &TrainConfig,
    trial: usize,
) -> Result<(FusionModel<T>, TrialResult)> {
    let seed = train_cfg.seed_for(trial);
    let mut init = streams::rng(seed, streams::INIT);
    let mut model = FusionModel::<T>::build(&cfg.model, cfg.pretrained.as_deref(), &mut init)?;
    let labels: Vec<Label> = data.train.iter().map(|s| s.label).collect();
    let mut resample = streams::rng(seed, streams::REBALANCE);
    let picked = rebalance_indices(&labels, &cfg.rebalance, &mut resample)?;
    let train: Vec<&TileSample> = picked.iter().map(|&i| &data.train[i]).collect();
    let val: Vec<&TileSample> = data.val.iter().collect();
    let result = train_trial(&mut model, &train, &val, train_cfg, trial)?;
    Ok((model, result))
}

fn write_trial<T: Scalar>(
    staging: &Path,
    final_dir: &Path,
    model: &FusionModel<T>,
    band_stats: &BandStats,
    result: &TrialResult,
) -> Result<()> {
    fs::create_dir_all(staging).map_err(Error::io(staging))?;
    save_checkpoint(&staging.join(CHECKPOINT_FILE), model, band_stats)?;
    let path = staging.join(HISTORY_FILE);
    let mut history = fs::File::create(&path).map_err(Error::io(&path))?;
    for record in &result.history {
        writeln!(history, "{}", serde_json::to_string(record)?).map_err(Error::io(&path))?;
    }
    let path = staging.join(RESULT_FILE);
    fs::write(&path, serde_json::to_string_pretty(result)?).map_err(Error::io(&path))?;
    let path = staging.join(COMPLETE_MARKER);
    fs::write(&path, b"").map_err(Error::io(&path))?;
    if final_dir.exists() {
        fs::remove_dir_all(final_dir).map_err(Error::io(final_dir))?;
    }
    fs::rename(staging, final_dir).map_err(Error::io(final_dir))
}

/// Trains each requested trial that has no completion marker yet. Every
/// trial is seeded from its own index and published by renaming a finished
/// staging directory, so interrupted or concurrent runs never leave a
/// half-written trial behind.
pub fn run_experiment<T: Scalar>(data: &ExperimentData, cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.train.validate()?;
    cfg.model.validate()?;
    let range = cfg.trials.clone().unwrap_or(0..cfg.train.n_trials);
    let strategy = cfg.model.strategy;
    let root = cfg.out_dir.join("trials").join(strategy.name());
    fs::create_dir_all(&root).map_err(Error::io(&root))?;
    let probe = root.join(format!(".write-probe-{}", std::process::id()));
    fs::write(&probe, b"").map_err(Error::io(&root))?;
    fs::remove_file(&probe).map_err(Error::io(&probe))?;

    let mut results = Vec::new();
    let mut executed = Vec::new();
    for trial in range {
        let dir = trial_dir(&cfg.out_dir, strategy, trial);
        if dir.join(COMPLETE_MARKER).exists() {
            log::info!("{strategy} trial {trial} already complete, skipping");
            results.push(read_result(&dir)?);
            continue;
        }
        let (model, mut result) = build_and_train::<T>(data, cfg, &cfg.train, trial)?;
        result.checkpoint = Some(dir.join(CHECKPOINT_FILE));
        let staging = root.join(format!(".trial_{trial}.partial-{}", std::process::id()));
        if let Err(e) = write_trial(&staging, &dir, &model, &data.band_stats, &result) {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
        log::info!(
            "{strategy} trial {trial}: best val auc {:.4} at epoch {} of {}",
            result.best_val_auc,
            result.best_epoch,
            result.stopped_epoch
        );
        executed.push(trial);
        results.push(result);
    }
    Ok(ExperimentRun { results, executed })
}

/// Trains trial 0 once per candidate learning rate and reports the best
/// validation AUC of each. Nothing is written to disk.
pub fn tune_lr<T: Scalar>(data: &ExperimentData, cfg: &ExperimentConfig, rates: &[f64]) -> Result<Vec<(f64, f64)>> {
    if rates.is_empty() {
        return Err(Error::Config("no learning rates to sweep".into()));
    }
    rates
        .iter()
        .map(|&lr| {
            let train_cfg = TrainConfig {
                learning_rate: Some(lr),
                ..cfg.train.clone()
            };
            let (_, result) = build_and_train::<T>(data, cfg, &train_cfg, 0)?;
            Ok((lr, result.best_val_auc))
        })
        .collect()
}
