//! Whole-pipeline steps shared by the command-line tool and the tests:
//! rasters to split archives, archives to training data, and trial
//! checkpoints to a report.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{fit_stats, rebalance_indices, split, write_split_manifest, BandStats, RebalancePlan, SplitSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    emit_report, evaluate_probabilities, gate_samples, gating_report, predict, GatingReport, ReportFiles, TrialMetrics,
};
use crate::ingest::{
    build_samples, load_mosaic, load_points, partition_by_extent, read_split_archive, write_split_archive, GridSpec,
    Modality, ModalityMosaics, TileSample,
};
use crate::models::{load_checkpoint, Strategy};
use crate::scalar::Scalar;
use crate::training::{load_completed, streams, trial_dir, ExperimentData, CHECKPOINT_FILE};

/// Input rasters (one GeoTIFF per modality) and the labeled point CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub thermal: PathBuf,
    pub rgb: PathBuf,
    pub lidar: PathBuf,
    pub points: PathBuf,
}

impl InputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            thermal: dir.join("thermal.tif"),
            rgb: dir.join("rgb.tif"),
            lidar: dir.join("lidar.tif"),
            points: dir.join("points.csv"),
        }
    }

    fn raster(&self, modality: Modality) -> &Path {
        match modality {
            Modality::Thermal => &self.thermal,
            Modality::Rgb => &self.rgb,
            Modality::Lidar => &self.lidar,
        }
    }
}

/// Files under `<out>/prepared/`.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedFiles {
    pub dir: PathBuf,
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    pub splits: PathBuf,
    pub band_stats: PathBuf,
    pub grid: PathBuf,
}

impl PreparedFiles {
    pub fn in_out_dir(out_dir: &Path) -> Self {
        Self::in_dir(&out_dir.join("prepared"))
    }

    fn in_dir(dir: &Path) -> Self {
        Self {
            train: dir.join("train.tar"),
            val: dir.join("val.tar"),
            test: dir.join("test.tar"),
            splits: dir.join("splits.jsonl"),
            band_stats: dir.join("band_stats.json"),
            grid: dir.join("grid.json"),
            dir: dir.to_path_buf(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub grid: GridSpec,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Points outside the gridded extent.
    pub rejected_points: usize,
}

/// Reads rasters and points, grids them into labeled tiles, splits by column,
/// checks the training split can be rebalanced, fits band statistics on the
/// training split and writes everything to `<out>/prepared/`.
///
/// Archives hold raw tiles; normalization happens on load.
pub fn prepare(
    inputs: &InputPaths,
    cell_size_m: f64,
    split_spec: &SplitSpec,
    plan: &RebalancePlan,
    out_dir: &Path,
) -> Result<PrepareSummary> {
    split_spec.validate()?;
    let mut mosaics = Vec::with_capacity(3);
    for m in Modality::ALL {
        mosaics.push(load_mosaic(inputs.raster(m), m)?);
    }
    let lidar = mosaics.pop().expect("three mosaics");
    let rgb = mosaics.pop().expect("three mosaics");
    let thermal = mosaics.pop().expect("three mosaics");
    let mosaics = ModalityMosaics { thermal, rgb, lidar };
    mosaics.check_alignment()?;
    let grid = GridSpec::covering(&mosaics.extent(), cell_size_m)?;
    let (points, rejected_points) = partition_by_extent(load_points(&inputs.points)?, &grid.extent());

    let samples = build_samples(&mosaics, &grid, &points)?;
    let splits = split(samples, split_spec)?;
    let labels: Vec<_> = splits.train.iter().map(|s| s.label).collect();
    // rebalancing is redone per trial; this only surfaces an impossible plan early
    rebalance_indices(&labels, plan, &mut streams::rng(0, streams::REBALANCE))?;
    let stats = fit_stats(&splits.train)?;

    let files = PreparedFiles::in_out_dir(out_dir);
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let staging = out_dir.join(format!(".prepared-staging-{}", std::process::id()));
    let staged = PreparedFiles::in_dir(&staging);
    let write = || -> Result<()> {
        fs::create_dir_all(&staged.dir).map_err(Error::io(&staged.dir))?;
        write_split_archive(&staged.train, &splits.train)?;
        write_split_archive(&staged.val, &splits.val)?;
        write_split_archive(&staged.test, &splits.test)?;
        write_split_manifest(&staged.splits, &splits)?;
        stats.save(&staged.band_stats)?;
        fs::write(&staged.grid, serde_json::to_string_pretty(&grid)?).map_err(Error::io(&staged.grid))?;
        if files.dir.exists() {
            fs::remove_dir_all(&files.dir).map_err(Error::io(&files.dir))?;
        }
        fs::rename(&staged.dir, &files.dir).map_err(Error::io(&files.dir))
    };
    if let Err(e) = write() {
        let _ = fs::remove_dir_all(&staged.dir);
        return Err(e);
    }
    Ok(PrepareSummary {
        grid,
        n_train: splits.train.len(),
        n_val: splits.val.len(),
        n_test: splits.test.len(),
        rejected_points,
    })
}

/// Loads the prepared splits and normalizes them with the stored statistics.
pub fn load_prepared(out_dir: &Path) -> Result<ExperimentData> {
    let files = PreparedFiles::in_out_dir(out_dir);
    if !files.dir.exists() {
        return Err(Error::Dataset(format!(
            "{} does not exist; run prepare first",
            files.dir.display()
        )));
    }
    let band_stats = BandStats::load(&files.band_stats)?;
    let load = |path: &Path| -> Result<Vec<TileSample>> {
        read_split_archive(path)?
            .into_iter()
            .map(|s| band_stats.normalize(s))
            .collect()
    };
    Ok(ExperimentData {
        train: load(&files.train)?,
        val: load(&files.val)?,
        test: load(&files.test)?,
        band_stats: band_stats.clone(),
    })
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub metrics: Vec<TrialMetrics>,
    pub gating: Option<GatingReport>,
    pub files: ReportFiles,
}

/// Scores every completed trial of every strategy on the test split and
/// writes the report to `<out>/report/`.
pub fn evaluate<T: Scalar>(out_dir: &Path, test: &[TileSample], batch_size: usize) -> Result<Evaluation> {
    let test: Vec<&TileSample> = test.iter().collect();
    let labels: Vec<usize> = test.iter().map(|s| s.label.index()).collect();
    let mut metrics = Vec::new();
    let mut pooled = Vec::new();
    let mut moe_trials = 0;
    for strategy in Strategy::ALL {
        for result in load_completed(out_dir, strategy)? {
            let trial = result.trial_index;
            let path = trial_dir(out_dir, strategy, trial).join(CHECKPOINT_FILE);
            let (mut model, _) = load_checkpoint::<T>(&path)?;
            if model.strategy() != strategy {
                return Err(Error::Checkpoint(format!(
                    "{} holds a {} model",
                    path.display(),
                    model.strategy()
                )));
            }
            let preds = predict(&mut model, &test, batch_size)?;
            metrics.push(evaluate_probabilities(strategy, trial, &preds.probs, preds.num_classes, &labels)?);
            if strategy == Strategy::Moe {
                pooled.extend(gate_samples(trial, &test, &preds)?);
                moe_trials += 1;
            }
        }
    }
    if metrics.is_empty() {
        return Err(Error::Report(format!("no completed trials under {}", out_dir.display())));
    }
    let gating = if moe_trials > 0 { Some(gating_report(&pooled)?) } else { None };
    let files = emit_report(&metrics, gating.as_ref(), &out_dir.join("report"))?;
    Ok(Evaluation { metrics, gating, files })
}
