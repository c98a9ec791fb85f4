use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::predict::{predict, Predictions};
use crate::error::{Error, Result};
use crate::ingest::{Label, Modality, TileSample};
use crate::models::{FusionModel, Strategy};
use crate::scalar::Scalar;

/// Gating vector of one test image under one trial's model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSample {
    pub trial: usize,
    pub label: Label,
    pub weights: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatingCell {
    pub mean: f64,
    /// Two standard errors over the pooled (image, trial) vectors; 0 when `n = 1`.
    pub two_se: f64,
    pub n: usize,
    /// Set when only one vector was pooled and the standard error is undefined.
    pub se_undefined: bool,
}

/// Mean ± 2 SE gating weight for each modality (rows) and feature class (columns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatingReport {
    /// `cells[modality][feature]`, with features ordered midden, mound, water.
    pub cells: Vec<Vec<Option<GatingCell>>>,
}

/// Pools every (image, trial) gating vector by class.
pub fn gating_report(samples: &[GateSample]) -> Result<GatingReport> {
    for s in samples {
        let total: f64 = s.weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 || s.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Metric(format!(
                "gating vector {:?} (trial {}) is not on the simplex",
                s.weights, s.trial
            )));
        }
    }
    let cells = (0..3)
        .map(|m| {
            Label::FEATURES
                .iter()
                .map(|&label| {
                    let values: Vec<f64> = samples.iter().filter(|s| s.label == label).map(|s| s.weights[m]).collect();
                    let n = values.len();
                    if n == 0 {
                        return None;
                    }
                    let mean = values.iter().sum::<f64>() / n as f64;
                    let two_se = if n == 1 {
                        0.0
                    } else {
                        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
                        2.0 * (var / n as f64).sqrt()
                    };
                    Some(GatingCell {
                        mean,
                        two_se,
                        n,
                        se_undefined: n == 1,
                    })
                })
                .collect()
        })
        .collect();
    Ok(GatingReport { cells })
}

/// Gating vectors of the feature-class images in `test`, given that trial's
/// predictions over the same samples.
pub fn gate_samples(trial: usize, test: &[&TileSample], predictions: &Predictions) -> Result<Vec<GateSample>> {
    let gates = predictions
        .gates
        .as_ref()
        .ok_or_else(|| Error::Metric(format!("trial {trial} predictions carry no gating weights")))?;
    if gates.len() != test.len() {
        return Err(Error::Metric(format!(
            "{} gating vectors for {} test samples",
            gates.len(),
            test.len()
        )));
    }
    Ok(test
        .iter()
        .zip(gates)
        .filter(|(sample, _)| sample.label != Label::Empty)
        .map(|(sample, &weights)| GateSample {
            trial,
            label: sample.label,
            weights,
        })
        .collect())
}

/// Runs each trial's mixture-of-experts model over the test samples and
/// pools the gating vectors of feature-class images.
pub fn gating_table<T: Scalar>(
    models: &mut [(usize, FusionModel<T>)],
    test: &[&TileSample],
    batch_size: usize,
) -> Result<GatingReport> {
    let mut pooled = Vec::new();
    for (trial, model) in models.iter_mut() {
        if model.strategy() != Strategy::Moe {
            return Err(Error::Metric(format!(
                "gating table needs mixture-of-experts checkpoints, trial {trial} is {}",
                model.strategy()
            )));
        }
        let preds = predict(model, test, batch_size)?;
        pooled.extend(gate_samples(*trial, test, &preds)?);
    }
    gating_report(&pooled)
}

impl GatingReport {
    pub fn cell(&self, modality: Modality, feature: Label) -> Option<GatingCell> {
        let col = Label::FEATURES.iter().position(|&l| l == feature)?;
        self.cells[modality as usize][col]
    }

    /// Plain-text table: modalities down, feature classes across.
    pub fn to_table(&self) -> String {
        let headers = ["Midden", "Mound", "Water"];
        let rows = ["Thermal", "RGB", "LiDAR"];
        let width = 16;
        let mut out = format!("{:<8}", "");
        for h in headers {
            let _ = write!(out, "{h:>width$}");
        }
        out.push('\n');
        for (m, name) in rows.iter().enumerate() {
            let _ = write!(out, "{name:<8}");
            for cell in &self.cells[m] {
                let text = match cell {
                    Some(c) if c.se_undefined => format!("{:.2} ± 0.00*", c.mean),
                    Some(c) => format!("{:.2} ± {:.2}", c.mean, c.two_se),
                    None => "n/a".to_string(),
                };
                let _ = write!(out, "{text:>width$}");
            }
            out.push('\n');
        }
        if self.cells.iter().flatten().flatten().any(|c| c.se_undefined) {
            out.push_str("* single gating vector, standard error undefined\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_reports_zero_se_with_flag() {
        let r = gating_report(&[GateSample {
            trial: 0,
            label: Label::Water,
            weights: [0.4, 0.24, 0.36],
        }])
        .unwrap();
        let c = r.cell(Modality::Thermal, Label::Water).unwrap();
        assert_eq!((c.mean, c.two_se, c.n, c.se_undefined), (0.4, 0.0, 1, true));
        assert_eq!(r.cell(Modality::Rgb, Label::Water).unwrap().mean, 0.24);
        assert!(r.cell(Modality::Lidar, Label::Midden).is_none());
    }

    #[test]
    fn uniform_gates_give_one_third_everywhere() {
        let third = 1.0 / 3.0;
        let samples: Vec<GateSample> = (0..3)
            .flat_map(|trial| {
                Label::FEATURES.into_iter().map(move |label| GateSample {
                    trial,
                    label,
                    weights: [third; 3],
                })
            })
            .collect();
        let r = gating_report(&samples).unwrap();
        for c in r.cells.iter().flatten() {
            let c = c.unwrap();
            assert!((c.mean - third).abs() < 1e-15);
            assert_eq!(c.two_se, 0.0);
        }
        let table = r.to_table();
        assert_eq!(table.lines().count(), 4);
        assert!(table.contains("0.33 ± 0.00"));
    }

    #[test]
    fn off_simplex_vectors_are_rejected() {
        let bad = GateSample {
            trial: 0,
            label: Label::Mound,
            weights: [0.5, 0.5, 0.1],
        };
        assert!(gating_report(&[bad]).is_err());
    }
}
