use crate::dataset::make_input;
use crate::error::Result;
use crate::ingest::TileSample;
use crate::models::FusionModel;
use crate::nn::Mode;
use crate::scalar::Scalar;

/// Evaluation-mode outputs over a sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    /// Row-major `(n, num_classes)` class probabilities.
    pub probs: Vec<f64>,
    pub num_classes: usize,
    /// Gating weights per sample (mixture of experts only).
    pub gates: Option<Vec<[f64; 3]>>,
}

pub fn predict<T: Scalar>(model: &mut FusionModel<T>, samples: &[&TileSample], batch_size: usize) -> Result<Predictions> {
    let num_classes = model.spec().num_classes;
    let mut probs = Vec::with_capacity(samples.len() * num_classes);
    let mut gates: Option<Vec<[f64; 3]>> = None;
    for chunk in samples.chunks(batch_size.max(1)) {
        let input = make_input::<T>(chunk, model.strategy())?;
        let out = model.forward(&input, Mode::Eval)?;
        probs.extend(out.probabilities().data().iter().map(|v| v.to_f64_lossy()));
        if let Some(g) = out.gates {
            let acc = gates.get_or_insert_with(Vec::new);
            acc.extend(g.data().chunks(3).map(|r| [r[0].to_f64_lossy(), r[1].to_f64_lossy(), r[2].to_f64_lossy()]));
        }
    }
    Ok(Predictions {
        probs,
        num_classes,
        gates,
    })
}
