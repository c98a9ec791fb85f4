use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Label, TileSample};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RebalancePlan {
    pub target_per_class: usize,
}

impl Default for RebalancePlan {
    fn default() -> Self {
        Self { target_per_class: 88 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassStrategy {
    Keep,
    /// Draw `target` distinct samples.
    Undersample,
    /// Keep every original once, then draw the remainder with replacement.
    Oversample,
}

impl RebalancePlan {
    pub fn strategy_for(&self, count: usize) -> ClassStrategy {
        use std::cmp::Ordering::*;
        match count.cmp(&self.target_per_class) {
            Less => ClassStrategy::Oversample,
            Equal => ClassStrategy::Keep,
            Greater => ClassStrategy::Undersample,
        }
    }
}

/// Resamples positions into `labels` so every class has exactly
/// `target_per_class` entries. Output is grouped by class in label order.
pub fn rebalance_indices<R: Rng + ?Sized>(labels: &[Label], plan: &RebalancePlan, rng: &mut R) -> Result<Vec<usize>> {
    if plan.target_per_class == 0 {
        return Err(Error::Dataset("rebalance target must be positive".into()));
    }
    let mut by_class: BTreeMap<Label, Vec<usize>> = Label::ALL.iter().map(|&l| (l, Vec::new())).collect();
    for (i, l) in labels.iter().enumerate() {
        by_class.get_mut(l).expect("all labels present").push(i);
    }
    let target = plan.target_per_class;
    let mut out = Vec::with_capacity(target * Label::ALL.len());
    for (label, members) in by_class {
        let n = members.len();
        if n == 0 {
            return Err(Error::Dataset(format!(
                "training split has no {label} samples; cannot rebalance"
            )));
        }
        match plan.strategy_for(n) {
            ClassStrategy::Keep => out.extend_from_slice(&members),
            ClassStrategy::Undersample => {
                let mut picked = index::sample(rng, n, target).into_vec();
                picked.sort_unstable();
                out.extend(picked.into_iter().map(|k| members[k]));
            }
            ClassStrategy::Oversample => {
                out.extend_from_slice(&members);
                out.extend((n..target).map(|_| members[rng.random_range(0..n)]));
            }
        }
    }
    Ok(out)
}

/// Seeded convenience wrapper that clones the chosen samples.
pub fn rebalance(samples: &[TileSample], plan: &RebalancePlan, seed: u64) -> Result<Vec<TileSample>> {
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rebalance_indices(&labels, plan, &mut rng)?
        .into_iter()
        .map(|i| samples[i].clone())
        .collect())
}
