use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Label;
use crate::models::Strategy;

fn check_scores(scores: &[f64], num_classes: usize, labels: &[usize]) -> Result<()> {
    if num_classes == 0 || scores.len() != labels.len() * num_classes {
        return Err(Error::Metric(format!(
            "{} scores do not form a {} x {num_classes} matrix",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::Metric(format!("label {bad} out of range for {num_classes} classes")));
    }
    Ok(())
}

/// One-vs-rest ROC AUC for each class, by the rank-sum statistic with tied
/// scores sharing their mean rank. `None` for classes absent from `labels`.
pub fn auc_per_class(scores: &[f64], num_classes: usize, labels: &[usize]) -> Result<Vec<Option<f64>>> {
    check_scores(scores, num_classes, labels)?;
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut ranks = vec![0.0; n];
    let mut out = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let positives = labels.iter().filter(|&&y| y == c).count();
        let negatives = n - positives;
        if positives == 0 || negatives == 0 {
            out.push(None);
            continue;
        }
        let score = |i: usize| scores[i * num_classes + c];
        order.sort_by(|&a, &b| score(a).total_cmp(&score(b)));
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && score(order[end]) == score(order[start]) {
                end += 1;
            }
            // 1-based ranks start+1 ..= end share their mean
            let mid = (start + end + 1) as f64 / 2.0;
            for &i in &order[start..end] {
                ranks[i] = mid;
            }
            start = end;
        }
        let rank_sum: f64 = (0..n).filter(|&i| labels[i] == c).map(|i| ranks[i]).sum();
        let p = positives as f64;
        out.push(Some((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64)));
    }
    Ok(out)
}

/// Unweighted mean of the one-vs-rest AUCs over classes present in `labels`.
pub fn auc_macro(scores: &[f64], num_classes: usize, labels: &[usize]) -> Result<f64> {
    let per_class = auc_per_class(scores, num_classes, labels)?;
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Metric("AUC needs at least two distinct labels".into()));
    }
    let missing = per_class.iter().filter(|a| a.is_none()).count();
    if missing > 0 {
        log::warn!("AUC skips {missing} class(es) absent from the labels");
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    /// The class was never predicted, so precision is reported as 0.
    pub precision_undefined: bool,
    /// The class never occurs, so recall is reported as 0.
    pub recall_undefined: bool,
}

pub fn precision_recall(predictions: &[usize], labels: &[usize], class: usize) -> PrecisionRecall {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p == class, y == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    PrecisionRecall {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        precision_undefined: tp + fp == 0,
        recall_undefined: tp + fn_ == 0,
    }
}

/// Test-set metrics of one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub strategy: Strategy,
    pub trial: usize,
    pub auc: f64,
    /// Indexed by class.
    pub per_class: Vec<PrecisionRecall>,
}

impl TrialMetrics {
    pub fn macro_precision(&self) -> f64 {
        self.per_class.iter().map(|c| c.precision).sum::<f64>() / self.per_class.len() as f64
    }

    pub fn macro_recall(&self) -> f64 {
        self.per_class.iter().map(|c| c.recall).sum::<f64>() / self.per_class.len() as f64
    }
}

/// Macro AUC over class probabilities plus per-class precision and recall of
/// the argmax prediction.
pub fn evaluate_probabilities(
    strategy: Strategy,
    trial: usize,
    probs: &[f64],
    num_classes: usize,
    labels: &[usize],
) -> Result<TrialMetrics> {
    let auc = auc_macro(probs, num_classes, labels)?;
    let predictions: Vec<usize> = probs
        .chunks(num_classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect();
    Ok(TrialMetrics {
        strategy,
        trial,
        auc,
        per_class: (0..num_classes).map(|c| precision_recall(&predictions, labels, c)).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Two standard errors: `2 · s / √n` with the sample standard deviation `s`.
    pub two_se: f64,
    pub n: usize,
}

pub fn aggregate(values: &[f64]) -> Result<MeanSe> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Metric(format!("standard error needs at least 2 values, got {n}")));
    }
    // shifting by the first value keeps identical inputs exact
    let shift = values[0];
    let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(MeanSe {
        mean,
        two_se: 2.0 * var.sqrt() / (n as f64).sqrt(),
        n,
    })
}

/// Mean ± 2 SE across trials of one strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub strategy: Strategy,
    pub auc: MeanSe,
    pub macro_precision: MeanSe,
    pub macro_recall: MeanSe,
    pub precision: Vec<MeanSe>,
    pub recall: Vec<MeanSe>,
}

pub fn aggregate_trials(trials: &[TrialMetrics]) -> Result<ClassMetrics> {
    let first = trials
        .first()
        .ok_or_else(|| Error::Metric("no trials to aggregate".into()))?;
    if trials.iter().any(|t| t.strategy != first.strategy || t.per_class.len() != first.per_class.len()) {
        return Err(Error::Metric("trials mix strategies or class counts".into()));
    }
    let over = |f: &dyn Fn(&TrialMetrics) -> f64| aggregate(&trials.iter().map(f).collect::<Vec<_>>());
    let classes = first.per_class.len();
    Ok(ClassMetrics {
        strategy: first.strategy,
        auc: over(&|t| t.auc)?,
        macro_precision: over(&|t| t.macro_precision())?,
        macro_recall: over(&|t| t.macro_recall())?,
        precision: (0..classes).map(|c| over(&|t| t.per_class[c].precision)).collect::<Result<_>>()?,
        recall: (0..classes).map(|c| over(&|t| t.per_class[c].recall)).collect::<Result<_>>()?,
    })
}

/// Class name for a metric index, `"macro"` for `None`.
pub(crate) fn class_name(class: Option<usize>) -> String {
    match class {
        None => "macro".to_string(),
        Some(c) => Label::from_index(c).map_or_else(|| format!("class{c}"), |l| l.name().to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Concordant pairs plus half the ties, over all positive/negative pairs.
    fn brute_force(scores: &[f64], k: usize, labels: &[usize]) -> Option<f64> {
        let mut total = 0.0;
        let mut classes = 0;
        for c in 0..k {
            let (mut num, mut pairs) = (0.0, 0.0);
            for i in 0..labels.len() {
                for j in 0..labels.len() {
                    if labels[i] == c && labels[j] != c {
                        let (a, b) = (scores[i * k + c], scores[j * k + c]);
                        num += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
                        pairs += 1.0;
                    }
                }
            }
            if pairs > 0.0 {
                total += num / pairs;
                classes += 1;
            }
        }
        (classes > 0).then(|| total / classes as f64)
    }

    #[test]
    fn perfect_separation_is_one() {
        let scores = [0.9, 0.1, 0.8, 0.2, 0.3, 0.7, 0.1, 0.9];
        assert_eq!(auc_macro(&scores, 2, &[0, 0, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn identical_rows_give_one_half() {
        let scores = [0.25; 16];
        let per_class = auc_per_class(&scores, 4, &[0, 1, 2, 3]).unwrap();
        assert!(per_class.iter().all(|a| *a == Some(0.5)));
    }

    #[test]
    fn small_case_matches_pair_count() {
        let scores = [0.9, 0.1, 0.4, 0.6, 0.6, 0.4, 0.2, 0.8];
        let labels = [0, 1, 0, 1];
        let got = auc_macro(&scores, 2, &labels).unwrap();
        assert_eq!(got, brute_force(&scores, 2, &labels).unwrap());
        // class 0: positives {0.9, 0.6} vs negatives {0.4, 0.2}: all 4 pairs concordant
        assert_eq!(got, 1.0);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(auc_macro(&[0.5, 0.5, 0.2, 0.8], 2, &[1, 1]).is_err());
    }

    #[test]
    fn precision_recall_cases() {
        let labels = [0, 1, 2, 1];
        assert_eq!(precision_recall(&labels, &labels, 1).precision, 1.0);
        let never = precision_recall(&[0, 0, 0, 0], &labels, 2);
        assert!(never.precision_undefined);
        assert_eq!((never.precision, never.recall), (0.0, 0.0));
        let preds = [1, 1, 1, 1, 0, 0];
        let truth = [1, 1, 1, 0, 1, 1];
        let pr = precision_recall(&preds, &truth, 1);
        assert_eq!((pr.precision, pr.recall), (0.75, 0.6));
    }

    #[test]
    fn aggregate_cases() {
        let same = aggregate(&[0.4, 0.4, 0.4]).unwrap();
        assert_eq!((same.mean, same.two_se), (0.4, 0.0));
        let two = aggregate(&[0.6, 0.8]).unwrap();
        assert!((two.mean - 0.7).abs() < 1e-15);
        assert!((two.two_se - 0.2).abs() < 1e-12);
        assert!(aggregate(&[0.5]).is_err());
    }

    proptest! {
        #[test]
        fn auc_matches_brute_force(
            n in 2usize..=12,
            k in 2usize..=4,
            seed in proptest::collection::vec(0u8..6, 48),
            raw_labels in proptest::collection::vec(0usize..4, 12),
        ) {
            let labels: Vec<usize> = raw_labels[..n].iter().map(|y| y % k).collect();
            let scores: Vec<f64> = seed[..n * k].iter().map(|&s| s as f64 / 5.0).collect();
            match brute_force(&scores, k, &labels) {
                Some(want) => prop_assert!((auc_macro(&scores, k, &labels).unwrap() - want).abs() <= 1e-12),
                None => prop_assert!(auc_macro(&scores, k, &labels).is_err()),
            }
        }

        #[test]
        fn aggregation_scales_linearly(values in proptest::collection::vec(0.0f64..1.0, 2..20), c in 0.0f64..5.0) {
            let base = aggregate(&values).unwrap();
            let scaled = aggregate(&values.iter().map(|v| v * c).collect::<Vec<_>>()).unwrap();
            prop_assert!((scaled.mean - c * base.mean).abs() < 1e-12);
            prop_assert!((scaled.two_se - c * base.two_se).abs() < 1e-12);
        }

        #[test]
        fn metrics_stay_in_unit_interval(
            preds in proptest::collection::vec(0usize..4, 1..40),
            labels in proptest::collection::vec(0usize..4, 1..40),
        ) {
            let n = preds.len().min(labels.len());
            for c in 0..4 {
                let pr = precision_recall(&preds[..n], &labels[..n], c);
                prop_assert!((0.0..=1.0).contains(&pr.precision));
                prop_assert!((0.0..=1.0).contains(&pr.recall));
            }
        }
    }
}
