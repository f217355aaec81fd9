use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Threshold metrics plus AUC. Precision, recall and F1 are reported as 0
/// with the matching `*_undefined` flag set when their denominator is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub threshold: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

impl MetricsReport {
    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Confusion-matrix metrics with `score >= threshold` predicting crop.
pub fn confusion_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<MetricsReport> {
    check_dim("metrics labels", scores.len(), labels.len())?;
    if scores.is_empty() {
        return Err(Error::Precondition("metrics need at least one example".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
    let (precision, precision_undefined) = ratio(tp, tp + fp);
    let (recall, recall_undefined) = ratio(tp, tp + fn_);
    let (f1, f1_undefined) = if precision + recall > 0.0 {
        (2.0 * precision * recall / (precision + recall), false)
    } else {
        (0.0, true)
    };
    let auc = match auc_roc(scores, labels) {
        Ok(a) => Some(a),
        Err(Error::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        accuracy: (tp + tn) as f64 / scores.len() as f64,
        auc,
        precision,
        recall,
        f1,
        tp,
        fp,
        tn,
        fn_,
        threshold,
        precision_undefined,
        recall_undefined,
        f1_undefined,
    })
}

/// Area under the ROC curve as the pairwise concordance probability:
/// `(#{s_pos > s_neg} + ½ #{s_pos = s_neg}) / (P · N)`.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_dim("auc labels", scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite { context: "auc scores" });
    }
    let positives = labels.iter().filter(|&&y| y).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the concordance count keeps the half-ties integral.
    let mut twice_concordant: u128 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut pos, mut neg) = (0u64, 0u64);
        let mut j = i;
        while j < order.len() && scores[order[j]] == s {
            if labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice_concordant += 2 * pos as u128 * neg_below as u128 + pos as u128 * neg as u128;
        neg_below += neg;
        i = j;
    }
    Ok(twice_concordant as f64 / (2.0 * positives as f64 * negatives as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn symmetric_confusion() {
        let r = confusion_metrics(&[0.9, 0.9, 0.1, 0.1], &[true, false, true, false], 0.5).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (0.5, 0.5, 0.5, 0.5));
        assert_eq!(r.n(), 4);
        assert_eq!(r.auc, Some(0.5));
    }

    #[test]
    fn perfect_scores() {
        let r = confusion_metrics(&[0.8, 0.7, 0.2, 0.4], &[true, true, false, false], 0.5).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(r.auc, Some(1.0));
    }

    #[test]
    fn nothing_predicted_positive() {
        let r = confusion_metrics(&[0.1, 0.2, 0.3], &[true, false, true], 0.5).unwrap();
        assert_eq!(r.recall, 0.0);
        assert!(!r.recall_undefined);
        assert_eq!(r.precision, 0.0);
        assert!(r.precision_undefined && r.f1_undefined);
    }

    #[test]
    fn threshold_is_inclusive() {
        let r = confusion_metrics(&[0.5], &[true], 0.5).unwrap();
        assert_eq!(r.tp, 1);
        assert_eq!(r.auc, None);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(confusion_metrics(&[0.1, 0.2], &[true], 0.5), Err(Error::Dimension { .. })));
        assert!(confusion_metrics(&[], &[], 0.5).is_err());
    }

    #[test]
    fn auc_basics() {
        assert_eq!(auc_roc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert_eq!(auc_roc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert_eq!(auc_roc(&[0.1, 0.9], &[true, true]), Err(Error::SingleClass));
    }

    fn brute_force(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut hits, mut pairs) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if si > sj {
                        hits += 1.0;
                    } else if si == sj {
                        hits += 0.5;
                    }
                }
            }
        }
        hits / pairs
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_count(data in proptest::collection::vec((0u8..20, any::<bool>()), 2..120)) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 20.0).collect();
            let labels: Vec<bool> = data.iter().map(|(_, y)| *y).collect();
            prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
            let a = auc_roc(&scores, &labels).unwrap();
            prop_assert!((a - brute_force(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_maps(data in proptest::collection::vec((-5.0f64..5.0, any::<bool>()), 2..80)) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s).collect();
            let labels: Vec<bool> = data.iter().map(|(_, y)| *y).collect();
            prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
            let a = auc_roc(&scores, &labels).unwrap();
            let mapped: Vec<f64> = scores.iter().map(|s| libm::exp(*s) * 3.0 + 1.0).collect();
            prop_assert_eq!(a, auc_roc(&mapped, &labels).unwrap());
            let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
            let mut distinct = scores.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            if distinct.len() == scores.len() {
                prop_assert!((a + auc_roc(&negated, &labels).unwrap() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn accuracy_and_f1_identities(data in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 1..60)) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s).collect();
            let labels: Vec<bool> = data.iter().map(|(_, y)| *y).collect();
            let r = confusion_metrics(&scores, &labels, 0.5).unwrap();
            prop_assert_eq!(r.n(), scores.len());
            prop_assert_eq!(r.accuracy, (r.tp + r.tn) as f64 / scores.len() as f64);
            if r.precision + r.recall > 0.0 {
                let h = 2.0 / (1.0 / r.precision + 1.0 / r.recall);
                prop_assert!((r.f1 - h).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nan_scores_are_rejected() {
        assert!(auc_roc(&[f64::NAN, 0.1], &[true, false]).is_err());
    }
}
