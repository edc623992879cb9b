//! ROC-AUC, computed three ways.
//!
//! [`auc`] counts concordant positive/negative pairs (ties earn half credit)
//! after sorting, which is exact and `O(n log n)`. [`auc_pairs`] is the
//! literal `O(n_pos·n_neg)` double loop and [`auc_trapezoid`] integrates the
//! empirical ROC curve; all three agree up to rounding.

use std::cmp::Ordering;

use crate::error::{Error, Result};

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Metric(format!("score {s} is NaN")));
    }
    let mut pos = 0;
    for &y in labels {
        match y {
            0 => {}
            1 => pos += 1,
            other => return Err(Error::Metric(format!("label {other} is not 0 or 1"))),
        }
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!("AUC needs both classes (got {pos} positive, {neg} negative)")));
    }
    Ok((pos, neg))
}

fn sorted_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    idx
}

/// Mann–Whitney pair counting with half credit for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let idx = sorted_order(scores);
    // Walk tie groups in ascending order; each positive beats every negative seen before its group.
    let (mut negs_below, mut credit) = (0u64, 0f64);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let (mut p, mut n) = (0u64, 0u64);
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] == 1 {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        credit += (p * negs_below) as f64 + 0.5 * (p * n) as f64;
        negs_below += n;
        i = j;
    }
    Ok(credit / (pos as f64 * neg as f64))
}

/// The literal double loop over positive/negative pairs.
pub fn auc_pairs(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut credit = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 0 {
                credit += match si.partial_cmp(&sj) {
                    Some(Ordering::Greater) => 1.0,
                    Some(Ordering::Equal) => 0.5,
                    _ => 0.0,
                };
            }
        }
    }
    Ok(credit / (pos as f64 * neg as f64))
}

/// Trapezoidal area under the ROC curve swept over distinct thresholds.
pub fn auc_trapezoid(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut idx = sorted_order(scores);
    idx.reverse();
    let (mut tp, mut fp) = (0u64, 0u64);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (tpr, fpr) = (tp as f64 / pos as f64, fp as f64 / neg as f64);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        (prev_tpr, prev_fpr) = (tpr, fpr);
    }
    Ok(area)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn perfect_separation_is_one() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn all_ties_is_half() {
        let s = [0.3; 7];
        let y = [1, 0, 0, 1, 0, 1, 0];
        assert_eq!(auc(&s, &y).unwrap(), 0.5);
        assert_eq!(auc_trapezoid(&s, &y).unwrap(), 0.5);
        assert_eq!(auc_pairs(&s, &y).unwrap(), 0.5);
    }

    #[test]
    fn hand_computed_case() {
        // Positives {0.8, 0.4}, negatives {0.4, 0.2, 0.9}: pairs won 2 + 1 + 0.5 = 3.5 of 6.
        let s = [0.8, 0.4, 0.4, 0.2, 0.9];
        let y = [1, 1, 0, 0, 0];
        assert!((auc(&s, &y).unwrap() - 3.5 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::Metric(_))));
        assert!(matches!(auc_trapezoid(&[0.1, 0.2], &[0, 0]), Err(Error::Metric(_))));
        assert!(matches!(auc(&[0.1], &[0, 1]), Err(Error::Metric(_))));
    }

    proptest! {
        #[test]
        fn three_implementations_agree(
            data in prop::collection::vec((0u8..12, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 4.0).collect();
            let mut labels: Vec<u8> = data.iter().map(|(_, y)| *y as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            let a = auc(&scores, &labels).unwrap();
            prop_assert!((a - auc_pairs(&scores, &labels).unwrap()).abs() < 1e-9);
            prop_assert!((a - auc_trapezoid(&scores, &labels).unwrap()).abs() < 1e-9);
        }
    }
}
