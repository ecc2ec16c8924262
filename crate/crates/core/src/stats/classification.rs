//! Classification and detection metrics over binary labels.

use std::collections::HashSet;
use std::hash::Hash;

use crate::dataset::Label;
use crate::error::{Error, Result};

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(Error::Empty("labels"));
    }
    Ok(())
}

pub fn accuracy(truth: &[Label], predicted: &[Label]) -> Result<f64> {
    same_len(truth.len(), predicted.len())?;
    let hits = truth.iter().zip(predicted).filter(|(t, p)| t == p).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Per-class F1 weighted by class support in `truth`. Not symmetric in its
/// arguments. A class with no predictions scores 0.
pub fn weighted_f1(truth: &[Label], predicted: &[Label]) -> Result<f64> {
    same_len(truth.len(), predicted.len())?;
    let n = truth.len() as f64;
    let mut total = 0.0;
    for class in [Label::Inconsistent, Label::Consistent] {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t == class, p == class) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        let support = tp + fn_;
        if support == 0 {
            continue;
        }
        let denom = 2 * tp + fp + fn_;
        let f1 = if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        };
        total += f1 * support as f64 / n;
    }
    Ok(total)
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half. Computed from mid-ranks.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    same_len(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let positives = labels.iter().filter(|l| l.is_consistent()).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::invalid("ROC AUC needs both classes present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group [i, j] shares the mean rank
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j]
            .iter()
            .filter(|&&k| labels[k].is_consistent())
            .count();
        rank_sum_pos += mid_rank * pos_in_group as f64;
        i = j + 1;
    }
    let (p, q) = (positives as f64, negatives as f64);
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * q))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Overlap of a flagged set with the set of true errors.
///
/// Precision is 1 when nothing is flagged and there is nothing to find, 0 when
/// nothing is flagged otherwise. Recall is 1 when there are no true errors.
pub fn detection_prf<T: Eq + Hash>(
    flagged: &HashSet<T>,
    true_errors: &HashSet<T>,
    universe: &HashSet<T>,
) -> Result<Detection> {
    if !flagged.is_subset(universe) || !true_errors.is_subset(universe) {
        return Err(Error::invalid("flagged and true-error sets must lie within the universe"));
    }
    let hit = flagged.intersection(true_errors).count() as f64;
    let precision = match (flagged.is_empty(), true_errors.is_empty()) {
        (true, true) => 1.0,
        (true, false) => 0.0,
        _ => hit / flagged.len() as f64,
    };
    let recall = if true_errors.is_empty() {
        1.0
    } else {
        hit / true_errors.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Detection {
        precision,
        recall,
        f1,
    })
}
