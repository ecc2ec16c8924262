//! Training-set repairs (flip or filter flagged examples), size-matched random
//! controls, and synthetic noise injection.
//!
//! Nothing here mutates its input. Each operation returns a new dataset and a
//! [`TransformReceipt`] describing exactly which ids it touched.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Example, Label};
use crate::error::{Error, Result};
use crate::flagging::{FlagRecord, FlagReport};
use crate::sampling;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformMode {
    Flip,
    Filter,
    RandomFlip,
    RandomFilter,
    NoiseInject,
}

impl TransformMode {
    pub fn preserves_size(self) -> bool {
        !matches!(self, TransformMode::Filter | TransformMode::RandomFilter)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformReceipt {
    pub mode: TransformMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// In dataset order.
    pub affected_ids: Vec<String>,
    pub before_size: usize,
    pub after_size: usize,
}

impl TransformReceipt {
    /// Sizes agree with the mode and the affected ids.
    pub fn reconciles(&self) -> bool {
        if self.mode.preserves_size() {
            self.after_size == self.before_size
        } else {
            self.after_size + self.affected_ids.len() == self.before_size
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Which examples of `train` a repair at `threshold` targets: flagged at
/// `threshold` and still carrying a label other than the ensemble's. The
/// second condition makes flipping a fixed point.
fn targets(train: &Dataset, flags: &FlagReport, threshold: f64) -> Result<Vec<bool>> {
    let by_id: HashMap<&str, &FlagRecord> =
        flags.records.iter().map(|r| (r.example_id.as_str(), r)).collect();
    train
        .iter()
        .map(|e| {
            let r = by_id
                .get(e.id.as_str())
                .ok_or_else(|| Error::IdMismatch(format!("no flag record for {}", e.id)))?;
            Ok(r.disagreement_confidence.is_some_and(|c| c >= threshold) && e.original_label != r.predicted_label)
        })
        .collect()
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold.is_nan() || threshold < 0.5 {
        return Err(Error::invalid(format!("threshold {threshold} below 0.5")));
    }
    Ok(())
}

/// Relabel every targeted example with the ensemble's label.
pub fn flip_flagged(train: &Dataset, flags: &FlagReport, threshold: f64) -> Result<(Dataset, TransformReceipt)> {
    check_threshold(threshold)?;
    let hit = targets(train, flags, threshold)?;
    let mut affected = Vec::new();
    let examples = train
        .iter()
        .zip(&hit)
        .map(|(e, &h)| {
            if h {
                affected.push(e.id.clone());
                Example {
                    original_label: e.original_label.flipped(),
                    ..e.clone()
                }
            } else {
                e.clone()
            }
        })
        .collect();
    let out = train.derive(examples)?;
    let receipt = TransformReceipt {
        mode: TransformMode::Flip,
        threshold: Some(threshold),
        count: None,
        seed: None,
        affected_ids: affected,
        before_size: train.len(),
        after_size: out.len(),
    };
    Ok((out, receipt))
}

/// Drop every targeted example; survivors keep their order.
pub fn filter_flagged(train: &Dataset, flags: &FlagReport, threshold: f64) -> Result<(Dataset, TransformReceipt)> {
    check_threshold(threshold)?;
    let hit = targets(train, flags, threshold)?;
    let mut affected = Vec::new();
    let mut kept = Vec::new();
    for (e, &h) in train.iter().zip(&hit) {
        if h {
            affected.push(e.id.clone());
        } else {
            kept.push(e.clone());
        }
    }
    let out = train.derive(kept)?;
    let receipt = TransformReceipt {
        mode: TransformMode::Filter,
        threshold: Some(threshold),
        count: None,
        seed: None,
        affected_ids: affected,
        before_size: train.len(),
        after_size: out.len(),
    };
    Ok((out, receipt))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Flip,
    Filter,
}

/// Flip or drop `count` uniformly chosen examples.
pub fn random_ablation(
    train: &Dataset,
    count: usize,
    mode: AblationMode,
    seed: u64,
) -> Result<(Dataset, TransformReceipt)> {
    if count > train.len() {
        return Err(Error::invalid(format!(
            "ablation count {count} exceeds dataset size {}",
            train.len()
        )));
    }
    let mut rng = sampling::rng(seed);
    let picked: BTreeSet<usize> = sampling::sample_indices(&mut rng, train.len(), count)
        .into_iter()
        .collect();
    let affected: Vec<String> = picked.iter().map(|&i| train.examples()[i].id.clone()).collect();
    let examples: Vec<Example> = match mode {
        AblationMode::Flip => train
            .iter()
            .enumerate()
            .map(|(i, e)| {
                if picked.contains(&i) {
                    Example {
                        original_label: e.original_label.flipped(),
                        ..e.clone()
                    }
                } else {
                    e.clone()
                }
            })
            .collect(),
        AblationMode::Filter => train
            .iter()
            .enumerate()
            .filter(|(i, _)| !picked.contains(i))
            .map(|(_, e)| e.clone())
            .collect(),
    };
    let out = train.derive(examples)?;
    let receipt = TransformReceipt {
        mode: match mode {
            AblationMode::Flip => TransformMode::RandomFlip,
            AblationMode::Filter => TransformMode::RandomFilter,
        },
        threshold: None,
        count: Some(count),
        seed: Some(seed),
        affected_ids: affected,
        before_size: train.len(),
        after_size: out.len(),
    };
    Ok((out, receipt))
}

/// Ground truth of injected corruption: `example_id -> corrupted`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseMask {
    pub corrupted: BTreeMap<String, bool>,
}

impl NoiseMask {
    pub fn is_corrupted(&self, id: &str) -> bool {
        self.corrupted.get(id).copied().unwrap_or(false)
    }

    pub fn corrupted_ids(&self) -> BTreeSet<&str> {
        self.corrupted
            .iter()
            .filter(|(_, &c)| c)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn count(&self) -> usize {
        self.corrupted.values().filter(|&&c| c).count()
    }

    pub fn rate(&self) -> f64 {
        self.count() as f64 / self.corrupted.len() as f64
    }

    /// Trusted labels for a noisy dataset: its labels with corruption undone.
    pub fn clean_labels(&self, noisy: &Dataset) -> HashMap<String, Label> {
        noisy
            .iter()
            .map(|e| {
                let l = if self.is_corrupted(&e.id) {
                    e.original_label.flipped()
                } else {
                    e.original_label
                };
                (e.id.clone(), l)
            })
            .collect()
    }
}

/// Flip `round(rate * n)` uniformly chosen labels. The receipt lists the
/// corrupted ids.
pub fn inject_noise(clean: &Dataset, rate: f64, seed: u64) -> Result<(Dataset, NoiseMask, TransformReceipt)> {
    if clean.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!("noise rate {rate} outside [0, 1]")));
    }
    let n = clean.len();
    if rate > 0.0 && rate * (n as f64) < 1.0 {
        return Err(Error::invalid(format!(
            "noise rate {rate} corrupts fewer than one of {n} examples"
        )));
    }
    let k = (rate * n as f64).round() as usize;
    let (noisy, mut receipt) = random_ablation(clean, k, AblationMode::Flip, seed)?;
    receipt.mode = TransformMode::NoiseInject;
    let hit: BTreeSet<&str> = receipt.affected_ids.iter().map(String::as_str).collect();
    let mask = NoiseMask {
        corrupted: clean.iter().map(|e| (e.id.clone(), hit.contains(e.id.as_str()))).collect(),
    };
    Ok((noisy, mask, receipt))
}
