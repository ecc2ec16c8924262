//! Averaging judge probabilities into one ensemble score per example, and
//! the ensemble-size ablation.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::flagging::disagreement_confidence;
use crate::providers::Judgment;
use crate::sampling;
use crate::seed_of;
use crate::stats::{self, detection_prf, roc_auc};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Member {
    pub model_id: String,
    pub prompt_id: String,
}

impl Member {
    pub fn new(model_id: impl Into<String>, prompt_id: impl Into<String>) -> Self {
        Member {
            model_id: model_id.into(),
            prompt_id: prompt_id.into(),
        }
    }
}

impl std::fmt::Display for Member {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.model_id, self.prompt_id)
    }
}

/// Judgments indexed by (example, member). Examples and members keep the
/// order in which they were first seen.
#[derive(Debug, Clone, Default)]
pub struct MemberPool {
    examples: Vec<String>,
    example_index: HashMap<String, usize>,
    roster: Vec<Member>,
    member_index: HashMap<Member, usize>,
    p: HashMap<(usize, usize), f64>,
}

impl MemberPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_judgments<'a>(judgments: impl IntoIterator<Item = &'a Judgment>) -> Result<Self> {
        let mut pool = MemberPool::new();
        for j in judgments {
            pool.insert(j)?;
        }
        Ok(pool)
    }

    pub fn insert(&mut self, j: &Judgment) -> Result<()> {
        j.validate()?;
        let ei = match self.example_index.get(&j.example_id) {
            Some(&i) => i,
            None => {
                self.examples.push(j.example_id.clone());
                self.example_index.insert(j.example_id.clone(), self.examples.len() - 1);
                self.examples.len() - 1
            }
        };
        let m = Member::new(j.model_id.clone(), j.prompt_id.clone());
        let mi = match self.member_index.get(&m) {
            Some(&i) => i,
            None => {
                self.roster.push(m.clone());
                self.member_index.insert(m, self.roster.len() - 1);
                self.roster.len() - 1
            }
        };
        if self.p.insert((ei, mi), j.p_consistent).is_some() {
            return Err(Error::invalid(format!(
                "duplicate judgment for ({}, {}, {})",
                j.example_id, j.model_id, j.prompt_id
            )));
        }
        Ok(())
    }

    pub fn roster(&self) -> &[Member] {
        &self.roster
    }

    pub fn example_ids(&self) -> &[String] {
        &self.examples
    }

    pub fn get(&self, example_id: &str, member: &Member) -> Option<f64> {
        let ei = *self.example_index.get(example_id)?;
        let mi = *self.member_index.get(member)?;
        self.p.get(&(ei, mi)).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleScore {
    pub example_id: String,
    pub p: f64,
    pub members: Vec<Member>,
    pub predicted_label: Label,
}

/// Arithmetic mean, summed in sorted order so the result does not depend on
/// member order.
pub fn ensemble_mean(ps: &[f64]) -> f64 {
    let mut v = ps.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Strict rule: exactly 0.5 maps to 0.
pub fn predicted_label(p: f64) -> Label {
    Label::from_bool(p > 0.5)
}

fn check_subset(subset: &[Member]) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::invalid("ensemble member subset is empty"));
    }
    let distinct: HashSet<&Member> = subset.iter().collect();
    if distinct.len() != subset.len() {
        return Err(Error::invalid("ensemble member subset contains duplicates"));
    }
    Ok(())
}

pub fn aggregate(pool: &MemberPool, subset: &[Member], example_id: &str) -> Result<EnsembleScore> {
    check_subset(subset)?;
    let ps = subset
        .iter()
        .map(|m| {
            pool.get(example_id, m).ok_or_else(|| Error::MissingJudgment {
                example_id: example_id.to_string(),
                model_id: m.model_id.clone(),
                prompt_id: m.prompt_id.clone(),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let p = ensemble_mean(&ps);
    Ok(EnsembleScore {
        example_id: example_id.to_string(),
        p,
        members: subset.to_vec(),
        predicted_label: predicted_label(p),
    })
}

/// [`aggregate`] for every example in the pool, in pool order.
pub fn aggregate_all(pool: &MemberPool, subset: &[Member]) -> Result<Vec<EnsembleScore>> {
    pool.example_ids()
        .iter()
        .map(|id| aggregate(pool, subset, id))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveConfig {
    pub sizes: Vec<usize>,
    pub trials_per_size: usize,
    pub seed: u64,
    /// Confidence a disagreement needs before it counts as a detected error.
    pub flag_threshold: f64,
}

/// One trial of the ablation; the exported row is `size, trial, auc, f1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub trial: usize,
    pub auc: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub size: usize,
    pub trials: usize,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
}

/// Members for one trial. The draw depends only on `(seed, size, trial)`, so
/// parallel and serial runs agree.
pub fn trial_subset(roster: &[Member], size: usize, seed: u64, trial: usize) -> Vec<Member> {
    let mut rng = sampling::rng(seed_of!(seed, size, trial));
    let mut idx = sampling::sample_indices(&mut rng, roster.len(), size);
    idx.sort_unstable();
    idx.into_iter().map(|i| roster[i].clone()).collect()
}

/// For each size, score `trials_per_size` random member subsets: ROC AUC of
/// the ensemble probability against gold labels, and detection F1 where a
/// predicted error is a disagreement with the original label at confidence
/// `>= flag_threshold` and a true error is gold != original.
pub fn ensemble_size_curve(
    pool: &MemberPool,
    gold: &HashMap<String, Label>,
    original: &HashMap<String, Label>,
    cfg: &CurveConfig,
) -> Result<(Vec<CurvePoint>, Vec<CurveSummary>)> {
    let roster = pool.roster();
    if cfg.trials_per_size == 0 {
        return Err(Error::invalid("trials_per_size must be at least 1"));
    }
    for &s in &cfg.sizes {
        if s == 0 || s > roster.len() {
            return Err(Error::invalid(format!(
                "ensemble size {s} outside [1, {}]",
                roster.len()
            )));
        }
    }
    let ids = pool.example_ids();
    let mut gold_labels = Vec::with_capacity(ids.len());
    let mut true_errors = HashSet::new();
    for (i, id) in ids.iter().enumerate() {
        let g = *gold.get(id).ok_or_else(|| Error::MissingLabel(id.clone()))?;
        let o = *original.get(id).ok_or_else(|| Error::MissingLabel(id.clone()))?;
        gold_labels.push(g);
        if g != o {
            true_errors.insert(i);
        }
    }
    let universe: HashSet<usize> = (0..ids.len()).collect();

    let jobs: Vec<(usize, usize)> = cfg
        .sizes
        .iter()
        .flat_map(|&s| (0..cfg.trials_per_size).map(move |t| (s, t)))
        .collect();
    let points = jobs
        .par_iter()
        .map(|&(size, trial)| {
            let subset = trial_subset(roster, size, cfg.seed, trial);
            let scores = aggregate_all(pool, &subset)?;
            let ps: Vec<f64> = scores.iter().map(|s| s.p).collect();
            let auc = roc_auc(&ps, &gold_labels)?;
            let flagged: HashSet<usize> = scores
                .iter()
                .enumerate()
                .filter(|(_, s)| {
                    let o = original[&s.example_id];
                    disagreement_confidence(s.p, o).is_some_and(|c| c >= cfg.flag_threshold)
                })
                .map(|(i, _)| i)
                .collect();
            let f1 = detection_prf(&flagged, &true_errors, &universe)?.f1;
            Ok(CurvePoint {
                size,
                trial,
                auc,
                f1,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let summaries = cfg
        .sizes
        .iter()
        .map(|&size| {
            let (aucs, f1s): (Vec<f64>, Vec<f64>) = points
                .iter()
                .filter(|p| p.size == size)
                .map(|p| (p.auc, p.f1))
                .unzip();
            let (mean_auc, std_auc) = stats::mean_std(&aucs);
            let (mean_f1, std_f1) = stats::mean_std(&f1s);
            CurveSummary {
                size,
                trials: aucs.len(),
                mean_auc,
                std_auc,
                mean_f1,
                std_f1,
            }
        })
        .collect();
    Ok((points, summaries))
}
