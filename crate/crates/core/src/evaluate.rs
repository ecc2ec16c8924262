//! Re-evaluating external models on original versus gold labels.
//!
//! Models enter as score files: CSV with header `example_id,score`, one row
//! per test example, scores in `[0, 1]`. The model name is the file stem.
//! Hard predictions use the same strict rule as the ensemble (`score > 0.5`).

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::report;
use crate::stats::{accuracy, roc_auc, weighted_f1};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub example_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFile {
    pub model: String,
    pub scores: Vec<ScoreRow>,
}

impl ScoreFile {
    pub fn new(model: impl Into<String>, scores: Vec<ScoreRow>) -> Result<Self> {
        let model = model.into();
        let mut seen = HashSet::with_capacity(scores.len());
        for r in &scores {
            if !(0.0..=1.0).contains(&r.score) {
                return Err(Error::invalid(format!(
                    "{model}: score {} for {} outside [0, 1]",
                    r.score, r.example_id
                )));
            }
            if !seen.insert(r.example_id.as_str()) {
                return Err(Error::DuplicateId(format!("{model}: {}", r.example_id)));
            }
        }
        Ok(ScoreFile { model, scores })
    }

    /// CSV, or JSONL when the extension is `.jsonl`; the model is the file stem.
    pub fn read(path: &Path) -> Result<Self> {
        let model = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::invalid(format!("{}: no file stem", path.display())))?
            .to_string();
        let rows = match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => report::read_jsonl(path)?,
            _ => report::read_csv(path)?,
        };
        ScoreFile::new(model, rows)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        report::write_csv(&self.scores, path)
    }

    /// Scores in `ids` order. The id sets must match exactly.
    pub fn aligned(&self, ids: &[String]) -> Result<Vec<f64>> {
        if self.scores.len() != ids.len() {
            return Err(Error::IdMismatch(format!(
                "{} has {} scores for {} examples",
                self.model,
                self.scores.len(),
                ids.len()
            )));
        }
        let by_id: HashMap<&str, f64> = self.scores.iter().map(|r| (r.example_id.as_str(), r.score)).collect();
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::IdMismatch(format!("{} has no score for {id}", self.model)))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub roc_auc: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
}

pub fn metrics(scores: &[f64], labels: &[Label]) -> Result<Metrics> {
    let predicted: Vec<Label> = scores.iter().map(|&s| Label::from_bool(s > 0.5)).collect();
    Ok(Metrics {
        roc_auc: roc_auc(scores, labels)?,
        weighted_f1: weighted_f1(labels, &predicted)?,
        accuracy: accuracy(labels, &predicted)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankShiftRow {
    pub model: String,
    pub original: Metrics,
    pub gold: Metrics,
    pub rank_original: usize,
    pub rank_gold: usize,
    /// `rank_original - rank_gold`; positive means the model moved up.
    pub rank_delta: i64,
    pub auc_change_pct: f64,
    pub f1_change_pct: f64,
    pub accuracy_change_pct: f64,
}

fn pct(before: f64, after: f64) -> f64 {
    if before == 0.0 {
        if after == 0.0 { 0.0 } else { f64::INFINITY.copysign(after) }
    } else {
        100.0 * (after - before) / before
    }
}

/// Ranks by descending AUC, 1-based. Equal AUCs are ordered by model name.
fn ranks(models: &[&str], aucs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..models.len()).collect();
    order.sort_by(|&a, &b| aucs[b].total_cmp(&aucs[a]).then_with(|| models[a].cmp(models[b])));
    let mut rank = vec![0; models.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    rank
}

/// One row per model, ordered by gold rank.
pub fn rank_shift(
    files: &[ScoreFile],
    original: &HashMap<String, Label>,
    gold: &HashMap<String, Label>,
) -> Result<Vec<RankShiftRow>> {
    if files.is_empty() {
        return Err(Error::Empty("score files"));
    }
    let mut ids: Vec<String> = original.keys().cloned().collect();
    ids.sort();
    if gold.len() != ids.len() || ids.iter().any(|id| !gold.contains_key(id)) {
        return Err(Error::IdMismatch("original and gold labels cover different examples".into()));
    }
    let names: HashSet<&str> = files.iter().map(|f| f.model.as_str()).collect();
    if names.len() != files.len() {
        return Err(Error::invalid("score files share a model name"));
    }
    let orig_labels: Vec<Label> = ids.iter().map(|id| original[id]).collect();
    let gold_labels: Vec<Label> = ids.iter().map(|id| gold[id]).collect();
    let mut per_model = Vec::with_capacity(files.len());
    for f in files {
        let s = f.aligned(&ids)?;
        per_model.push((metrics(&s, &orig_labels)?, metrics(&s, &gold_labels)?));
    }
    let models: Vec<&str> = files.iter().map(|f| f.model.as_str()).collect();
    let r_orig = ranks(&models, &per_model.iter().map(|m| m.0.roc_auc).collect::<Vec<_>>());
    let r_gold = ranks(&models, &per_model.iter().map(|m| m.1.roc_auc).collect::<Vec<_>>());
    let mut rows: Vec<RankShiftRow> = files
        .iter()
        .zip(per_model)
        .enumerate()
        .map(|(i, (f, (o, g)))| RankShiftRow {
            model: f.model.clone(),
            original: o,
            gold: g,
            rank_original: r_orig[i],
            rank_gold: r_gold[i],
            rank_delta: r_orig[i] as i64 - r_gold[i] as i64,
            auc_change_pct: pct(o.roc_auc, g.roc_auc),
            f1_change_pct: pct(o.weighted_f1, g.weighted_f1),
            accuracy_change_pct: pct(o.accuracy, g.accuracy),
        })
        .collect();
    rows.sort_by_key(|r| r.rank_gold);
    Ok(rows)
}

fn delta_cell(d: i64) -> String {
    match d {
        0 => "(---)".into(),
        d if d > 0 => format!("(+{d})"),
        d => format!("({d})"),
    }
}

fn pct_cell(p: f64) -> String {
    let r = p.round();
    if r == 0.0 {
        "(---)".into()
    } else if r > 0.0 {
        format!("(+{r:.0}%)")
    } else {
        format!("({r:.0}%)")
    }
}

/// Plain-text table: rank and each metric under original and gold labels,
/// with the gold column annotated by rank delta or rounded percent change.
pub fn format_rank_shift(rows: &[RankShiftRow]) -> String {
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>4} {:<10}  {:>5} {:<13}  {:>5} {:<13}  {:>5} {:<13}",
        "model", "rank", "", "auc", "", "f1", "", "acc", ""
    );
    let _ = writeln!(
        out,
        "{:<width$}  {:>4} {:<10}  {:>5} {:<13}  {:>5} {:<13}  {:>5} {:<13}",
        "", "orig", "gold", "orig", "gold", "orig", "gold", "orig", "gold"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>4} {:<10}  {:>5.2} {:<13}  {:>5.2} {:<13}  {:>5.2} {:<13}",
            r.model,
            r.rank_original,
            format!("{} {}", r.rank_gold, delta_cell(r.rank_delta)),
            r.original.roc_auc,
            format!("{:.2} {}", r.gold.roc_auc, pct_cell(r.auc_change_pct)),
            r.original.weighted_f1,
            format!("{:.2} {}", r.gold.weighted_f1, pct_cell(r.f1_change_pct)),
            r.original.accuracy,
            format!("{:.2} {}", r.gold.accuracy, pct_cell(r.accuracy_change_pct)),
        );
    }
    out
}
