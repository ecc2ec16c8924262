//! Contrast ensemble predictions with original labels, flag strong
//! disagreements, bin them by confidence, and merge expert resolutions into
//! gold labels.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label};
use crate::ensemble::{predicted_label, EnsembleScore};
use crate::error::{Error, Result};
use crate::report::read_jsonl;
use crate::seed_of;
use crate::stats::binomial::{clopper_pearson_fpc, Interval, IntervalMethod};
use crate::stats::bootstrap::{bootstrap_distribution, mean, percentile};

pub const DEFAULT_EDGES: [f64; 5] = [0.5, 0.75, 0.9, 0.95, 1.0];
pub const DEFAULT_MIN_COUNT: usize = 35;
/// Version tag written into intake and export records.
pub const SCHEMA_VERSION: u32 = 1;

/// `max(p, 1 - p)` when the ensemble's label differs from `original`.
pub fn disagreement_confidence(p: f64, original: Label) -> Option<f64> {
    (predicted_label(p) != original).then(|| p.max(1.0 - p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagRecord {
    pub example_id: String,
    pub original_label: Label,
    pub ensemble_p: f64,
    pub predicted_label: Label,
    pub disagrees: bool,
    pub disagreement_confidence: Option<f64>,
    pub bin_index: Option<usize>,
    pub flagged: bool,
}

impl FlagRecord {
    pub fn new(example_id: impl Into<String>, original: Label, p: f64, threshold: f64) -> Self {
        let confidence = disagreement_confidence(p, original);
        FlagRecord {
            example_id: example_id.into(),
            original_label: original,
            ensemble_p: p,
            predicted_label: predicted_label(p),
            disagrees: confidence.is_some(),
            disagreement_confidence: confidence,
            bin_index: None,
            flagged: confidence.is_some_and(|c| c >= threshold),
        }
    }
}

/// Flags for every scored example, in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagReport {
    pub threshold: f64,
    pub records: Vec<FlagRecord>,
}

impl FlagReport {
    /// Flagged records, most confident first. Ties keep input order.
    pub fn flagged(&self) -> Vec<&FlagRecord> {
        let mut v: Vec<&FlagRecord> = self.records.iter().filter(|r| r.flagged).collect();
        v.sort_by(|a, b| b.disagreement_confidence.partial_cmp(&a.disagreement_confidence).unwrap());
        v
    }

    pub fn flagged_ids(&self) -> HashSet<&str> {
        self.records
            .iter()
            .filter(|r| r.flagged)
            .map(|r| r.example_id.as_str())
            .collect()
    }

    pub fn disagreements(&self) -> impl Iterator<Item = &FlagRecord> {
        self.records.iter().filter(|r| r.disagrees)
    }

    pub fn get(&self, id: &str) -> Option<&FlagRecord> {
        self.records.iter().find(|r| r.example_id == id)
    }

    /// Same scores, different threshold.
    pub fn with_threshold(&self, threshold: f64) -> Result<FlagReport> {
        check_threshold(threshold)?;
        let records = self
            .records
            .iter()
            .map(|r| FlagRecord {
                flagged: r.disagreement_confidence.is_some_and(|c| c >= threshold),
                ..r.clone()
            })
            .collect();
        Ok(FlagReport { threshold, records })
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    // Thresholds above 1 are allowed and flag nothing.
    if threshold.is_nan() || threshold < 0.5 {
        return Err(Error::invalid(format!("threshold {threshold} below 0.5")));
    }
    Ok(())
}

pub fn flag(scores: &[EnsembleScore], originals: &HashMap<String, Label>, threshold: f64) -> Result<FlagReport> {
    check_threshold(threshold)?;
    let records = scores
        .iter()
        .map(|s| {
            let o = *originals
                .get(&s.example_id)
                .ok_or_else(|| Error::MissingLabel(s.example_id.clone()))?;
            Ok(FlagRecord::new(s.example_id.clone(), o, s.p, threshold))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FlagReport { threshold, records })
}

/// Confidence bins over `[0.5, 1.0]`: `[e_i, e_{i+1})`, last bin closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub edges: Vec<f64>,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
}

fn default_min_count() -> usize {
    DEFAULT_MIN_COUNT
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec {
            edges: DEFAULT_EDGES.to_vec(),
            min_count: DEFAULT_MIN_COUNT,
        }
    }
}

impl BinSpec {
    pub fn new(edges: Vec<f64>, min_count: usize) -> Result<Self> {
        let spec = BinSpec { edges, min_count };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.edges;
        if e.len() < 2 || e[0] != 0.5 || e[e.len() - 1] != 1.0 {
            return Err(Error::invalid("bin edges must start at 0.5 and end at 1.0"));
        }
        if e.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::invalid("bin edges must be strictly ascending"));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn bin_of(&self, confidence: f64) -> Option<usize> {
        if !(0.5..=1.0).contains(&confidence) {
            return None;
        }
        let last = self.bins() - 1;
        Some(
            self.edges[1..self.bins()]
                .iter()
                .position(|&upper| confidence < upper)
                .unwrap_or(last),
        )
    }
}

/// Copies of `records` with `bin_index` set. Every record must be a
/// disagreement, and every bin must hold at least `spec.min_count` of them.
pub fn assign_bins(records: &[&FlagRecord], spec: &BinSpec) -> Result<Vec<FlagRecord>> {
    spec.validate()?;
    let mut counts = vec![0usize; spec.bins()];
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let c = r.disagreement_confidence.ok_or_else(|| {
            Error::invalid(format!("{} is not a disagreement and cannot be binned", r.example_id))
        })?;
        let b = spec
            .bin_of(c)
            .ok_or_else(|| Error::invalid(format!("confidence {c} of {} outside [0.5, 1]", r.example_id)))?;
        counts[b] += 1;
        out.push(FlagRecord {
            bin_index: Some(b),
            ..(*r).clone()
        });
    }
    for (index, &count) in counts.iter().enumerate() {
        if count < spec.min_count {
            return Err(Error::UnderpopulatedBin {
                index,
                lower: spec.edges[index],
                upper: spec.edges[index + 1],
                count,
                min_count: spec.min_count,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinAgreement {
    pub bin_index: usize,
    pub lower_edge: f64,
    pub upper_edge: f64,
    pub count: usize,
    pub expert_agrees_llm: f64,
    pub expert_agrees_original: f64,
    pub llm_ci: Interval,
    pub original_ci: Interval,
}

/// Per-bin expert agreement with the ensemble and with the original label,
/// with percentile bootstrap intervals. Bin `i` resamples with seed
/// `seed_of!(seed, "bin", i)`.
pub fn bin_agreement_curve(
    binned: &[FlagRecord],
    expert_labels: &HashMap<String, Label>,
    spec: &BinSpec,
    resamples: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<BinAgreement>> {
    spec.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); spec.bins()];
    for r in binned {
        let b = r
            .bin_index
            .ok_or_else(|| Error::invalid(format!("{} has no bin", r.example_id)))?;
        if b >= spec.bins() {
            return Err(Error::invalid(format!("{} has bin {b} outside the spec", r.example_id)));
        }
        let expert = *expert_labels
            .get(&r.example_id)
            .ok_or_else(|| Error::MissingLabel(r.example_id.clone()))?;
        per_bin[b].push(if expert == r.predicted_label { 1.0 } else { 0.0 });
    }
    per_bin
        .into_par_iter()
        .enumerate()
        .map(|(i, agree)| {
            if agree.is_empty() {
                return Err(Error::UnderpopulatedBin {
                    index: i,
                    lower: spec.edges[i],
                    upper: spec.edges[i + 1],
                    count: 0,
                    min_count: spec.min_count,
                });
            }
            let dist = bootstrap_distribution(&agree, mean, resamples, seed_of!(seed, "bin", i))?;
            let flipped: Vec<f64> = dist.iter().map(|x| 1.0 - x).collect();
            let rate = mean(&agree);
            let ci = |d: &[f64]| Interval {
                lower: percentile(d, alpha / 2.0),
                upper: percentile(d, 1.0 - alpha / 2.0),
                alpha,
                method: IntervalMethod::BootstrapPercentile,
            };
            Ok(BinAgreement {
                bin_index: i,
                lower_edge: spec.edges[i],
                upper_edge: spec.edges[i + 1],
                count: agree.len(),
                expert_agrees_llm: rate,
                expert_agrees_original: 1.0 - rate,
                llm_ci: ci(&dist),
                original_ci: ci(&flipped),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldSource {
    OriginalConfirmed,
    ExpertResolution,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub example_id: String,
    pub label: Label,
    pub source: GoldSource,
}

/// Original label where the ensemble agrees with it, expert resolution
/// otherwise. Uses every record's disagreement, not only flagged ones.
pub fn merge_gold(records: &[FlagRecord], resolutions: &HashMap<String, Label>) -> Result<Vec<GoldLabel>> {
    records
        .iter()
        .map(|r| {
            if r.disagrees {
                let label = *resolutions
                    .get(&r.example_id)
                    .ok_or_else(|| Error::Unresolved(r.example_id.clone()))?;
                Ok(GoldLabel {
                    example_id: r.example_id.clone(),
                    label,
                    source: GoldSource::ExpertResolution,
                })
            } else {
                Ok(GoldLabel {
                    example_id: r.example_id.clone(),
                    label: r.original_label,
                    source: GoldSource::OriginalConfirmed,
                })
            }
        })
        .collect()
}

pub fn gold_map(gold: &[GoldLabel]) -> HashMap<String, Label> {
    gold.iter().map(|g| (g.example_id.clone(), g.label)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRate {
    pub sample_size: usize,
    pub errors: usize,
    pub population_size: u64,
    pub rate: f64,
    pub interval: Interval,
}

impl ErrorRate {
    pub fn lower_bound(&self) -> f64 {
        self.interval.lower
    }

    /// Percent rate with the lower bound in parentheses, e.g. `16.9 (11.6)`.
    pub fn cell(&self) -> String {
        format!("{:.1} ({:.1})", 100.0 * self.rate, 100.0 * self.interval.lower)
    }
}

pub fn error_rate_report(
    gold: &[GoldLabel],
    originals: &HashMap<String, Label>,
    population_size: u64,
    alpha: f64,
) -> Result<ErrorRate> {
    if gold.is_empty() {
        return Err(Error::Empty("gold labels"));
    }
    let mut errors = 0;
    for g in gold {
        let o = originals
            .get(&g.example_id)
            .ok_or_else(|| Error::MissingLabel(g.example_id.clone()))?;
        if *o != g.label {
            errors += 1;
        }
    }
    let n = gold.len();
    let interval = clopper_pearson_fpc(errors as u64, n as u64, population_size, alpha)?;
    Ok(ErrorRate {
        sample_size: n,
        errors,
        population_size,
        rate: errors as f64 / n as f64,
        interval,
    })
}

/// One row of the flag report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagRow {
    pub example_id: String,
    pub original: u8,
    pub p: f64,
    pub confidence: Option<f64>,
    pub bin: Option<usize>,
    pub flagged: bool,
}

impl From<&FlagRecord> for FlagRow {
    fn from(r: &FlagRecord) -> Self {
        FlagRow {
            example_id: r.example_id.clone(),
            original: r.original_label.as_u8(),
            p: r.ensemble_p,
            confidence: r.disagreement_confidence,
            bin: r.bin_index,
            flagged: r.flagged,
        }
    }
}

pub fn write_flag_csv(records: &[FlagRecord], path: &Path) -> Result<()> {
    let rows: Vec<FlagRow> = records.iter().map(FlagRow::from).collect();
    crate::report::write_csv(&rows, path)
}

/// A flagged example handed to the review service. The service strips the
/// label fields before anything reaches an annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub schema_version: u32,
    pub example_id: String,
    pub dataset: String,
    pub grounding: String,
    pub generated_text: String,
    pub original_label: Label,
    pub ensemble_p: f64,
}

/// Review intake for the flagged records of `report`, most confident first.
pub fn review_intake(report: &FlagReport, dataset: &Dataset) -> Result<Vec<ReviewItem>> {
    report
        .flagged()
        .into_iter()
        .map(|r| {
            let e = dataset
                .get(&r.example_id)
                .ok_or_else(|| Error::IdMismatch(format!("{} is not in {}", r.example_id, dataset.name())))?;
            Ok(ReviewItem {
                schema_version: SCHEMA_VERSION,
                example_id: e.id.clone(),
                dataset: e.dataset.clone(),
                grounding: e.grounding.clone(),
                generated_text: e.generated_text.clone(),
                original_label: r.original_label,
                ensemble_p: r.ensemble_p,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolvedBy {
    Agreement,
    Reconciliation,
}

/// Expert outcome for one flagged example. This is both the review
/// service's export format and the only expert-label input flagging reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertResolution {
    pub schema_version: u32,
    pub example_id: String,
    pub final_label: Label,
    pub resolved_by: ResolvedBy,
    /// Independent labels before reconciliation, by annotator.
    pub independent_labels: BTreeMap<String, Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Final labels from a review export. Rejects duplicates and unknown schema
/// versions.
pub fn read_expert_labels(path: &Path) -> Result<HashMap<String, Label>> {
    let rows: Vec<ExpertResolution> = read_jsonl(path)?;
    resolution_map(&rows)
}

pub fn resolution_map(rows: &[ExpertResolution]) -> Result<HashMap<String, Label>> {
    let mut out = HashMap::with_capacity(rows.len());
    for r in rows {
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "{}: schema version {} unsupported",
                r.example_id, r.schema_version
            )));
        }
        if out.insert(r.example_id.clone(), r.final_label).is_some() {
            return Err(Error::DuplicateId(r.example_id.clone()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, original: u8, p: f64) -> FlagRecord {
        FlagRecord::new(id, Label::from_bool(original == 1), p, 0.5)
    }

    #[test]
    fn flag_examples() {
        let r = FlagRecord::new("a", Label::Inconsistent, 0.98, 0.95);
        assert!(r.disagrees && r.flagged);
        assert_eq!(r.disagreement_confidence, Some(0.98));
        let r = FlagRecord::new("b", Label::Inconsistent, 0.49, 0.5);
        assert!(!r.disagrees && !r.flagged);
        let r = FlagRecord::new("c", Label::Inconsistent, 0.6, 0.75);
        assert!(r.disagrees && !r.flagged);
        // Exactly 0.5 predicts 0, so it disagrees with a 1 at confidence 0.5.
        let r = FlagRecord::new("d", Label::Consistent, 0.5, 0.5);
        assert!(r.flagged);
        assert_eq!(r.disagreement_confidence, Some(0.5));
    }

    #[test]
    fn flagged_sorted_and_missing_original() {
        let scores: Vec<EnsembleScore> = [("a", 0.7), ("b", 0.95), ("c", 0.1)]
            .iter()
            .map(|&(id, p)| EnsembleScore {
                example_id: id.into(),
                p,
                members: vec![],
                predicted_label: predicted_label(p),
            })
            .collect();
        let mut orig: HashMap<String, Label> =
            [("a", 0), ("b", 0), ("c", 0)].iter().map(|&(k, v)| (k.to_string(), Label::from_bool(v == 1))).collect();
        let rep = flag(&scores, &orig, 0.5).unwrap();
        let ids: Vec<&str> = rep.flagged().iter().map(|r| r.example_id.as_str()).collect();
        assert_eq!(ids, ["b", "a"]);
        orig.remove("c");
        assert!(matches!(flag(&scores, &orig, 0.5), Err(Error::MissingLabel(id)) if id == "c"));
    }

    #[test]
    fn bin_lookup() {
        let s = BinSpec::default();
        assert_eq!(s.bin_of(0.93), Some(2));
        assert_eq!(s.bin_of(0.75), Some(1));
        assert_eq!(s.bin_of(0.5), Some(0));
        assert_eq!(s.bin_of(1.0), Some(3));
        assert_eq!(s.bin_of(0.95), Some(3));
        assert_eq!(s.bin_of(0.49), None);
        assert!(BinSpec::new(vec![0.5, 0.9, 0.8, 1.0], 1).is_err());
        assert!(BinSpec::new(vec![0.4, 1.0], 1).is_err());
    }

    #[test]
    fn underpopulated_bin() {
        let recs: Vec<FlagRecord> = (0..10).map(|i| rec(&format!("x{i}"), 0, 0.8)).collect();
        let refs: Vec<&FlagRecord> = recs.iter().collect();
        let err = assign_bins(&refs, &BinSpec::default()).unwrap_err();
        assert!(matches!(err, Error::UnderpopulatedBin { index: 0, count: 0, .. }));
        let one = BinSpec::new(vec![0.5, 1.0], 10).unwrap();
        assert!(assign_bins(&refs, &one).is_ok());
        let eleven = BinSpec::new(vec![0.5, 1.0], 11).unwrap();
        assert!(matches!(
            assign_bins(&refs, &eleven),
            Err(Error::UnderpopulatedBin { count: 10, min_count: 11, .. })
        ));
    }

    #[test]
    fn agreement_rates() {
        let spec = BinSpec::new(vec![0.5, 1.0], 1).unwrap();
        let recs: Vec<FlagRecord> = (0..40).map(|i| rec(&format!("x{i}"), 0, 0.9)).collect();
        let refs: Vec<&FlagRecord> = recs.iter().collect();
        let binned = assign_bins(&refs, &spec).unwrap();
        let experts: HashMap<String, Label> = (0..40)
            .map(|i| (format!("x{i}"), Label::from_bool(i < 28)))
            .collect();
        let curve = bin_agreement_curve(&binned, &experts, &spec, 100, 0.05, 3).unwrap();
        assert!((curve[0].expert_agrees_llm - 0.7).abs() < 1e-12);
        assert!((curve[0].expert_agrees_original - 0.3).abs() < 1e-12);
        assert!(curve[0].llm_ci.lower < 0.7 && curve[0].llm_ci.upper > 0.7);

        let all_llm: HashMap<String, Label> = (0..40).map(|i| (format!("x{i}"), Label::Consistent)).collect();
        let c = bin_agreement_curve(&binned, &all_llm, &spec, 100, 0.05, 3).unwrap();
        assert_eq!((c[0].expert_agrees_llm, c[0].llm_ci.lower, c[0].llm_ci.upper), (1.0, 1.0, 1.0));

        let mut missing = experts.clone();
        missing.remove("x3");
        assert!(bin_agreement_curve(&binned, &missing, &spec, 100, 0.05, 3).is_err());
    }

    #[test]
    fn gold_merge() {
        let recs = vec![rec("a", 1, 0.9), rec("b", 0, 0.9)];
        let res: HashMap<String, Label> = [("b".to_string(), Label::Consistent)].into();
        let gold = merge_gold(&recs, &res).unwrap();
        assert_eq!(gold[0].source, GoldSource::OriginalConfirmed);
        assert_eq!(gold[0].label, Label::Consistent);
        assert_eq!(gold[1].source, GoldSource::ExpertResolution);
        assert_eq!(gold[1].label, Label::Consistent);
        assert!(matches!(merge_gold(&recs, &HashMap::new()), Err(Error::Unresolved(id)) if id == "b"));
    }

    fn rate_for(k: usize, n: usize, big_n: u64) -> ErrorRate {
        let originals: HashMap<String, Label> = (0..n).map(|i| (format!("x{i}"), Label::Consistent)).collect();
        let gold: Vec<GoldLabel> = (0..n)
            .map(|i| GoldLabel {
                example_id: format!("x{i}"),
                label: Label::from_bool(i >= k),
                source: GoldSource::ExpertResolution,
            })
            .collect();
        error_rate_report(&gold, &originals, big_n, 0.05).unwrap()
    }

    #[test]
    fn error_rate_cells() {
        assert_eq!(rate_for(27, 160, 2500).cell(), "16.9 (11.6)");
        assert_eq!(rate_for(34, 160, 836).cell(), "21.2 (15.8)");
        let zero = rate_for(0, 160, 2500);
        assert_eq!((zero.rate, zero.lower_bound()), (0.0, 0.0));
    }

    #[test]
    fn resolution_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("export.jsonl");
        let rows = vec![ExpertResolution {
            schema_version: SCHEMA_VERSION,
            example_id: "a".into(),
            final_label: Label::Inconsistent,
            resolved_by: ResolvedBy::Reconciliation,
            independent_labels: [("ann1".to_string(), Label::Consistent), ("ann2".to_string(), Label::Inconsistent)].into(),
            note: Some("unsupported date".into()),
        }];
        crate::report::write_jsonl(&rows, &path).unwrap();
        let m = read_expert_labels(&path).unwrap();
        assert_eq!(m["a"], Label::Inconsistent);
        let dup = [rows.clone(), rows].concat();
        assert!(resolution_map(&dup).is_err());
    }
}
