//! Pipeline stages over a [`RunConfig`], with the on-disk layout they share.
//!
//! ```text
//! <out>/<dataset>/judgments.jsonl      annotate
//! <out>/<dataset>/flags.csv            flag-report
//! <out>/<dataset>/review_intake.jsonl  flag-report (input to the review service)
//! <out>/<dataset>/gold.jsonl           flag-report, when expert labels exist
//! <out>/<dataset>/bins.csv             flag-report, when bins are populated
//! <out>/<dataset>/rank_shift.{csv,txt} evaluate
//! <out>/<dataset>/repair/<variant>/    repair
//! <out>/summary.{csv,txt}              flag-report
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{write_manifest, DatasetConfig, RunConfig};
use crate::dataset::{export_dataset, load_dataset, positive_rate, train_validation_split, Dataset, Format, Label};
use crate::ensemble::{aggregate_all, MemberPool};
use crate::error::{Error, Result};
use crate::evaluate::{format_rank_shift, rank_shift, RankShiftRow, ScoreFile};
use crate::flagging::{
    assign_bins, bin_agreement_curve, error_rate_report, flag, gold_map, merge_gold, read_expert_labels,
    review_intake, write_flag_csv, FlagReport, GoldLabel,
};
use crate::providers::http::{ReqwestTransport, Transport, TransportError};
use crate::providers::{annotate, Endpoint, JudgmentCache, JudgmentStore, Provider, ProviderConfig};
use crate::report;
use crate::seed_of;
use crate::simulate::mock_truth;
use crate::transforms::{filter_flagged, flip_flagged, random_ablation, AblationMode, TransformReceipt};

pub const JUDGMENTS_FILE: &str = "judgments.jsonl";
pub const FLAGS_FILE: &str = "flags.csv";
pub const INTAKE_FILE: &str = "review_intake.jsonl";
pub const GOLD_FILE: &str = "gold.jsonl";

pub fn load(d: &DatasetConfig) -> Result<Dataset> {
    let ds = load_dataset(&d.path, Format::from_path(&d.path))?;
    match d.population_size {
        Some(n) => ds.with_population_size(n),
        None => Ok(ds),
    }
}

pub fn dataset_dir(cfg: &RunConfig, d: &Dataset) -> PathBuf {
    cfg.out.join(d.name())
}

/// Fails every request; stands in when no provider needs the network.
struct Offline;

impl Transport for Offline {
    fn post_json(
        &self,
        url: &str,
        _headers: &[(String, String)],
        _body: &serde_json::Value,
        _timeout: std::time::Duration,
    ) -> std::result::Result<serde_json::Value, TransportError> {
        Err(TransportError::Network(format!("offline: {url}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateSummary {
    pub dataset: String,
    pub examples: usize,
    pub judgments: usize,
    pub failures: usize,
    pub backend_calls: usize,
    pub path: PathBuf,
}

pub fn roster(cfg: &RunConfig, mock: bool) -> Result<Vec<ProviderConfig>> {
    let roster = if mock { cfg.mock.providers() } else { cfg.providers.clone() };
    if roster.is_empty() {
        return Err(Error::invalid("no providers configured; add [[providers]] or pass --mock"));
    }
    Ok(roster)
}

/// Judge every configured dataset with every (provider, template) pair.
/// Provider construction errors (such as a missing credential variable)
/// abort before any request is made.
pub fn run_annotate(cfg: &RunConfig, mock: bool) -> Result<Vec<AnnotateSummary>> {
    if cfg.datasets.is_empty() {
        return Err(Error::invalid("no datasets configured"));
    }
    let roster = roster(cfg, mock)?;
    let needs_network = roster.iter().any(|p| matches!(p.endpoint, Endpoint::Http(_)));
    let transport: Arc<dyn Transport> = if needs_network {
        Arc::new(ReqwestTransport::new()?)
    } else {
        Arc::new(Offline)
    };
    let cache = Arc::new(JudgmentCache::open(&cfg.cache_dir())?);
    let templates = cfg.templates();
    let mut out = Vec::new();
    for dc in &cfg.datasets {
        let ds = load(dc)?;
        let truth = mock_truth(&ds)?;
        let providers = roster
            .iter()
            .map(|p| Provider::from_config(p, Some(&truth), transport.clone(), Some(cache.clone())))
            .collect::<Result<Vec<_>>>()?;
        let store = annotate(&providers, &templates, &ds, cfg.max_in_flight)?;
        let dir = dataset_dir(cfg, &ds);
        write_manifest(&dir, "annotate", cfg, std::slice::from_ref(&dc.path))?;
        let path = dir.join(JUDGMENTS_FILE);
        store.write_jsonl(&path)?;
        let failures = store.failures().count();
        if failures > 0 {
            tracing::warn!(dataset = ds.name(), failures, "some judgments failed; see failure rows");
        }
        out.push(AnnotateSummary {
            dataset: ds.name().to_string(),
            examples: ds.len(),
            judgments: store.judgments().count(),
            failures,
            backend_calls: providers.iter().map(Provider::backend_calls).sum(),
            path,
        });
    }
    Ok(out)
}

fn read_store(dir: &Path) -> Result<JudgmentStore> {
    let path = dir.join(JUDGMENTS_FILE);
    if !path.exists() {
        return Err(Error::MissingInput(format!(
            "{} not found; run annotate first",
            path.display()
        )));
    }
    JudgmentStore::read_jsonl(&path)
}

/// Full-roster flags for `ds` at `tau`, from the stored judgments.
pub fn flags_for(cfg: &RunConfig, ds: &Dataset, tau: f64) -> Result<FlagReport> {
    let store = read_store(&dataset_dir(cfg, ds))?;
    let pool = MemberPool::from_judgments(store.judgments())?;
    let judged: std::collections::HashSet<&str> = pool.example_ids().iter().map(String::as_str).collect();
    if judged.len() != ds.len() || ds.ids().any(|id| !judged.contains(id)) {
        return Err(Error::IdMismatch(format!(
            "judgments for {} do not cover exactly its {} examples",
            ds.name(),
            ds.len()
        )));
    }
    let scores = aggregate_all(&pool, pool.roster())?;
    flag(&scores, &ds.label_map(), tau)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub examples: usize,
    pub positive_pct: f64,
    pub disagree_pct: f64,
    pub flagged: usize,
    pub error_pct: Option<f64>,
    pub error_lower_pct: Option<f64>,
    pub population_size: Option<u64>,
}

/// The configured expert labels, or else the review service's export for a
/// session named after the dataset, if one has been written.
pub fn expert_labels_path(cfg: &RunConfig, dc: &DatasetConfig, ds: &Dataset) -> Option<PathBuf> {
    dc.expert_labels.clone().or_else(|| {
        let p = cfg.review_export(ds.name());
        p.exists().then_some(p)
    })
}

fn flag_report_one(cfg: &RunConfig, dc: &DatasetConfig) -> Result<SummaryRow> {
    let ds = load(dc)?;
    let dir = dataset_dir(cfg, &ds);
    let report = flags_for(cfg, &ds, cfg.tau)?;
    let expert_labels = expert_labels_path(cfg, dc, &ds);
    let mut inputs = vec![dc.path.clone(), dir.join(JUDGMENTS_FILE)];
    if let Some(e) = &expert_labels {
        inputs.push(e.clone());
    }
    write_manifest(&dir, "flag-report", cfg, &inputs)?;
    report::write_jsonl(&review_intake(&report, &ds)?, &dir.join(INTAKE_FILE))?;

    let disagreements: Vec<_> = report.disagreements().collect();
    let mut row = SummaryRow {
        dataset: ds.name().to_string(),
        examples: ds.len(),
        positive_pct: 100.0 * positive_rate(&ds)?,
        disagree_pct: 100.0 * disagreements.len() as f64 / ds.len() as f64,
        flagged: report.flagged().len(),
        error_pct: None,
        error_lower_pct: None,
        population_size: None,
    };

    let mut records = report.records.clone();
    if let Some(path) = &expert_labels {
        let experts = read_expert_labels(path)?;
        let gold = merge_gold(&report.records, &experts)?;
        report::write_jsonl(&gold, &dir.join(GOLD_FILE))?;
        let population = ds.population_size().unwrap_or(ds.len() as u64);
        let rate = error_rate_report(&gold, &ds.label_map(), population, cfg.alpha)?;
        row.error_pct = Some(100.0 * rate.rate);
        row.error_lower_pct = Some(100.0 * rate.lower_bound());
        row.population_size = Some(population);

        match assign_bins(&disagreements, &cfg.bins) {
            Ok(binned) => {
                let curve = bin_agreement_curve(
                    &binned,
                    &experts,
                    &cfg.bins,
                    cfg.bootstrap_resamples,
                    cfg.alpha,
                    seed_of!(cfg.seed, "bins", ds.name()),
                )?;
                let rows: Vec<BinCsvRow> = curve.iter().map(BinCsvRow::from).collect();
                report::write_csv(&rows, &dir.join("bins.csv"))?;
                let by_id: HashMap<&str, Option<usize>> =
                    binned.iter().map(|r| (r.example_id.as_str(), r.bin_index)).collect();
                for r in &mut records {
                    if let Some(b) = by_id.get(r.example_id.as_str()) {
                        r.bin_index = *b;
                    }
                }
            }
            Err(e @ Error::UnderpopulatedBin { .. }) => {
                tracing::warn!(dataset = ds.name(), "skipping bin curve: {e}");
            }
            Err(e) => return Err(e),
        }
    } else {
        // Bins without expert labels are still useful for triage.
        if let Ok(binned) = assign_bins(&disagreements, &cfg.bins) {
            let by_id: HashMap<&str, Option<usize>> =
                binned.iter().map(|r| (r.example_id.as_str(), r.bin_index)).collect();
            for r in &mut records {
                if let Some(b) = by_id.get(r.example_id.as_str()) {
                    r.bin_index = *b;
                }
            }
        }
    }
    write_flag_csv(&records, &dir.join(FLAGS_FILE))?;
    Ok(row)
}

#[derive(Serialize)]
struct BinCsvRow {
    bin: usize,
    lower_edge: f64,
    upper_edge: f64,
    count: usize,
    expert_agrees_llm: f64,
    llm_ci_lower: f64,
    llm_ci_upper: f64,
    expert_agrees_original: f64,
    original_ci_lower: f64,
    original_ci_upper: f64,
}

impl From<&crate::flagging::BinAgreement> for BinCsvRow {
    fn from(b: &crate::flagging::BinAgreement) -> Self {
        BinCsvRow {
            bin: b.bin_index,
            lower_edge: b.lower_edge,
            upper_edge: b.upper_edge,
            count: b.count,
            expert_agrees_llm: b.expert_agrees_llm,
            llm_ci_lower: b.llm_ci.lower,
            llm_ci_upper: b.llm_ci.upper,
            expert_agrees_original: b.expert_agrees_original,
            original_ci_lower: b.original_ci.lower,
            original_ci_upper: b.original_ci.upper,
        }
    }
}

pub fn format_summary(rows: &[SummaryRow]) -> String {
    let width = rows.iter().map(|r| r.dataset.len()).max().unwrap_or(7).max(7);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>6}  {:>6}  {:>10}  {:>12}", "dataset", "n", "% pos", "% disagree", "% error");
    for r in rows {
        let err = match (r.error_pct, r.error_lower_pct) {
            (Some(e), Some(l)) => format!("{e:.1} ({l:.1})"),
            _ => "-".into(),
        };
        let _ = writeln!(
            s,
            "{:<width$}  {:>6}  {:>6.1}  {:>10.1}  {:>12}",
            r.dataset, r.examples, r.positive_pct, r.disagree_pct, err
        );
    }
    s
}

/// Per dataset: positive rate, disagreement rate, and when expert labels
/// are configured the error rate with its finite-population lower bound.
pub fn run_flag_report(cfg: &RunConfig) -> Result<Vec<SummaryRow>> {
    if cfg.datasets.is_empty() {
        return Err(Error::invalid("no datasets configured"));
    }
    let rows = cfg
        .datasets
        .iter()
        .map(|d| flag_report_one(cfg, d))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(&cfg.out)?;
    report::write_csv(&rows, &cfg.out.join("summary.csv"))?;
    std::fs::write(cfg.out.join("summary.txt"), format_summary(&rows))?;
    Ok(rows)
}

pub fn read_gold(cfg: &RunConfig, ds: &Dataset) -> Result<HashMap<String, Label>> {
    let path = dataset_dir(cfg, ds).join(GOLD_FILE);
    if !path.exists() {
        return Err(Error::MissingInput(format!(
            "{} not found; run flag-report with expert labels first",
            path.display()
        )));
    }
    let gold: Vec<GoldLabel> = report::read_jsonl(&path)?;
    Ok(gold_map(&gold))
}

#[derive(Serialize)]
struct RankShiftCsvRow<'a> {
    model: &'a str,
    rank_original: usize,
    rank_gold: usize,
    rank_delta: i64,
    auc_original: f64,
    auc_gold: f64,
    auc_change_pct: f64,
    f1_original: f64,
    f1_gold: f64,
    f1_change_pct: f64,
    accuracy_original: f64,
    accuracy_gold: f64,
    accuracy_change_pct: f64,
}

pub fn write_rank_shift(rows: &[RankShiftRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let flat: Vec<RankShiftCsvRow> = rows
        .iter()
        .map(|r| RankShiftCsvRow {
            model: &r.model,
            rank_original: r.rank_original,
            rank_gold: r.rank_gold,
            rank_delta: r.rank_delta,
            auc_original: r.original.roc_auc,
            auc_gold: r.gold.roc_auc,
            auc_change_pct: r.auc_change_pct,
            f1_original: r.original.weighted_f1,
            f1_gold: r.gold.weighted_f1,
            f1_change_pct: r.f1_change_pct,
            accuracy_original: r.original.accuracy,
            accuracy_gold: r.gold.accuracy,
            accuracy_change_pct: r.accuracy_change_pct,
        })
        .collect();
    report::write_csv(&flat, &dir.join("rank_shift.csv"))?;
    std::fs::write(dir.join("rank_shift.txt"), format_rank_shift(rows))?;
    Ok(())
}

/// Rank-shift report for external score files against the first configured
/// dataset (or the one named `dataset`).
pub fn run_evaluate(cfg: &RunConfig, dataset: Option<&str>, scores: &[PathBuf]) -> Result<Vec<RankShiftRow>> {
    if scores.is_empty() {
        return Err(Error::invalid("pass at least one --scores file"));
    }
    let mut chosen = None;
    for dc in &cfg.datasets {
        let ds = load(dc)?;
        if dataset.map_or(true, |n| n == ds.name()) {
            chosen = Some((dc, ds));
            break;
        }
    }
    let (dc, ds) = chosen.ok_or_else(|| Error::invalid("no matching dataset configured"))?;
    let gold = read_gold(cfg, &ds)?;
    let files = scores.iter().map(|p| ScoreFile::read(p)).collect::<Result<Vec<_>>>()?;
    let rows = rank_shift(&files, &ds.label_map(), &gold)?;
    let dir = dataset_dir(cfg, &ds);
    let mut inputs = vec![dc.path.clone(), dir.join(GOLD_FILE)];
    inputs.extend(scores.iter().cloned());
    write_manifest(&dir.join("evaluate"), "evaluate", cfg, &inputs)?;
    write_rank_shift(&rows, &dir)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairSummary {
    pub dataset: String,
    pub receipts: Vec<TransformReceipt>,
    pub dir: PathBuf,
}

/// Flip, filter, and size-matched random controls at `tau`, each exported
/// with its receipt and a seeded 75/25 train/validation split.
pub fn run_repair(cfg: &RunConfig, tau: f64) -> Result<Vec<RepairSummary>> {
    if cfg.datasets.is_empty() {
        return Err(Error::invalid("no datasets configured"));
    }
    let mut out = Vec::new();
    for dc in &cfg.datasets {
        let ds = load(dc)?;
        let flags = flags_for(cfg, &ds, tau)?;
        let (flipped, r_flip) = flip_flagged(&ds, &flags, tau)?;
        let (filtered, r_filter) = filter_flagged(&ds, &flags, tau)?;
        let count = r_flip.affected_ids.len();
        let (rflip, r_rflip) = random_ablation(&ds, count, AblationMode::Flip, seed_of!(cfg.seed, "random-flip", ds.name()))?;
        let (rfilter, r_rfilter) =
            random_ablation(&ds, count, AblationMode::Filter, seed_of!(cfg.seed, "random-filter", ds.name()))?;
        let dir = dataset_dir(cfg, &ds).join("repair");
        write_manifest(&dir, "repair", cfg, &[dc.path.clone(), dataset_dir(cfg, &ds).join(JUDGMENTS_FILE)])?;
        let variants = [
            ("baseline", &ds, None),
            ("flip", &flipped, Some(&r_flip)),
            ("filter", &filtered, Some(&r_filter)),
            ("random_flip", &rflip, Some(&r_rflip)),
            ("random_filter", &rfilter, Some(&r_rfilter)),
        ];
        for (name, data, receipt) in variants {
            let vdir = dir.join(name);
            std::fs::create_dir_all(&vdir)?;
            export_dataset(data, &vdir.join("dataset.jsonl"), Format::Jsonl)?;
            let (train, val) = train_validation_split(data, seed_of!(cfg.seed, "split", ds.name()))?;
            export_dataset(&train, &vdir.join("train.jsonl"), Format::Jsonl)?;
            export_dataset(&val, &vdir.join("validation.jsonl"), Format::Jsonl)?;
            if let Some(r) = receipt {
                r.write_json(&vdir.join("receipt.json"))?;
            }
        }
        out.push(RepairSummary {
            dataset: ds.name().to_string(),
            receipts: vec![r_flip, r_filter, r_rflip, r_rfilter],
            dir,
        });
    }
    Ok(out)
}
