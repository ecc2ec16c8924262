//! End-to-end synthetic experiments with known ground truth.
//!
//! A clean corpus gets a known fraction of labels flipped. A roster of mock
//! judges (models x prompts) scores the noisy corpus against the clean
//! labels, and the injected noise mask stands in for expert review. From one
//! prepared [`World`] the module produces:
//!
//! * the confidence-bin agreement curve,
//! * the ensemble-size ablation,
//! * a repair comparison: a k-nearest-neighbour classifier on a 2-D feature
//!   trained on baseline, flipped, filtered and size-matched random variants
//!   of the noisy training set, scored by held-out ROC AUC.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Example, Label};
use crate::ensemble::{aggregate_all, ensemble_size_curve, CurveConfig, CurvePoint, CurveSummary, MemberPool};
use crate::error::{Error, Result};
use crate::flagging::{assign_bins, bin_agreement_curve, flag, BinAgreement, BinSpec, FlagReport};
use crate::providers::mock::{MockBackend, DEFAULT_SHARPNESS};
use crate::providers::runner::DEFAULT_MAX_IN_FLIGHT;
use crate::providers::{annotate, default_templates, Provider};
use crate::report;
use crate::sampling;
use crate::seed_of;
use crate::stats::{detection_prf, roc_auc};
use crate::transforms::{filter_flagged, flip_flagged, inject_noise, random_ablation, AblationMode, NoiseMask, TransformReceipt};

/// Metadata key holding the clean label of a synthetic example. Mock judges
/// use it as their ground truth when present.
pub const TRUTH_KEY: &str = "mock_truth";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub examples: usize,
    pub test_examples: usize,
    pub positive_rate: f64,
    /// Share of training labels flipped before judging.
    pub label_noise: f64,
    /// Mean per-judge error probability of the mock roster.
    pub judge_noise: f64,
    pub sharpness: f64,
    pub models: usize,
    /// Taken from the default templates, so at most 4.
    pub prompts: usize,
    pub tau: f64,
    pub tau_grid: Vec<f64>,
    pub bins: BinSpec,
    pub resamples: usize,
    pub alpha: f64,
    pub sizes: Vec<usize>,
    pub trials: usize,
    /// Class means sit at `+-feature_shift` on both feature axes.
    pub feature_shift: f64,
    pub knn_k: usize,
    pub repair: bool,
    pub max_in_flight: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            examples: 2000,
            test_examples: 1000,
            positive_rate: 0.5,
            label_noise: 0.15,
            judge_noise: 0.15,
            sharpness: DEFAULT_SHARPNESS,
            models: 4,
            prompts: 4,
            tau: 0.95,
            tau_grid: vec![0.5, 0.75, 0.9, 0.95, 0.99],
            bins: BinSpec::default(),
            resamples: 100,
            alpha: 0.05,
            sizes: vec![1, 2, 4, 8, 16],
            trials: 30,
            feature_shift: 0.8,
            knn_k: 5,
            repair: true,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.examples == 0 || self.test_examples == 0 {
            return Err(Error::invalid("simulation needs at least one train and one test example"));
        }
        if !(0.0..=1.0).contains(&self.positive_rate) {
            return Err(Error::invalid("positive_rate outside [0, 1]"));
        }
        if self.models == 0 || self.prompts == 0 || self.prompts > default_templates().len() {
            return Err(Error::invalid(format!(
                "roster needs 1+ models and 1..={} prompts",
                default_templates().len()
            )));
        }
        if self.knn_k == 0 {
            return Err(Error::invalid("knn_k must be positive"));
        }
        self.bins.validate()?;
        if self.repair && self.label_noise == 0.0 {
            return Err(Error::DegenerateConfig(
                "label_noise is 0, so there is nothing for the repair comparison to fix".into(),
            ));
        }
        Ok(())
    }
}

fn synthetic_example(prefix: &str, i: usize, label: Label) -> Example {
    Example::new(
        format!("{prefix}-{i:05}"),
        "synthetic",
        format!("Synthetic source passage number {i}."),
        format!("Synthetic claim number {i} about that passage."),
        label,
    )
}

/// `n` examples with labels drawn at `positive_rate`.
pub fn synthetic_corpus(prefix: &str, n: usize, positive_rate: f64, seed: u64) -> Result<Dataset> {
    let mut rng = sampling::rng(seed_of!(seed, "corpus", prefix));
    let examples = (0..n)
        .map(|i| synthetic_example(prefix, i, Label::from_bool(sampling::unit(&mut rng) < positive_rate)))
        .collect();
    Dataset::new("synthetic", examples, None)
}

/// Noisy corpus whose examples carry their clean label under [`TRUTH_KEY`].
pub fn synthetic_sample(n: usize, label_noise: f64, seed: u64) -> Result<(Dataset, NoiseMask)> {
    let clean = synthetic_corpus("sample", n, 0.5, seed)?;
    let (noisy, mask, _) = inject_noise(&clean, label_noise, seed_of!(seed, "noise"))?;
    let truth = clean.label_map();
    let examples = noisy
        .into_examples()
        .into_iter()
        .map(|mut e| {
            let mut m = BTreeMap::new();
            m.insert(TRUTH_KEY.to_string(), truth[&e.id].as_u8().to_string());
            e.metadata = Some(m);
            e
        })
        .collect();
    Ok((clean.derive(examples)?, mask))
}

/// Ground truth for mock judges: [`TRUTH_KEY`] metadata when present,
/// otherwise the example's own label.
pub fn mock_truth(d: &Dataset) -> Result<HashMap<String, Label>> {
    d.iter()
        .map(|e| {
            let label = match e.metadata.as_ref().and_then(|m| m.get(TRUTH_KEY)) {
                Some(v) => match v.trim() {
                    "0" => Label::Inconsistent,
                    "1" => Label::Consistent,
                    other => {
                        return Err(Error::invalid(format!("{}: {TRUTH_KEY} = {other:?} is not 0 or 1", e.id)))
                    }
                },
                None => e.original_label,
            };
            Ok((e.id.clone(), label))
        })
        .collect()
}

/// 2-D feature per example: standard normal noise around `+-shift` by class.
pub fn synthetic_features(d: &Dataset, truth: &HashMap<String, Label>, shift: f64, seed: u64) -> HashMap<String, [f64; 2]> {
    d.iter()
        .map(|e| {
            let mut rng = sampling::rng(seed_of!(seed, "features", e.id.as_str()));
            let sign = if truth[&e.id].is_consistent() { 1.0 } else { -1.0 };
            let x: f64 = rng.sample(StandardNormal);
            let y: f64 = rng.sample(StandardNormal);
            (e.id.clone(), [x + sign * shift, y + sign * shift])
        })
        .collect()
}

/// Brute-force k-nearest-neighbour scorer. Distance ties go to the earlier
/// training point.
#[derive(Debug, Clone)]
pub struct KnnClassifier {
    k: usize,
    points: Vec<[f64; 2]>,
    positive: Vec<bool>,
}

impl KnnClassifier {
    pub fn fit(points: Vec<[f64; 2]>, labels: &[Label], k: usize) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: points.len(),
                right: labels.len(),
            });
        }
        if k == 0 || k > points.len() {
            return Err(Error::invalid(format!("k = {k} with {} training points", points.len())));
        }
        Ok(KnnClassifier {
            k,
            points,
            positive: labels.iter().map(|l| l.is_consistent()).collect(),
        })
    }

    /// Share of the `k` nearest training points labelled 1.
    pub fn score(&self, x: [f64; 2]) -> f64 {
        let mut d: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        d.select_nth_unstable_by(self.k - 1, cmp);
        d[..self.k].iter().filter(|(_, i)| self.positive[*i]).count() as f64 / self.k as f64
    }
}

fn held_out_auc(
    train: &Dataset,
    train_features: &HashMap<String, [f64; 2]>,
    test: &Dataset,
    test_features: &HashMap<String, [f64; 2]>,
    k: usize,
) -> Result<f64> {
    let points = train.iter().map(|e| train_features[&e.id]).collect();
    let knn = KnnClassifier::fit(points, &train.labels(), k)?;
    let scores: Vec<f64> = test.iter().map(|e| knn.score(test_features[&e.id])).collect();
    roc_auc(&scores, &test.labels())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairComparison {
    pub tau: f64,
    pub flagged: usize,
    pub baseline_auc: f64,
    pub flip_auc: f64,
    pub filter_auc: f64,
    pub random_flip_auc: f64,
    pub random_filter_auc: f64,
}

/// Held-out AUC of the classifier trained on `train` as is, with flagged
/// labels flipped, with flagged examples removed, and with the same number
/// of random examples flipped or removed.
#[allow(clippy::too_many_arguments)]
pub fn repair_comparison(
    train: &Dataset,
    train_features: &HashMap<String, [f64; 2]>,
    flags: &FlagReport,
    test: &Dataset,
    test_features: &HashMap<String, [f64; 2]>,
    tau: f64,
    k: usize,
    seed: u64,
) -> Result<(RepairComparison, Vec<TransformReceipt>)> {
    let (flipped, r_flip) = flip_flagged(train, flags, tau)?;
    let (filtered, r_filter) = filter_flagged(train, flags, tau)?;
    let count = r_flip.affected_ids.len();
    let (rand_flipped, r_rflip) = random_ablation(train, count, AblationMode::Flip, seed_of!(seed, "random-flip"))?;
    let (rand_filtered, r_rfilter) =
        random_ablation(train, count, AblationMode::Filter, seed_of!(seed, "random-filter"))?;
    let auc = |d: &Dataset| held_out_auc(d, train_features, test, test_features, k);
    let cmp = RepairComparison {
        tau,
        flagged: count,
        baseline_auc: auc(train)?,
        flip_auc: auc(&flipped)?,
        filter_auc: auc(&filtered)?,
        random_flip_auc: auc(&rand_flipped)?,
        random_filter_auc: auc(&rand_filtered)?,
    };
    Ok((cmp, vec![r_flip, r_filter, r_rflip, r_rfilter]))
}

/// Everything derived from the corpus and the judges, before any analysis.
pub struct World {
    pub clean: Dataset,
    pub noisy: Dataset,
    pub mask: NoiseMask,
    pub noise_receipt: TransformReceipt,
    pub truth: HashMap<String, Label>,
    pub pool: MemberPool,
    /// Full-roster flags at threshold 0.5, so every disagreement is flagged.
    pub flags: FlagReport,
}

pub fn prepare(cfg: &SimConfig) -> Result<World> {
    let clean = synthetic_corpus("train", cfg.examples, cfg.positive_rate, cfg.seed)?;
    let (noisy, mask, noise_receipt) = inject_noise(&clean, cfg.label_noise, seed_of!(cfg.seed, "noise"))?;
    let truth = clean.label_map();
    let judge_seed = seed_of!(cfg.seed, "judges");
    let providers = (0..cfg.models)
        .map(|m| {
            MockBackend::new(format!("mock-{m}"), cfg.judge_noise, cfg.sharpness, judge_seed, truth.clone())
                .map(|b| Provider::mock(b, None))
        })
        .collect::<Result<Vec<_>>>()?;
    let templates: Vec<_> = default_templates().into_iter().take(cfg.prompts).collect();
    let store = annotate(&providers, &templates, &noisy, cfg.max_in_flight)?;
    if let Some(f) = store.failures().next() {
        return Err(Error::Provider {
            model_id: f.model_id.clone(),
            message: f.error.clone(),
        });
    }
    let pool = MemberPool::from_judgments(store.judgments())?;
    let scores = aggregate_all(&pool, pool.roster())?;
    let flags = flag(&scores, &noisy.label_map(), 0.5)?;
    Ok(World {
        clean,
        noisy,
        mask,
        noise_receipt,
        truth,
        pool,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub tau: f64,
    pub flagged: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Flags at each threshold scored against the injected noise mask.
pub fn detection_table(world: &World, taus: &[f64]) -> Result<Vec<DetectionRow>> {
    let universe: HashSet<&str> = world.noisy.ids().collect();
    let truth = world.mask.corrupted_ids();
    let truth: HashSet<&str> = truth.into_iter().collect();
    taus.iter()
        .map(|&tau| {
            let at = world.flags.with_threshold(tau)?;
            let flagged = at.flagged_ids();
            let d = detection_prf(&flagged, &truth, &universe)?;
            Ok(DetectionRow {
                tau,
                flagged: flagged.len(),
                precision: d.precision,
                recall: d.recall,
                f1: d.f1,
            })
        })
        .collect()
}

/// Bin agreement curve over every disagreement, with the clean label as
/// the expert.
pub fn bin_curve(world: &World, cfg: &SimConfig) -> Result<Vec<BinAgreement>> {
    let disagreements: Vec<_> = world.flags.disagreements().collect();
    let binned = assign_bins(&disagreements, &cfg.bins)?;
    bin_agreement_curve(&binned, &world.truth, &cfg.bins, cfg.resamples, cfg.alpha, seed_of!(cfg.seed, "bins"))
}

pub fn size_curve(world: &World, cfg: &SimConfig) -> Result<(Vec<CurvePoint>, Vec<CurveSummary>)> {
    let curve = CurveConfig {
        sizes: cfg.sizes.clone(),
        trials_per_size: cfg.trials,
        seed: seed_of!(cfg.seed, "curve"),
        flag_threshold: cfg.tau,
    };
    ensemble_size_curve(&world.pool, &world.truth, &world.noisy.label_map(), &curve)
}

pub fn repair(world: &World, cfg: &SimConfig) -> Result<(RepairComparison, Vec<TransformReceipt>)> {
    let train_features = synthetic_features(&world.noisy, &world.truth, cfg.feature_shift, cfg.seed);
    let test = synthetic_corpus("test", cfg.test_examples, cfg.positive_rate, cfg.seed)?;
    let test_truth = test.label_map();
    let test_features = synthetic_features(&test, &test_truth, cfg.feature_shift, cfg.seed);
    repair_comparison(
        &world.noisy,
        &train_features,
        &world.flags,
        &test,
        &test_features,
        cfg.tau,
        cfg.knn_k,
        seed_of!(cfg.seed, "repair"),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: SimConfig,
    pub injected: usize,
    pub disagreements: usize,
    pub detection: Vec<DetectionRow>,
    pub bins: Vec<BinAgreement>,
    pub curve: Vec<CurvePoint>,
    pub curve_summary: Vec<CurveSummary>,
    pub repair: Option<RepairComparison>,
    pub receipts: Vec<TransformReceipt>,
}

pub fn simulate(cfg: &SimConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let world = prepare(cfg)?;
    let detection = detection_table(&world, &cfg.tau_grid)?;
    let bins = bin_curve(&world, cfg)?;
    let (curve, curve_summary) = size_curve(&world, cfg)?;
    let mut receipts = vec![world.noise_receipt.clone()];
    let repair = if cfg.repair {
        let (cmp, r) = repair(&world, cfg)?;
        receipts.extend(r);
        Some(cmp)
    } else {
        None
    };
    Ok(SimulationReport {
        config: cfg.clone(),
        injected: world.mask.count(),
        disagreements: world.flags.disagreements().count(),
        detection,
        bins,
        curve,
        curve_summary,
        repair,
        receipts,
    })
}

#[derive(Serialize)]
struct BinRow {
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

/// `report.json` plus one CSV per table and one JSON per receipt.
pub fn write_bundle(r: &SimulationReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("receipts"))?;
    report::write_json(r, &dir.join("report.json"))?;
    report::write_csv(&r.detection, &dir.join("detection.csv"))?;
    let bins: Vec<BinRow> = r
        .bins
        .iter()
        .map(|b| BinRow {
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
        })
        .collect();
    report::write_csv(&bins, &dir.join("bins.csv"))?;
    report::write_csv(&r.curve, &dir.join("ensemble_size.csv"))?;
    report::write_csv(&r.curve_summary, &dir.join("ensemble_size_summary.csv"))?;
    if let Some(c) = &r.repair {
        report::write_csv(std::slice::from_ref(c), &dir.join("repair.csv"))?;
    }
    for (i, rec) in r.receipts.iter().enumerate() {
        let name = serde_json::to_value(rec.mode)?;
        let name = name.as_str().unwrap_or("receipt");
        rec.write_json(&dir.join("receipts").join(format!("{i:02}-{name}.json")))?;
    }
    Ok(())
}

/// Human-readable summary of a simulation.
pub fn format_report(r: &SimulationReport) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} train examples, {} labels corrupted, {} disagreements",
        r.config.examples, r.injected, r.disagreements
    );
    let _ = writeln!(s, "\ndetection against the noise mask");
    for d in &r.detection {
        let _ = writeln!(
            s,
            "  tau {:.2}: {:4} flagged  precision {:.3}  recall {:.3}  f1 {:.3}",
            d.tau, d.flagged, d.precision, d.recall, d.f1
        );
    }
    let _ = writeln!(s, "\nexpert agreement by confidence bin");
    for b in &r.bins {
        let _ = writeln!(
            s,
            "  [{:.2}, {:.2}] n={:4}  with ensemble {:.3} ({:.3}-{:.3})  with original {:.3}",
            b.lower_edge, b.upper_edge, b.count, b.expert_agrees_llm, b.llm_ci.lower, b.llm_ci.upper, b.expert_agrees_original
        );
    }
    let _ = writeln!(s, "\nensemble size");
    for c in &r.curve_summary {
        let _ = writeln!(
            s,
            "  {:2} members: auc {:.4} +- {:.4}  f1 {:.4} +- {:.4}",
            c.size, c.mean_auc, c.std_auc, c.mean_f1, c.std_f1
        );
    }
    if let Some(c) = &r.repair {
        let _ = writeln!(s, "\nheld-out auc at tau {:.2} ({} flagged)", c.tau, c.flagged);
        let _ = writeln!(s, "  baseline      {:.4}", c.baseline_auc);
        let _ = writeln!(s, "  flip          {:.4}", c.flip_auc);
        let _ = writeln!(s, "  filter        {:.4}", c.filter_auc);
        let _ = writeln!(s, "  random flip   {:.4}", c.random_flip_auc);
        let _ = writeln!(s, "  random filter {:.4}", c.random_filter_auc);
    }
    s
}
