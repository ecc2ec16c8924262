//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::time::Instant;

use labelaudit::evaluate::{format_rank_shift, rank_shift, ScoreFile, ScoreRow};
use labelaudit::flagging::{ExpertResolution, FlagRecord, FlagReport, ReviewItem};
use labelaudit::sampling::{below, rng, SeededRng};
use labelaudit::simulate::{simulate, SimConfig, SimulationReport};
use labelaudit::stats::{
    clopper_pearson, clopper_pearson_fpc, detection_prf, fleiss_kappa, percent_agreement, roc_auc, weighted_f1,
    AnnotationMatrix, Kappa,
};
use labelaudit::transforms::AblationMode;
use labelaudit::{filter_flagged, flip_flagged, inject_noise, random_ablation, Dataset, Example, Label};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use serde_json::{json, Value};

use common::*;

type Outcome = Result<String, String>;

fn check(cond: bool, pass: impl Into<String>, fail: impl Into<String>) -> Outcome {
    if cond {
        Ok(pass.into())
    } else {
        Err(fail.into())
    }
}

// ---------------------------------------------------------------- error-rate bounds

fn error_rate_lower_bounds() -> Outcome {
    let cases = [(27, 160, 2500, 11.6), (34, 160, 836, 15.8), (13, 160, 63504, 4.4), (10, 160, 8000, 3.0)];
    let mut worst: f64 = 0.0;
    let mut cells = Vec::new();
    for (k, n, pop, expected) in cases {
        let lb = 100.0 * clopper_pearson_fpc(k, n, pop, 0.05).map_err(|e| e.to_string())?.lower;
        worst = worst.max((lb - expected).abs());
        cells.push(format!("{lb:.2}"));
    }
    check(
        worst <= 0.2,
        format!("lower bounds {} (max deviation {worst:.3}pp)", cells.join(", ")),
        format!("lower bounds {} deviate by {worst:.3}pp", cells.join(", ")),
    )
}

// ---------------------------------------------------------------- statistics oracles

fn labels_of(bits: &[bool]) -> Vec<Label> {
    bits.iter().map(|&b| Label::from_bool(b)).collect()
}

fn random_bits(r: &mut SeededRng, n: usize) -> Vec<bool> {
    (0..n).map(|_| below(r, 2) == 1).collect()
}

/// Kappa and mean pairwise agreement by enumerating ordered rater pairs.
fn kappa_oracle(items: &[Vec<bool>]) -> (Option<f64>, f64) {
    let r = items[0].len();
    let mut p_bar = 0.0;
    let mut ones = 0usize;
    for row in items {
        let mut agree = 0usize;
        for j in 0..r {
            for k in 0..r {
                if j != k && row[j] == row[k] {
                    agree += 1;
                }
            }
        }
        p_bar += agree as f64 / (r * (r - 1)) as f64;
        ones += row.iter().filter(|&&b| b).count();
    }
    p_bar /= items.len() as f64;
    let total = (items.len() * r) as f64;
    let p1 = ones as f64 / total;
    let p0 = 1.0 - p1;
    let pe = p0 * p0 + p1 * p1;
    let kappa = if ones == 0 || ones == items.len() * r {
        None
    } else {
        Some((p_bar - pe) / (1.0 - pe))
    };
    (kappa, p_bar)
}

fn f1_oracle(truth: &[bool], pred: &[bool]) -> f64 {
    let n = truth.len() as f64;
    let mut total = 0.0;
    for class in [false, true] {
        let support = truth.iter().filter(|&&t| t == class).count();
        if support == 0 {
            continue;
        }
        let predicted = pred.iter().filter(|&&p| p == class).count();
        let tp = truth.iter().zip(pred).filter(|(&t, &p)| t == class && p == class).count();
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let recall = tp as f64 / support as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        total += f1 * support as f64 / n;
    }
    total
}

fn auc_oracle(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &ti) in truth.iter().enumerate() {
        for (j, &tj) in truth.iter().enumerate() {
            if ti && !tj {
                pairs += 1;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

fn prf_oracle(flagged: &[bool], errors: &[bool]) -> (f64, f64, f64) {
    let f = flagged.iter().filter(|&&b| b).count();
    let e = errors.iter().filter(|&&b| b).count();
    let hit = flagged.iter().zip(errors).filter(|(&a, &b)| a && b).count();
    let p = if f == 0 {
        if e == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        hit as f64 / f as f64
    };
    let r = if e == 0 { 1.0 } else { hit as f64 / e as f64 };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn stats_oracles() -> Outcome {
    const CASES: usize = 2000;
    let mut r = rng(20240901);
    let mut counts = [0usize; 5];

    // Kappa and percent agreement: random cases plus every 2-rater matrix
    // with up to 5 items.
    let mut kappa_inputs: Vec<Vec<Vec<bool>>> = Vec::new();
    for _ in 0..CASES {
        let n = 1 + below(&mut r, 8) as usize;
        let raters = 2 + below(&mut r, 4) as usize;
        kappa_inputs.push((0..n).map(|_| random_bits(&mut r, raters)).collect());
    }
    for n in 1..=5usize {
        for mask in 0..(1u32 << (2 * n)) {
            kappa_inputs.push((0..n).map(|i| vec![mask >> (2 * i) & 1 == 1, mask >> (2 * i + 1) & 1 == 1]).collect());
        }
    }
    for items in &kappa_inputs {
        let m = AnnotationMatrix::from_labels(items.iter().map(|row| labels_of(row))).map_err(|e| e.to_string())?;
        let (k_or, pa_or) = kappa_oracle(items);
        let ok = match (fleiss_kappa(&m), k_or) {
            (Kappa::Value(v), Some(o)) => close(v, o),
            (Kappa::Degenerate, None) => true,
            _ => false,
        };
        if !ok {
            return Err(format!("fleiss_kappa disagrees with oracle on {items:?}"));
        }
        if !close(percent_agreement(&m), pa_or) {
            return Err(format!("percent_agreement disagrees with oracle on {items:?}"));
        }
        counts[0] += 1;
        counts[1] += 1;
    }

    // Weighted F1: random cases plus every (truth, prediction) pair up to 5.
    let mut f1_inputs = Vec::new();
    for _ in 0..CASES {
        let n = 1 + below(&mut r, 8) as usize;
        f1_inputs.push((random_bits(&mut r, n), random_bits(&mut r, n)));
    }
    for n in 1..=5usize {
        for mask in 0..(1u32 << (2 * n)) {
            let t = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let p = (0..n).map(|i| mask >> (n + i) & 1 == 1).collect();
            f1_inputs.push((t, p));
        }
    }
    for (t, p) in &f1_inputs {
        let got = weighted_f1(&labels_of(t), &labels_of(p)).map_err(|e| e.to_string())?;
        if !close(got, f1_oracle(t, p)) {
            return Err(format!("weighted_f1 disagrees with oracle on {t:?} {p:?}"));
        }
        counts[2] += 1;
    }

    // ROC AUC on a coarse score grid so ties are common.
    while counts[3] < CASES {
        let n = 2 + below(&mut r, 7) as usize;
        let t = random_bits(&mut r, n);
        let scores: Vec<f64> = (0..n).map(|_| below(&mut r, 5) as f64 / 4.0).collect();
        let Some(want) = auc_oracle(&scores, &t) else { continue };
        let got = roc_auc(&scores, &labels_of(&t)).map_err(|e| e.to_string())?;
        if !close(got, want) {
            return Err(format!("roc_auc disagrees with oracle on {scores:?} {t:?}"));
        }
        counts[3] += 1;
    }

    for _ in 0..CASES {
        let n = 1 + below(&mut r, 8) as usize;
        let flagged = random_bits(&mut r, n);
        let errors = random_bits(&mut r, n);
        let set = |bits: &[bool]| -> HashSet<usize> { (0..n).filter(|&i| bits[i]).collect() };
        let universe: HashSet<usize> = (0..n).collect();
        let got = detection_prf(&set(&flagged), &set(&errors), &universe).map_err(|e| e.to_string())?;
        let (p, rc, f) = prf_oracle(&flagged, &errors);
        if !(close(got.precision, p) && close(got.recall, rc) && close(got.f1, f)) {
            return Err(format!("detection_prf disagrees with oracle on {flagged:?} {errors:?}"));
        }
        counts[4] += 1;
    }
    check(
        counts.iter().all(|&c| c >= 1000),
        format!(
            "kappa {} / agreement {} / f1 {} / auc {} / prf {} cases, all within 1e-9",
            counts[0], counts[1], counts[2], counts[3], counts[4]
        ),
        format!("too few cases: {counts:?}"),
    )
}

// ---------------------------------------------------------------- Clopper-Pearson identities

fn cp_identities() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for n in 1..=500u64 {
        for alpha in [0.001, 0.01, 0.05, 0.1, 0.2, 0.5] {
            let edge = 1.0 - (alpha / 2.0f64).powf(1.0 / n as f64);
            let zero = clopper_pearson(0, n, alpha).map_err(|e| e.to_string())?;
            let full = clopper_pearson(n, n, alpha).map_err(|e| e.to_string())?;
            for d in [zero.lower, zero.upper - edge, full.upper - 1.0, full.lower - (1.0 - edge)] {
                worst = worst.max(d.abs());
            }
            checked += 1;
        }
    }
    check(
        worst <= 1e-8,
        format!("{checked} (n, alpha) pairs, max error {worst:.2e}"),
        format!("max error {worst:.2e} exceeds 1e-8"),
    )
}

// ---------------------------------------------------------------- synthetic trends

fn simulations() -> Vec<Result<SimulationReport, String>> {
    (0..10u64)
        .map(|seed| {
            simulate(&SimConfig {
                seed,
                ..SimConfig::default()
            })
            .map_err(|e| format!("seed {seed}: {e}"))
        })
        .collect()
}

fn bin_trend(sims: &[Result<SimulationReport, String>]) -> Outcome {
    let mut good = 0;
    let mut tops = Vec::new();
    for s in sims {
        let Ok(s) = s else { continue };
        let rates: Vec<f64> = s.bins.iter().map(|b| b.expert_agrees_llm).collect();
        let monotone = rates.windows(2).all(|w| w[0] <= w[1]);
        let top = *rates.last().unwrap_or(&0.0);
        tops.push(top);
        if monotone && top > 2.0 / 3.0 && rates.len() == 4 {
            good += 1;
        }
    }
    let min_top = tops.iter().cloned().fold(f64::INFINITY, f64::min);
    check(
        good >= 9,
        format!("{good}/10 seeds monotone with top bin > 2/3 (lowest top bin {min_top:.3})"),
        format!("only {good}/10 seeds monotone with top bin > 2/3"),
    )
}

fn size_trend(sims: &[Result<SimulationReport, String>]) -> Outcome {
    let mut good = 0;
    let mut worst = 0;
    for s in sims {
        let Ok(s) = s else { continue };
        let sizes: Vec<usize> = s.curve_summary.iter().map(|c| c.size).collect();
        if sizes != [1, 2, 4, 8, 16] || s.curve_summary.iter().any(|c| c.trials != 30) {
            return Err(format!("unexpected curve layout {sizes:?}"));
        }
        let violations = s
            .curve_summary
            .windows(2)
            .filter(|w| w[1].mean_auc < w[0].mean_auc || w[1].std_auc > w[0].std_auc)
            .count();
        worst = worst.max(violations);
        if violations <= 1 {
            good += 1;
        }
    }
    check(
        good >= 9,
        format!("{good}/10 seeds with at most one violating adjacent pair (worst {worst})"),
        format!("only {good}/10 seeds within one violating pair"),
    )
}

/// One-sided sign-test p-value, summed directly from binomial coefficients.
fn sign_p(wins: u64, n: u64) -> f64 {
    let mut choose = 1.0f64;
    let mut total = 0.0;
    for k in 0..=n {
        if k >= wins {
            total += choose;
        }
        choose = choose * (n - k) as f64 / (k + 1) as f64;
    }
    total / 2f64.powi(n as i32)
}

fn repair_trend(sims: &[Result<SimulationReport, String>]) -> Outcome {
    let mut wins = [0u64; 3];
    for s in sims {
        let Ok(s) = s else { continue };
        let Some(r) = &s.repair else { continue };
        if r.tau != 0.95 {
            return Err(format!("repair ran at tau {}", r.tau));
        }
        wins[0] += (r.flip_auc > r.baseline_auc) as u64;
        wins[1] += (r.filter_auc > r.baseline_auc) as u64;
        wins[2] += (r.random_flip_auc < r.flip_auc) as u64;
    }
    let ps: Vec<f64> = wins.iter().map(|&w| sign_p(w, 10)).collect();
    let line = format!(
        "flip>baseline {}/10 (p={:.4}), filter>baseline {}/10 (p={:.4}), random flip<flip {}/10 (p={:.4})",
        wins[0], ps[0], wins[1], ps[1], wins[2], ps[2]
    );
    check(ps.iter().all(|&p| p < 0.05), line.clone(), line)
}

// ---------------------------------------------------------------- rank inversion

fn rank_inversion() -> Outcome {
    let ids: Vec<String> = (0..20).map(|i| format!("e{i:02}")).collect();
    let gold: HashMap<String, Label> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), Label::from_bool(i % 2 == 0)))
        .collect();
    // Six original labels are wrong.
    let original: HashMap<String, Label> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let g = gold[id];
            (id.clone(), if i % 3 == 0 { g.flipped() } else { g })
        })
        .collect();
    let file = |name: &str, f: &dyn Fn(usize, &str) -> f64| {
        ScoreFile::new(
            name,
            ids.iter()
                .enumerate()
                .map(|(i, id)| ScoreRow {
                    example_id: id.clone(),
                    score: f(i, id),
                })
                .collect(),
        )
        .unwrap()
    };
    let by = |labels: &HashMap<String, Label>, hi: f64| {
        let labels = labels.clone();
        move |_: usize, id: &str| if labels[id].is_consistent() { hi } else { 1.0 - hi }
    };
    let tracker = file("tracker", &by(&gold, 0.9));
    let echo = file("echo", &by(&original, 0.8));
    let echo_noisy = {
        let base = by(&original, 0.7);
        file("echo-noisy", &move |i, id| if i == 1 || i == 4 { 1.0 - base(i, id) } else { base(i, id) })
    };
    let rows = rank_shift(&[echo, echo_noisy, tracker], &original, &gold).map_err(|e| e.to_string())?;
    let t = rows.iter().find(|r| r.model == "tracker").unwrap();
    let text = format_rank_shift(&rows);
    let ok = t.rank_gold == 1
        && t.rank_original == 3
        && t.rank_delta == 2
        && t.gold.roc_auc == 1.0
        && text.contains("(+2)")
        && text.contains('%');
    check(
        ok,
        format!(
            "tracker ranks {} on original, {} on gold (auc {:.3} -> {:.3}); table shows deltas and % changes",
            t.rank_original, t.rank_gold, t.original.roc_auc, t.gold.roc_auc
        ),
        format!("no inversion:\n{text}"),
    )
}

// ---------------------------------------------------------------- transforms

#[derive(Debug, Clone)]
struct Case {
    labels: Vec<bool>,
    ps: Vec<f64>,
    tau: f64,
    count: usize,
    rate: f64,
    seed: u64,
}

fn case_strategy() -> impl Strategy<Value = Case> {
    (1usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(prop_oneof![0.0f64..=1.0, Just(0.5), Just(0.95), Just(0.05)], n),
            prop_oneof![0.5f64..=1.0, Just(0.5), Just(0.95), Just(1.0)],
            0..=n,
            prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0],
            any::<u64>(),
        )
            .prop_map(|(labels, ps, tau, count, rate, seed)| Case {
                labels,
                ps,
                tau,
                count,
                rate,
                seed,
            })
    })
}

fn dataset(labels: &[bool]) -> Dataset {
    let examples = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| Example::new(format!("x{i}"), "prop", "g", "t", Label::from_bool(l)))
        .collect();
    Dataset::new("prop", examples, None).unwrap()
}

fn ids(d: &Dataset) -> BTreeSet<String> {
    d.iter().map(|e| e.id.clone()).collect()
}

fn changed(a: &Dataset, b: &Dataset) -> BTreeSet<String> {
    a.iter()
        .zip(b.iter())
        .filter(|(x, y)| x.original_label != y.original_label)
        .map(|(x, _)| x.id.clone())
        .collect()
}

fn transform_case(c: &Case) -> Result<(), TestCaseError> {
    let d = dataset(&c.labels);
    let report = FlagReport {
        threshold: c.tau,
        records: d
            .iter()
            .zip(&c.ps)
            .map(|(e, &p)| FlagRecord::new(e.id.clone(), e.original_label, p, c.tau))
            .collect(),
    };
    let err = |e: labelaudit::Error| TestCaseError::fail(e.to_string());

    let (flipped, rf) = flip_flagged(&d, &report, c.tau).map_err(err)?;
    prop_assert_eq!(flipped.len(), d.len());
    prop_assert!(rf.reconciles());
    prop_assert_eq!((rf.before_size, rf.after_size), (d.len(), d.len()));
    let rf_ids: BTreeSet<String> = rf.affected_ids.iter().cloned().collect();
    prop_assert_eq!(rf_ids.len(), rf.affected_ids.len());
    prop_assert_eq!(&changed(&d, &flipped), &rf_ids);

    let (twice, rf2) = flip_flagged(&flipped, &report, c.tau).map_err(err)?;
    prop_assert_eq!(&twice, &flipped);
    prop_assert!(rf2.affected_ids.is_empty());

    let (filtered, rfi) = filter_flagged(&d, &report, c.tau).map_err(err)?;
    prop_assert!(rfi.reconciles());
    prop_assert_eq!(rfi.after_size, filtered.len());
    let removed: BTreeSet<String> = rfi.affected_ids.iter().cloned().collect();
    prop_assert!(ids(&filtered).is_disjoint(&removed));
    prop_assert_eq!(ids(&filtered).len() + removed.len(), d.len());
    prop_assert_eq!(&removed, &rf_ids);
    let (after, r_after) = flip_flagged(&filtered, &report, c.tau).map_err(err)?;
    prop_assert!(r_after.affected_ids.is_empty());
    prop_assert_eq!(&after, &filtered);

    for mode in [AblationMode::Flip, AblationMode::Filter] {
        let (out, r) = random_ablation(&d, c.count, mode, c.seed).map_err(err)?;
        prop_assert!(r.reconciles());
        prop_assert_eq!(r.affected_ids.len(), c.count);
        prop_assert_eq!(r.after_size, out.len());
        let aff: BTreeSet<String> = r.affected_ids.iter().cloned().collect();
        match mode {
            AblationMode::Flip => prop_assert_eq!(&changed(&d, &out), &aff),
            AblationMode::Filter => prop_assert!(ids(&out).is_disjoint(&aff)),
        }
    }

    let frac = c.rate * d.len() as f64;
    if frac == 0.0 || frac >= 1.0 {
        let (noisy, mask, r) = inject_noise(&d, c.rate, c.seed).map_err(err)?;
        prop_assert!(r.reconciles());
        let corrupted: BTreeSet<String> = mask.corrupted_ids().into_iter().map(|s| s.to_string()).collect();
        prop_assert_eq!(&changed(&d, &noisy), &corrupted);
        prop_assert_eq!(r.affected_ids.len(), mask.count());
    }
    Ok(())
}

fn transform_invariants() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 500,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&case_strategy(), |c| transform_case(&c))
        .map(|_| "500 randomized cases: flip size-preserving and idempotent, filter then flip a no-op, receipts reconcile".into())
        .map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- review service

struct Scripted<'a> {
    api: &'a Api,
    leaks: Vec<String>,
    responses: usize,
}

impl Scripted<'_> {
    fn observe(&mut self, v: &Value) {
        self.responses += 1;
        for k in leaks(v) {
            self.leaks.push(format!("{k} in {v}"));
        }
    }

    fn next(&mut self, token: &str) -> Result<Option<(String, usize)>, String> {
        let (s, v) = self.api.call("GET", "/v1/sessions/sample/next", token, None);
        self.observe(&v);
        if s != 200 {
            return Err(format!("next returned {s}: {v}"));
        }
        if v["status"] == "done" {
            return Ok(None);
        }
        let got: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let allowed: BTreeSet<&str> = TASK_KEYS.iter().copied().collect();
        if got != allowed {
            self.leaks.push(format!("task keys {got:?}"));
        }
        Ok(Some((v["example_id"].as_str().unwrap().to_string(), v["position"].as_u64().unwrap() as usize)))
    }

    fn submit(&mut self, token: &str, example_id: &str, label: Label) -> Result<u64, String> {
        let body = json!({"schema_version": 1, "example_id": example_id, "label": label.as_u8()});
        let (s, v) = self.api.call("POST", "/v1/sessions/sample/annotations", token, Some(body));
        self.observe(&v);
        if s != 200 {
            return Err(format!("submit returned {s}: {v}"));
        }
        Ok(v["revision"].as_u64().unwrap())
    }
}

fn review_contract() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path();
    cli_ok(out, &["--mock", "annotate"]);
    cli_ok(out, &["flag-report"]);
    let intake: Vec<ReviewItem> =
        labelaudit::report::read_jsonl(&out.join("sample/review_intake.jsonl")).map_err(|e| e.to_string())?;
    let truth = sample_truth();
    let n = intake.len();
    let experts = [("expert-a", TOKEN_A), ("expert-b", TOKEN_B)];

    // Independent phase, first half, then SIGKILL.
    let server = ServerProc::start(out);
    let api = Api::new(&server.base);
    let mut s = Scripted {
        api: &api,
        leaks: Vec::new(),
        responses: 0,
    };
    let (code, status) = api.call("GET", "/v1/sessions/sample", ADMIN, None);
    s.observe(&status);
    if code != 200 || status["tasks"] != n {
        return Err(format!("session not created from intake: {status}"));
    }
    let mut acked: HashMap<&str, Vec<String>> = HashMap::new();
    for (who, token) in experts {
        for _ in 0..n / 2 {
            let (id, _) = s.next(token)?.ok_or("queue ended early")?;
            s.submit(token, &id, expert_label(&truth, who, &id))?;
            acked.entry(who).or_default().push(id);
        }
    }
    let revised = acked["expert-a"][0].clone();
    let rev = s.submit(TOKEN_A, &revised, expert_label(&truth, "expert-a", &revised))?;
    server.kill();

    // Restart: nothing acknowledged may be lost.
    let server = ServerProc::start(out);
    let api = Api::new(&server.base);
    s.api = &api;
    let (_, status) = api.call("GET", "/v1/sessions/sample", ADMIN, None);
    s.observe(&status);
    for (who, _) in experts {
        if status["completed"][who] != acked[who].len() {
            return Err(format!("restart lost annotations for {who}: {status}"));
        }
    }
    let rev_after = s.submit(TOKEN_A, &revised, expert_label(&truth, "expert-a", &revised))?;
    if (rev, rev_after) != (2, 3) {
        return Err(format!("revisions {rev} then {rev_after} across restart, expected 2 then 3"));
    }
    for (who, token) in experts {
        while let Some((id, pos)) = s.next(token)? {
            if acked[who].contains(&id) || pos != acked[who].len() + 1 {
                return Err(format!("{who} was re-served {id} at position {pos}"));
            }
            s.submit(token, &id, expert_label(&truth, who, &id))?;
            acked.get_mut(who).unwrap().push(id);
        }
    }
    let independent_responses = s.responses;
    let leak_report = s.leaks.clone();

    // Reconciliation and close.
    let (code, list) = api.call("POST", "/v1/sessions/sample/reconciliation", TOKEN_B, None);
    if code != 200 {
        return Err(format!("open reconciliation returned {code}: {list}"));
    }
    let disagreements = list.as_array().unwrap().len();
    for item in list.as_array().unwrap() {
        let id = item["example_id"].as_str().unwrap();
        let body = json!({"schema_version": 1, "example_id": id, "final_label": truth[id].as_u8(), "note": "reconciled"});
        let (code, v) = api.call("POST", "/v1/sessions/sample/resolutions", TOKEN_A, Some(body));
        if code != 200 {
            return Err(format!("resolution returned {code}: {v}"));
        }
    }
    let (code, export) = api.call("POST", "/v1/sessions/sample/close", ADMIN, None);
    if code != 200 {
        return Err(format!("close returned {code}: {export}"));
    }
    server.kill();

    // Export completeness, from the file the flagging stage reads.
    let rows: Vec<ExpertResolution> =
        labelaudit::report::read_jsonl(&out.join("review/exports/sample.jsonl")).map_err(|e| e.to_string())?;
    let exported: BTreeSet<&str> = rows.iter().map(|r| r.example_id.as_str()).collect();
    let flagged: BTreeSet<&str> = intake.iter().map(|r| r.example_id.as_str()).collect();
    if rows.len() != n || exported != flagged {
        return Err(format!("export has {} rows for {} flagged ids", rows.len(), n));
    }

    // Kappa recomputed from the exported independent labels.
    let matrix = AnnotationMatrix::from_labels(rows.iter().map(|r| r.independent_labels.values().copied().collect::<Vec<_>>()))
        .map_err(|e| e.to_string())?;
    let recomputed = fleiss_kappa(&matrix);
    let served: Kappa = serde_json::from_value(export["summary"]["pre_reconciliation_kappa"].clone())
        .map_err(|e| e.to_string())?;
    if recomputed != served {
        return Err(format!("exported kappa {served} differs from recomputed {recomputed}"));
    }

    // The export feeds the next flag-report.
    cli_ok(out, &["flag-report"]);
    if !out.join("sample/gold.jsonl").exists() {
        return Err("flag-report did not merge the export into gold labels".into());
    }
    check(
        leak_report.is_empty(),
        format!(
            "{independent_responses} independent-phase responses blinded; kill -9 and restart kept all {} acks; export {n}/{n} ids ({disagreements} reconciled); kappa {served} matches",
            acked.values().map(Vec::len).sum::<usize>()
        ),
        format!("blinding violated: {}", leak_report.join("; ")),
    )
}

// ---------------------------------------------------------------- driver

fn main() {
    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut run = |name: &'static str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())))));
        let secs = t.elapsed().as_secs_f64();
        let (tag, msg) = match &outcome {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        println!("{tag} {name} [{secs:.1}s]: {msg}");
        results.push((name, outcome, secs));
    };

    run("error-rate-lower-bounds", &error_rate_lower_bounds);
    run("statistics-oracles", &stats_oracles);
    run("clopper-pearson-identities", &cp_identities);
    let t = Instant::now();
    let sims = simulations();
    println!("     (10 synthetic runs took {:.1}s)", t.elapsed().as_secs_f64());
    run("bin-agreement-trend", &|| bin_trend(&sims));
    run("ensemble-size-trend", &|| size_trend(&sims));
    run("repair-trend", &|| repair_trend(&sims));
    run("rank-inversion", &rank_inversion);
    run("transform-invariants", &transform_invariants);
    run("review-contract", &review_contract);

    let failed = results.iter().filter(|r| r.1.is_err()).count();
    println!("\n{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
