//! Flag confident disagreements, settle them with (simulated) expert labels,
//! and bound the dataset's error rate with an exact interval corrected for
//! the finite population.
//!
//! ```text
//! cargo run -p labelaudit --example flag_and_estimate -- [tau] [population]
//! ```

use std::collections::HashMap;

use labelaudit::flagging::{error_rate_report, merge_gold};
use labelaudit::providers::{annotate, default_templates, MockBackend};
use labelaudit::simulate::{mock_truth, synthetic_sample};
use labelaudit::{aggregate_all, flag, MemberPool, Provider};

fn main() -> labelaudit::Result<()> {
    let mut args = std::env::args().skip(1);
    let tau: f64 = args.next().map_or(0.5, |s| s.parse().expect("tau"));
    let population: u64 = args.next().map_or(5000, |s| s.parse().expect("population"));

    let (data, _) = synthetic_sample(300, 0.12, 3)?;
    let truth = mock_truth(&data)?;
    let providers = (0..4)
        .map(|i| Ok(Provider::mock(MockBackend::new(format!("m{i}"), 0.15, 4.0, i, truth.clone())?, None)))
        .collect::<labelaudit::Result<Vec<_>>>()?;
    let store = annotate(&providers, &default_templates(), &data, 8)?;
    let pool = MemberPool::from_judgments(store.judgments())?;
    let scores = aggregate_all(&pool, pool.roster())?;

    let report = flag(&scores, &data.label_map(), tau)?;
    let disagreements: Vec<_> = report.disagreements().collect();
    println!(
        "{} examples, {} disagreements, {} flagged at tau {tau}",
        data.len(),
        disagreements.len(),
        report.flagged().len()
    );
    for r in report.flagged().iter().take(5) {
        println!(
            "  {}  given={}  p={:.3}  confidence={:.3}",
            r.example_id,
            r.original_label.as_u8(),
            r.ensemble_p,
            r.disagreement_confidence.unwrap()
        );
    }

    // Experts here simply know the clean label.
    let experts: HashMap<_, _> = disagreements.iter().map(|r| (r.example_id.clone(), truth[&r.example_id])).collect();
    let gold = merge_gold(&report.records, &experts)?;
    let rate = error_rate_report(&gold, &data.label_map(), population.max(data.len() as u64), 0.05)?;
    println!(
        "error rate {:.1}% ({} of {}), 95% interval [{:.1}%, {:.1}%] for a population of {}",
        100.0 * rate.rate,
        rate.errors,
        rate.sample_size,
        100.0 * rate.interval.lower,
        100.0 * rate.interval.upper,
        rate.population_size
    );
    Ok(())
}
