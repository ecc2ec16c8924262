//! Judge a synthetic dataset with a roster of mock judges and average their
//! answers into one ensemble score per example.
//!
//! ```text
//! cargo run -p labelaudit --example judge_ensemble -- [models] [noise]
//! ```

use labelaudit::providers::{annotate, default_templates, MockBackend};
use labelaudit::simulate::{mock_truth, synthetic_sample};
use labelaudit::stats::accuracy;
use labelaudit::{aggregate_all, MemberPool, Provider};

fn main() -> labelaudit::Result<()> {
    let mut args = std::env::args().skip(1);
    let models: usize = args.next().map_or(4, |s| s.parse().expect("models"));
    let noise: f64 = args.next().map_or(0.2, |s| s.parse().expect("noise"));

    let (data, mask) = synthetic_sample(200, 0.1, 7)?;
    let truth = mock_truth(&data)?;
    let providers = (0..models)
        .map(|i| {
            let backend = MockBackend::new(format!("mock-{i}"), noise, 4.0, i as u64, truth.clone())?;
            Ok(Provider::mock(backend, None))
        })
        .collect::<labelaudit::Result<Vec<_>>>()?;
    let templates = default_templates();

    let store = annotate(&providers, &templates, &data, 8)?;
    println!(
        "{} judgments from {} models x {} prompts, {} failures",
        store.judgments().count(),
        models,
        templates.len(),
        store.failures().count()
    );

    let pool = MemberPool::from_judgments(store.judgments())?;
    let scores = aggregate_all(&pool, pool.roster())?;
    let clean: Vec<_> = scores.iter().map(|s| truth[&s.example_id]).collect();
    let given: Vec<_> = scores.iter().map(|s| data.get(&s.example_id).unwrap().original_label).collect();
    let predicted: Vec<_> = scores.iter().map(|s| s.predicted_label).collect();
    println!("ensemble accuracy vs clean labels: {:.3}", accuracy(&clean, &predicted)?);
    println!("ensemble accuracy vs given labels: {:.3}", accuracy(&given, &predicted)?);
    println!("given labels corrupted: {}", mask.count());

    for s in scores.iter().take(5) {
        println!("  {}  p={:.3}  predicted={}", s.example_id, s.p, s.predicted_label.as_u8());
    }
    Ok(())
}
