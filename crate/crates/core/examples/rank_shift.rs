//! Rank models by their scores against the original labels and against
//! corrected labels, and report how the ranking moves.
//!
//! ```text
//! cargo run -p labelaudit --example rank_shift
//! ```

use std::collections::HashMap;

use labelaudit::evaluate::{format_rank_shift, rank_shift, ScoreFile, ScoreRow};
use labelaudit::simulate::{mock_truth, synthetic_sample};
use labelaudit::Label;

fn main() -> labelaudit::Result<()> {
    let (data, mask) = synthetic_sample(300, 0.15, 21)?;
    let original = data.label_map();
    let gold: HashMap<String, Label> = mock_truth(&data)?;
    println!("{} of {} original labels are wrong", mask.count(), data.len());

    let model = |name: &str, f: &dyn Fn(&str, usize) -> f64| {
        let rows = data
            .iter()
            .enumerate()
            .map(|(i, e)| ScoreRow {
                example_id: e.id.clone(),
                score: f(&e.id, i),
            })
            .collect();
        ScoreFile::new(name, rows)
    };
    let jitter = |i: usize| ((i * 37) % 100) as f64 / 400.0;
    // Learned the noise along with the signal.
    let memorizer = model("memorizer", &|id, i| {
        if original[id].is_consistent() { 0.75 + jitter(i) } else { 0.25 - jitter(i) }
    })?;
    // Tracks the clean labels, but less sharply.
    let tracker = model("tracker", &|id, i| {
        if gold[id].is_consistent() { 0.6 + jitter(i) } else { 0.4 - jitter(i) }
    })?;
    let coin = model("coin", &|_, i| ((i * 7919) % 1000) as f64 / 1000.0)?;

    let rows = rank_shift(&[memorizer, tracker, coin], &original, &gold)?;
    print!("{}", format_rank_shift(&rows));
    Ok(())
}
