//! Repair a noisy training set by flipping or dropping flagged examples, and
//! build size-matched random controls. Every operation hands back a receipt
//! naming the ids it touched.
//!
//! ```text
//! cargo run -p labelaudit --example repair_training_set -- [out_dir]
//! ```

use std::path::PathBuf;

use labelaudit::transforms::AblationMode;
use labelaudit::{
    export_dataset, filter_flagged, flip_flagged, inject_noise, random_ablation, FlagRecord, FlagReport, Format,
};

fn main() -> labelaudit::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from);

    let clean = labelaudit::simulate::synthetic_corpus("train", 500, 0.5, 11)?;
    let (noisy, mask, noise_receipt) = inject_noise(&clean, 0.2, 11)?;
    println!("injected noise into {} of {} labels", noise_receipt.affected_ids.len(), noisy.len());

    // Stand-in ensemble: confident about the clean label, a little noisy.
    let clean_labels = mask.clean_labels(&noisy);
    let records = noisy
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let sure = if i % 7 == 0 { 0.6 } else { 0.95 };
            let p = if clean_labels[&e.id].is_consistent() { sure } else { 1.0 - sure };
            FlagRecord::new(e.id.clone(), e.original_label, p, 0.9)
        })
        .collect();
    let flags = FlagReport { threshold: 0.9, records };

    let (flipped, flip) = flip_flagged(&noisy, &flags, 0.9)?;
    let (filtered, filter) = filter_flagged(&noisy, &flags, 0.9)?;
    let n = flip.affected_ids.len();
    let (random_flipped, rflip) = random_ablation(&noisy, n, AblationMode::Flip, 5)?;
    let (random_filtered, rfilter) = random_ablation(&noisy, n, AblationMode::Filter, 5)?;

    let still_wrong = |d: &labelaudit::Dataset| d.iter().filter(|e| clean_labels[&e.id] != e.original_label).count();
    println!("noisy:           {} examples, {} wrong", noisy.len(), still_wrong(&noisy));
    for (name, d, r) in [
        ("flip", &flipped, &flip),
        ("filter", &filtered, &filter),
        ("random flip", &random_flipped, &rflip),
        ("random filter", &random_filtered, &rfilter),
    ] {
        assert!(r.reconciles());
        println!(
            "{name:<16} {} examples, {} wrong, {} touched",
            d.len(),
            still_wrong(d),
            r.affected_ids.len()
        );
        if let Some(dir) = &out {
            let sub = dir.join(name.replace(' ', "_"));
            std::fs::create_dir_all(&sub)?;
            export_dataset(d, &sub.join("train.jsonl"), Format::Jsonl)?;
            r.write_json(&sub.join("receipt.json"))?;
        }
    }
    Ok(())
}
