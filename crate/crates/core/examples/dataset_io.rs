//! Load a dataset from JSONL or CSV, write it back in the other format, and
//! make a seeded train/test split.
//!
//! ```text
//! cargo run -p labelaudit --example dataset_io -- [input] [out_dir]
//! ```

use std::path::PathBuf;

use labelaudit::dataset::split_dataset;
use labelaudit::{export_dataset, load_dataset, Format};

fn main() -> labelaudit::Result<()> {
    let mut args = std::env::args().skip(1);
    let input = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sample.jsonl"));
    let out = args.next().map(PathBuf::from).unwrap_or_else(std::env::temp_dir);

    let data = load_dataset(&input, Format::from_path(&input))?;
    let positives = data.labels().iter().filter(|l| l.is_consistent()).count();
    println!("{}: {} examples, {} labelled consistent", data.name(), data.len(), positives);

    let other = match Format::from_path(&input) {
        Format::Csv => out.join(format!("{}.jsonl", data.name())),
        _ => out.join(format!("{}.csv", data.name())),
    };
    export_dataset(&data, &other, Format::from_path(&other))?;
    let back = load_dataset(&other, Format::from_path(&other))?;
    assert_eq!(back.examples(), data.examples());
    println!("round-tripped through {}", other.display());

    let (train, test) = split_dataset(&data, data.len() / 5, 0)?;
    println!("split: {} train, {} test", train.len(), test.len());
    Ok(())
}
