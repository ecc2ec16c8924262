//! Write a synthetic dataset with injected label noise. Each example keeps
//! its clean label under the `mock_truth` metadata key, which mock judges
//! read as ground truth.
//!
//! ```text
//! cargo run -p labelaudit --example synthetic_data -- <out.jsonl|out.csv> [n] [noise] [seed]
//! ```

use std::path::PathBuf;

use labelaudit::simulate::synthetic_sample;
use labelaudit::{export_dataset, load_dataset, Format};

fn main() -> labelaudit::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().expect("usage: synthetic_data <out> [n] [noise] [seed]"));
    let n: usize = args.next().map_or(400, |s| s.parse().expect("n"));
    let noise: f64 = args.next().map_or(0.15, |s| s.parse().expect("noise"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let (data, mask) = synthetic_sample(n, noise, seed)?;
    let format = Format::from_path(&out);
    export_dataset(&data, &out, format)?;

    let back = load_dataset(&out, format)?;
    assert_eq!(back.len(), data.len());
    println!(
        "wrote {} examples to {} ({} labels corrupted, {:.1}%)",
        back.len(),
        out.display(),
        mask.count(),
        100.0 * mask.rate()
    );
    Ok(())
}
