//! Run the synthetic experiment bundle and print a summary.
//!
//! ```text
//! cargo run --release -p labelaudit --example simulate -- [seed] [out_dir]
//! ```

use std::path::PathBuf;

use labelaudit::simulate::{format_report, simulate, write_bundle, SimConfig};

fn main() -> labelaudit::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map(|s| s.parse().expect("seed must be an integer")).unwrap_or(0);
    let cfg = SimConfig { seed, ..SimConfig::default() };
    let report = simulate(&cfg)?;
    print!("{}", format_report(&report));
    if let Some(dir) = args.next().map(PathBuf::from) {
        write_bundle(&report, &dir)?;
        println!("\nbundle written to {}", dir.display());
    }
    Ok(())
}
