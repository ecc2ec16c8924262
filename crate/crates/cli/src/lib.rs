//! The `labelaudit` command line.
//!
//! ```text
//! labelaudit --config run.toml --mock annotate
//! labelaudit --config run.toml flag-report
//! labelaudit --config run.toml serve-review
//! labelaudit --config run.toml evaluate --scores a.csv --scores b.csv
//! labelaudit --config run.toml repair --tau 0.95
//! labelaudit simulate --seed 3 --out sim/
//! ```
//!
//! Exit status: 0 on success, 1 for invalid input or configuration, 2 for
//! provider failures, 3 when an earlier stage's output is missing.

use std::io::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use labelaudit::config::RunConfig;
use labelaudit::flagging::{BinSpec, ReviewItem, SCHEMA_VERSION};
use labelaudit::pipeline::{self, INTAKE_FILE};
use labelaudit::{report, simulate};
use labelaudit_review::{CreateSession, ReviewError, ReviewService, ServiceOptions};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] labelaudit::Error),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => e.exit_code(),
            CliError::Review(ReviewError::Core(e)) => e.exit_code(),
            CliError::Review(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "labelaudit", version, about = "Find label errors with an ensemble of LLM judges")]
pub struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Use the configured mock roster instead of real providers.
    #[arg(long, global = true)]
    pub mock: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flag threshold on disagreement confidence, at least 0.5.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Comma-separated confidence bin edges, e.g. 0.5,0.75,0.9,0.95,1.0
    #[arg(long, global = true, value_delimiter = ',')]
    pub bins: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Judge every dataset with every (provider, prompt) pair.
    Annotate,
    /// Flag disagreements, write the review intake and the error-rate table.
    FlagReport,
    /// Serve the review service, opening a session per dataset intake.
    ServeReview {
        /// Listen address; overrides the config.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Rank models on original versus corrected labels.
    Evaluate {
        /// Score file (CSV or JSONL with example_id, score); repeatable.
        #[arg(long, required = true)]
        scores: Vec<PathBuf>,
        /// Dataset to evaluate against; the first configured one by default.
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Run the synthetic experiment end to end.
    Simulate,
    /// Write flipped, filtered, and random-control training sets.
    Repair,
}

/// Load the config and apply command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.simulate.seed = s;
    }
    if let Some(t) = cli.tau {
        cfg.tau = t;
        cfg.simulate.tau = t;
    }
    if let Some(edges) = &cli.bins {
        cfg.bins = BinSpec::new(edges.clone(), cfg.bins.min_count)?;
        cfg.simulate.bins = BinSpec::new(edges.clone(), cfg.simulate.bins.min_count)?;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli)?;
    let mut out = std::io::stdout().lock();
    match &cli.command {
        Command::Annotate => {
            for s in pipeline::run_annotate(&cfg, cli.mock)? {
                writeln!(
                    out,
                    "{}: {} examples, {} judgments, {} failures, {} backend calls -> {}",
                    s.dataset,
                    s.examples,
                    s.judgments,
                    s.failures,
                    s.backend_calls,
                    s.path.display()
                )?;
            }
        }
        Command::FlagReport => {
            let rows = pipeline::run_flag_report(&cfg)?;
            write!(out, "{}", pipeline::format_summary(&rows))?;
            for r in &rows {
                writeln!(out, "{}: {} flagged at tau {}", r.dataset, r.flagged, cfg.tau)?;
            }
        }
        Command::ServeReview { bind } => serve_review(&cfg, bind.as_deref())?,
        Command::Evaluate { scores, dataset } => {
            let rows = pipeline::run_evaluate(&cfg, dataset.as_deref(), scores)?;
            write!(out, "{}", labelaudit::evaluate::format_rank_shift(&rows))?;
        }
        Command::Simulate => {
            let report = simulate::simulate(&cfg.simulate)?;
            write!(out, "{}", simulate::format_report(&report))?;
            if cli.out.is_some() || cli.config.is_some() {
                simulate::write_bundle(&report, &cfg.out)?;
                writeln!(out, "bundle written to {}", cfg.out.display())?;
            }
        }
        Command::Repair => {
            for s in pipeline::run_repair(&cfg, cfg.tau)? {
                for r in &s.receipts {
                    writeln!(
                        out,
                        "{}: {:?} {} -> {} examples ({} affected)",
                        s.dataset,
                        r.mode,
                        r.before_size,
                        r.after_size,
                        r.affected_ids.len()
                    )?;
                }
                writeln!(out, "{}: written to {}", s.dataset, s.dir.display())?;
            }
        }
    }
    Ok(())
}

/// Open the review data directory and create a session named after each
/// dataset whose intake exists and has no session yet.
pub fn open_review(cfg: &RunConfig) -> Result<ReviewService, CliError> {
    let opts = ServiceOptions {
        show_dataset: cfg.review.show_dataset,
        allow_more_annotators: cfg.review.allow_more_annotators,
    };
    let service = ReviewService::open(&cfg.review_dir(), opts)?;
    let existing = service.session_ids();
    let annotators: Vec<String> = cfg.review.annotators.iter().map(|a| a.id.clone()).collect();
    for dc in &cfg.datasets {
        let ds = pipeline::load(dc)?;
        let name = ds.name().to_string();
        if existing.contains(&name) {
            continue;
        }
        let intake = pipeline::dataset_dir(cfg, &ds).join(INTAKE_FILE);
        if !intake.exists() {
            return Err(labelaudit::Error::MissingInput(format!(
                "{} not found; run flag-report first",
                intake.display()
            ))
            .into());
        }
        let items: Vec<ReviewItem> = report::read_jsonl(&intake)?;
        if items.is_empty() {
            tracing::warn!(dataset = %name, "nothing flagged; no session created");
            continue;
        }
        let status = service.create_session(CreateSession {
            schema_version: SCHEMA_VERSION,
            session_id: Some(name.clone()),
            dataset: name,
            annotators: annotators.clone(),
            seed: cfg.seed,
            items,
        })?;
        tracing::info!(session = %status.session_id, tasks = status.tasks, "session ready");
    }
    Ok(service)
}

fn serve_review(cfg: &RunConfig, bind: Option<&str>) -> Result<(), CliError> {
    let service = Arc::new(open_review(cfg)?);
    let auth = labelaudit_review::Auth::from_config(&cfg.review);
    let addr = bind.unwrap_or(&cfg.review.bind).to_string();
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await?;
        let local = listener.local_addr()?;
        {
            let mut out = std::io::stdout().lock();
            for id in service.session_ids() {
                writeln!(out, "session {id}")?;
            }
            writeln!(out, "listening on http://{local}")?;
            out.flush()?;
        }
        let app = labelaudit_review::router(service, auth);
        labelaudit_review::serve(listener, app, async {
            tokio::signal::ctrl_c().await.ok();
        })
        .await?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("labelaudit").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn overrides_reach_the_simulation_too() {
        let cfg = resolve_config(&parse(&["--seed", "9", "--tau", "0.8", "--bins", "0.5,0.7,1.0", "simulate"])).unwrap();
        assert_eq!((cfg.seed, cfg.simulate.seed), (9, 9));
        assert_eq!((cfg.tau, cfg.simulate.tau), (0.8, 0.8));
        assert_eq!(cfg.bins.edges, vec![0.5, 0.7, 1.0]);
        assert_eq!(cfg.simulate.bins.edges, cfg.bins.edges);
    }

    #[test]
    fn bad_overrides_are_validation_errors() {
        let err = resolve_config(&parse(&["--tau", "0.2", "flag-report"])).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let err = resolve_config(&parse(&["--bins", "0.9,0.6", "flag-report"])).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn exit_codes_follow_the_core_error() {
        let provider = labelaudit::Error::Provider {
            model_id: "m".into(),
            message: "503".into(),
        };
        assert_eq!(CliError::from(provider).exit_code(), 2);
        let missing = labelaudit::Error::MissingInput("judgments".into());
        assert_eq!(CliError::from(ReviewError::from(missing)).exit_code(), 3);
        assert_eq!(CliError::from(ReviewError::Unauthorized).exit_code(), 1);
    }

    #[test]
    fn evaluate_requires_scores() {
        assert!(Cli::try_parse_from(["labelaudit", "evaluate"]).is_err());
        let cli = parse(&["evaluate", "--scores", "a.csv", "--scores", "b.jsonl"]);
        match cli.command {
            Command::Evaluate { scores, dataset } => {
                assert_eq!(scores.len(), 2);
                assert_eq!(dataset, None);
            }
            other => panic!("{other:?}"),
        }
    }
}
