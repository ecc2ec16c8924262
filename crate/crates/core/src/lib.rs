//! Label-error detection for binary factual-consistency datasets.
//!
//! An ensemble of LLM judges (model x prompt pairs) annotates every example
//! with `P(consistent)`. Examples where the ensemble confidently disagrees
//! with the original label are flagged for expert review, expert outcomes
//! become gold labels, and the gold labels feed error-rate estimates,
//! training-set repairs, and model re-evaluation.
//!
//! Everything stochastic is seeded; see [`sampling`].

pub mod sampling;

pub mod config;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod evaluate;
pub mod flagging;
pub mod pipeline;
pub mod providers;
pub mod report;
pub mod simulate;
pub mod stats;
pub mod transforms;

pub use dataset::{load_dataset, export_dataset, Dataset, Example, Format, Label};
pub use ensemble::{aggregate, aggregate_all, ensemble_size_curve, EnsembleScore, Member, MemberPool};
pub use error::{Error, Result};
pub use flagging::{flag, merge_gold, BinSpec, FlagRecord, FlagReport, GoldLabel};
pub use providers::{Judgment, PromptTemplate, Provider, ProviderConfig};
pub use transforms::{filter_flagged, flip_flagged, inject_noise, random_ablation, TransformReceipt};
