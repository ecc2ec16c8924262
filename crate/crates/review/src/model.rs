//! Wire and log records. Every payload carries `schema_version`.

use std::collections::BTreeMap;
use std::fmt;

use labelaudit::flagging::{ExpertResolution, ReviewItem, SCHEMA_VERSION};
use labelaudit::stats::Kappa;
use labelaudit::Label;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Independent,
    Reconciliation,
    Closed,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Independent => "independent",
            Phase::Reconciliation => "reconciliation",
            Phase::Closed => "closed",
        })
    }
}

/// Body of a create-session request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub schema_version: u32,
    #[serde(default)]
    pub session_id: Option<String>,
    pub dataset: String,
    pub annotators: Vec<String>,
    pub seed: u64,
    pub items: Vec<ReviewItem>,
}

/// What an annotator sees in the independent phase: the two texts and
/// nothing about any label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskPayload {
    pub schema_version: u32,
    pub session_id: String,
    pub example_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub grounding: String,
    pub generated_text: String,
    /// 1-based position in this annotator's order.
    pub position: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextTask {
    Task(TaskPayload),
    Done { schema_version: u32, completed: usize, total: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitAnnotation {
    pub schema_version: u32,
    pub example_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationAck {
    pub schema_version: u32,
    pub example_id: String,
    pub revision: u32,
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertAnnotation {
    pub session_id: String,
    pub example_id: String,
    pub annotator_id: String,
    pub label: Label,
    /// Milliseconds since the Unix epoch.
    pub submitted_at: u64,
    pub revision: u32,
}

/// Per-annotator progress; counts only, so it is safe to show anyone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub schema_version: u32,
    pub session_id: String,
    pub dataset: String,
    pub phase: Phase,
    pub tasks: usize,
    pub completed: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disagreements: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unresolved: Option<usize>,
}

/// A disagreement shown during reconciliation, with both independent labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconciliationItem {
    pub schema_version: u32,
    pub example_id: String,
    pub grounding: String,
    pub generated_text: String,
    pub labels: BTreeMap<String, Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResolution {
    pub schema_version: u32,
    pub example_id: String,
    pub final_label: Label,
    #[serde(default)]
    pub note: Option<String>,
}

/// Label changes from independent annotation to the final label, counted
/// per annotator and item.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeTally {
    pub consistent_to_inconsistent: usize,
    pub inconsistent_to_consistent: usize,
}

impl ChangeTally {
    pub fn total(&self) -> usize {
        self.consistent_to_inconsistent + self.inconsistent_to_consistent
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub schema_version: u32,
    pub session_id: String,
    pub dataset: String,
    pub resolutions: usize,
    pub resolved_by_agreement: usize,
    pub resolved_by_reconciliation: usize,
    /// Share of agreeing annotator pairs, averaged over items. With two
    /// annotators this is the fraction of items they agreed on.
    pub pre_reconciliation_agreement: f64,
    pub pre_reconciliation_kappa: Kappa,
    pub changes: ChangeTally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Export {
    pub summary: ExportSummary,
    pub resolutions: Vec<ExpertResolution>,
}

pub(crate) fn version_ok(v: u32) -> crate::Result<()> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(crate::ReviewError::Invalid(format!(
            "schema_version {v} unsupported (expected {SCHEMA_VERSION})"
        )))
    }
}
