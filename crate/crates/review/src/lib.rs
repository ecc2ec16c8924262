//! Blinded two-expert review of flagged examples.
//!
//! Two annotators label every flagged example independently, seeing only
//! the grounding and generated text, each in their own shuffled order.
//! Once both are done, items they agree on resolve automatically and the
//! rest are reconciled jointly. Closing a session writes the gold-label
//! export that flagging reads as expert input.
//!
//! State lives in one append-only log per session under the data
//! directory, synced before every acknowledgment and replayed on start.

mod error;
pub mod http;
pub mod log;
mod model;
mod service;
pub mod session;

pub use error::{Result, ReviewError};
pub use http::{router, serve, Auth, Caller};
pub use model::{
    AnnotationAck, ChangeTally, CreateSession, ExpertAnnotation, Export, ExportSummary, NextTask, Phase,
    ReconciliationItem, SessionStatus, SubmitAnnotation, SubmitResolution, TaskPayload,
};
pub use service::{ReviewService, ServiceOptions};
