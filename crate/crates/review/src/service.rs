//! Session registry over a data directory.
//!
//! Layout: `<dir>/sessions/<id>.jsonl` holds each session's log and
//! `<dir>/exports/<id>.jsonl` the gold-label export written on close.
//! Mutations on one session are serialized by its lock; the log record is
//! synced before the in-memory state changes and before the caller sees a
//! result.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use labelaudit::flagging::SCHEMA_VERSION;
use labelaudit::report;
use labelaudit::stats::AnnotationMatrix;
use parking_lot::{Mutex, RwLock};

use crate::error::{Result, ReviewError};
use crate::log::{Event, SessionLog};
use crate::model::{
    version_ok, AnnotationAck, CreateSession, Export, NextTask, ReconciliationItem, SessionStatus, SubmitAnnotation,
    SubmitResolution,
};
use crate::session::Session;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServiceOptions {
    /// Include the source dataset name in task payloads.
    pub show_dataset: bool,
    /// Accept sessions with more than two annotators. Only unanimous items
    /// auto-resolve; everything else goes to reconciliation.
    pub allow_more_annotators: bool,
}

struct Entry {
    session: Session,
    log: SessionLog,
}

pub struct ReviewService {
    dir: PathBuf,
    opts: ServiceOptions,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Entry>>>>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        && !id.starts_with('.')
}

impl ReviewService {
    /// Open `dir`, replaying every session log found under it.
    pub fn open(dir: &Path, opts: ServiceOptions) -> Result<Self> {
        std::fs::create_dir_all(dir.join("sessions"))?;
        std::fs::create_dir_all(dir.join("exports"))?;
        let mut sessions = BTreeMap::new();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.join("sessions"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let (log, events) = SessionLog::open(&path)?;
            let corrupt = |line: usize, e: ReviewError| ReviewError::CorruptLog {
                path: path.clone(),
                line,
                message: e.to_string(),
            };
            let mut events = events.into_iter();
            let first = events
                .next()
                .ok_or_else(|| corrupt(1, ReviewError::Invalid("empty log".into())))?;
            let mut session = Session::from_created(&first).map_err(|e| corrupt(1, e))?;
            for (i, ev) in events.enumerate() {
                session.apply(ev).map_err(|e| corrupt(i + 2, e))?;
            }
            tracing::info!(session = session.id(), phase = %session.phase(), "replayed session");
            sessions.insert(session.id().to_string(), Arc::new(Mutex::new(Entry { session, log })));
        }
        Ok(ReviewService {
            dir: dir.to_path_buf(),
            opts,
            sessions: RwLock::new(sessions),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn export_path(&self, session_id: &str) -> PathBuf {
        self.dir.join("exports").join(format!("{session_id}.jsonl"))
    }

    fn entry(&self, id: &str) -> Result<Arc<Mutex<Entry>>> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ReviewError::SessionNotFound(id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().keys().cloned().collect()
    }

    pub fn create_session(&self, req: CreateSession) -> Result<SessionStatus> {
        version_ok(req.schema_version)?;
        if req.items.is_empty() {
            return Err(ReviewError::Invalid("session needs at least one flagged example".into()));
        }
        let mut seen = HashSet::new();
        for a in &req.annotators {
            if a.is_empty() || !seen.insert(a.as_str()) {
                return Err(ReviewError::Invalid(format!("duplicate or empty annotator id {a:?}")));
            }
        }
        let n = req.annotators.len();
        if n < 2 || (n > 2 && !self.opts.allow_more_annotators) {
            return Err(ReviewError::Invalid(format!(
                "a session needs exactly two annotators, got {n}"
            )));
        }
        let mut ids = HashSet::new();
        for it in &req.items {
            version_ok(it.schema_version)?;
            if !ids.insert(it.example_id.as_str()) {
                return Err(ReviewError::Invalid(format!("duplicate example id {}", it.example_id)));
            }
        }

        let mut sessions = self.sessions.write();
        let id = match req.session_id {
            Some(id) => id,
            None => (sessions.len() + 1..)
                .map(|k| format!("{}-{k}", req.dataset))
                .find(|c| !sessions.contains_key(c))
                .expect("unbounded"),
        };
        if !valid_id(&id) {
            return Err(ReviewError::Invalid(format!("session id {id:?} must be [A-Za-z0-9._-]")));
        }
        if sessions.contains_key(&id) {
            return Err(ReviewError::SessionExists(id));
        }
        let created = Event::Created {
            session_id: id.clone(),
            dataset: req.dataset,
            annotators: req.annotators,
            seed: req.seed,
            show_dataset: self.opts.show_dataset,
            items: req.items,
            at: now_ms(),
        };
        let session = Session::from_created(&created)?;
        let path = self.dir.join("sessions").join(format!("{id}.jsonl"));
        let log = SessionLog::create(&path, &created).map_err(|e| match e {
            ReviewError::Io(io) if io.kind() == std::io::ErrorKind::AlreadyExists => ReviewError::SessionExists(id.clone()),
            other => other,
        })?;
        let status = session.status();
        tracing::info!(session = %id, tasks = status.tasks, "created session");
        sessions.insert(id, Arc::new(Mutex::new(Entry { session, log })));
        Ok(status)
    }

    pub fn status(&self, id: &str) -> Result<SessionStatus> {
        Ok(self.entry(id)?.lock().session.status())
    }

    pub fn annotators(&self, id: &str) -> Result<Vec<String>> {
        Ok(self.entry(id)?.lock().session.annotators().to_vec())
    }

    pub fn next_task(&self, id: &str, annotator: &str) -> Result<NextTask> {
        self.entry(id)?.lock().session.next_task(annotator)
    }

    fn commit(entry: &mut Entry, event: Event) -> Result<()> {
        entry.log.append(&event)?;
        entry.session.apply(event)
    }

    pub fn submit_annotation(&self, id: &str, annotator: &str, req: SubmitAnnotation) -> Result<AnnotationAck> {
        version_ok(req.schema_version)?;
        let entry = self.entry(id)?;
        let mut e = entry.lock();
        let event = e.session.annotation_event(annotator, &req.example_id, req.label, now_ms())?;
        let Event::Annotated(a) = &event else { unreachable!() };
        let revision = a.revision;
        Self::commit(&mut e, event)?;
        let status = e.session.status();
        Ok(AnnotationAck {
            schema_version: SCHEMA_VERSION,
            example_id: req.example_id,
            revision,
            completed: status.completed[annotator],
            total: status.tasks,
        })
    }

    /// Move to reconciliation and list the disagreements. Repeating the
    /// call during reconciliation returns the same list.
    pub fn open_reconciliation(&self, id: &str) -> Result<Vec<ReconciliationItem>> {
        let entry = self.entry(id)?;
        let mut e = entry.lock();
        if e.session.phase() == crate::Phase::Independent {
            let event = e.session.open_event(now_ms())?;
            Self::commit(&mut e, event)?;
            tracing::info!(session = id, "reconciliation opened");
        }
        e.session.reconciliation()
    }

    pub fn reconciliation(&self, id: &str) -> Result<Vec<ReconciliationItem>> {
        self.entry(id)?.lock().session.reconciliation()
    }

    pub fn submit_resolution(&self, id: &str, req: SubmitResolution) -> Result<ReconciliationItem> {
        version_ok(req.schema_version)?;
        let entry = self.entry(id)?;
        let mut e = entry.lock();
        let event = e
            .session
            .resolution_event(&req.example_id, req.final_label, req.note, now_ms())?;
        Self::commit(&mut e, event)?;
        e.session.reconciliation_item_for(&req.example_id)
    }

    /// Close the session and write its export. Closing an already closed
    /// session rewrites and returns the same export.
    pub fn close_session(&self, id: &str) -> Result<Export> {
        let entry = self.entry(id)?;
        let mut e = entry.lock();
        if e.session.phase() != crate::Phase::Closed {
            let event = e.session.close_event(now_ms())?;
            Self::commit(&mut e, event)?;
            tracing::info!(session = id, "session closed");
        }
        let export = e.session.export()?;
        self.write_export(id, &export)?;
        Ok(export)
    }

    fn write_export(&self, id: &str, export: &Export) -> Result<()> {
        let path = self.export_path(id);
        let tmp = path.with_extension("jsonl.tmp");
        report::write_jsonl(&export.resolutions, &tmp)?;
        std::fs::rename(&tmp, &path)?;
        report::write_json(&export.summary, &path.with_extension("summary.json"))?;
        Ok(())
    }

    pub fn export(&self, id: &str) -> Result<Export> {
        self.entry(id)?.lock().session.export()
    }

    /// The stored pre-reconciliation label matrix.
    pub fn annotation_matrix(&self, id: &str) -> Result<AnnotationMatrix> {
        self.entry(id)?.lock().session.annotation_matrix()
    }
}

#[cfg(test)]
mod tests {
    use labelaudit::flagging::{ResolvedBy, ReviewItem};
    use labelaudit::stats::fleiss_kappa;
    use labelaudit::Label;

    use super::*;
    use crate::Phase;

    pub(crate) fn items(n: usize) -> Vec<ReviewItem> {
        (0..n)
            .map(|i| ReviewItem {
                schema_version: SCHEMA_VERSION,
                example_id: format!("x{i}"),
                dataset: "toy".into(),
                grounding: format!("grounding {i}"),
                generated_text: format!("text {i}"),
                original_label: Label::Consistent,
                ensemble_p: 0.1,
            })
            .collect()
    }

    fn request(n: usize, annotators: &[&str]) -> CreateSession {
        CreateSession {
            schema_version: SCHEMA_VERSION,
            session_id: Some("s".into()),
            dataset: "toy".into(),
            annotators: annotators.iter().map(|a| a.to_string()).collect(),
            seed: 7,
            items: items(n),
        }
    }

    fn submit(svc: &ReviewService, who: &str, id: &str, label: Label) -> AnnotationAck {
        svc.submit_annotation(
            "s",
            who,
            SubmitAnnotation {
                schema_version: SCHEMA_VERSION,
                example_id: id.into(),
                label,
            },
        )
        .unwrap()
    }

    fn resolve(svc: &ReviewService, id: &str, label: Label) -> Result<ReconciliationItem> {
        svc.submit_resolution(
            "s",
            SubmitResolution {
                schema_version: SCHEMA_VERSION,
                example_id: id.into(),
                final_label: label,
                note: None,
            },
        )
    }

    /// Annotator a says consistent everywhere; b disagrees on x0 and x1.
    fn annotate_all(svc: &ReviewService, n: usize) {
        for i in 0..n {
            submit(svc, "a", &format!("x{i}"), Label::Consistent);
            let b = if i < 2 { Label::Inconsistent } else { Label::Consistent };
            submit(svc, "b", &format!("x{i}"), b);
        }
    }

    #[test]
    fn validates_creation() {
        let dir = tempfile::tempdir().unwrap();
        let svc = ReviewService::open(dir.path(), ServiceOptions::default()).unwrap();
        assert!(svc.create_session(request(0, &["a", "b"])).is_err());
        assert!(svc.create_session(request(3, &["a", "a"])).is_err());
        assert!(svc.create_session(request(3, &["a"])).is_err());
        assert!(svc.create_session(request(3, &["a", "b", "c"])).is_err());
        svc.create_session(request(3, &["a", "b"])).unwrap();
        assert!(matches!(
            svc.create_session(request(3, &["a", "b"])),
            Err(ReviewError::SessionExists(_))
        ));

        let dir = tempfile::tempdir().unwrap();
        let opts = ServiceOptions {
            allow_more_annotators: true,
            ..Default::default()
        };
        let svc = ReviewService::open(dir.path(), opts).unwrap();
        svc.create_session(request(3, &["a", "b", "c"])).unwrap();
    }

    #[test]
    fn orders_are_seeded_per_annotator() {
        let dir = tempfile::tempdir().unwrap();
        let svc = ReviewService::open(dir.path(), ServiceOptions::default()).unwrap();
        svc.create_session(request(20, &["a", "b"])).unwrap();
        let first = |who: &str| match svc.next_task("s", who).unwrap() {
            NextTask::Task(t) => t.example_id,
            NextTask::Done { .. } => panic!("done"),
        };
        let a = crate::session::presentation_order(7, "a", 20);
        let b = crate::session::presentation_order(7, "b", 20);
        assert_ne!(a, b);
        assert_eq!(a, crate::session::presentation_order(7, "a", 20));
        assert_eq!(first("a"), format!("x{}", a[0]));
        assert_eq!(first("b"), format!("x{}", b[0]));
        assert!(matches!(
            svc.next_task("s", "zed"),
            Err(ReviewError::UnknownAnnotator { .. })
        ));
    }

    #[test]
    fn full_workflow() {
        let dir = tempfile::tempdir().unwrap();
        let svc = ReviewService::open(dir.path(), ServiceOptions::default()).unwrap();
        svc.create_session(request(6, &["a", "b"])).unwrap();

        // Walk a's queue through next_task.
        let mut seen = Vec::new();
        while let NextTask::Task(t) = svc.next_task("s", "a").unwrap() {
            assert_eq!(t.position, seen.len() + 1);
            seen.push(t.example_id.clone());
            submit(&svc, "a", &t.example_id, Label::Consistent);
        }
        assert_eq!(seen.len(), 6);

        match svc.open_reconciliation("s") {
            Err(ReviewError::Incomplete { missing }) => assert_eq!(missing["b"], 6),
            other => panic!("{other:?}"),
        }
        let ack = submit(&svc, "b", "x0", Label::Consistent);
        assert_eq!(ack.revision, 1);
        annotate_all(&svc, 6);
        let ack = submit(&svc, "b", "x0", Label::Inconsistent);
        assert_eq!(ack.revision, 3);
        assert!(matches!(svc.reconciliation("s"), Err(ReviewError::WrongPhase { .. })));

        let list = svc.open_reconciliation("s").unwrap();
        let ids: Vec<_> = list.iter().map(|r| r.example_id.as_str()).collect();
        assert_eq!(ids, ["x0", "x1"]);
        assert_eq!(list[0].labels["a"], Label::Consistent);
        assert_eq!(list[0].labels["b"], Label::Inconsistent);
        assert_eq!(svc.open_reconciliation("s").unwrap(), list);

        let late = svc.submit_annotation(
            "s",
            "a",
            SubmitAnnotation {
                schema_version: SCHEMA_VERSION,
                example_id: "x3".into(),
                label: Label::Inconsistent,
            },
        );
        assert!(matches!(late, Err(ReviewError::WrongPhase { .. })));
        assert!(matches!(resolve(&svc, "x4", Label::Consistent), Err(ReviewError::NotADisagreement(_))));
        assert!(matches!(resolve(&svc, "nope", Label::Consistent), Err(ReviewError::UnknownExample(_))));
        resolve(&svc, "x0", Label::Inconsistent).unwrap();
        assert!(matches!(svc.close_session("s"), Err(ReviewError::Unresolved { count: 1 })));
        let item = resolve(&svc, "x1", Label::Consistent).unwrap();
        assert_eq!(item.final_label, Some(Label::Consistent));

        let export = svc.close_session("s").unwrap();
        assert_eq!(svc.status("s").unwrap().phase, Phase::Closed);
        assert_eq!(export.resolutions.len(), 6);
        assert_eq!(export.summary.resolved_by_agreement, 4);
        assert_eq!(export.summary.resolved_by_reconciliation, 2);
        // x0: a moved 1 -> 0. x1: b moved 0 -> 1.
        assert_eq!(export.summary.changes.consistent_to_inconsistent, 1);
        assert_eq!(export.summary.changes.inconsistent_to_consistent, 1);
        for r in &export.resolutions {
            let agree = r.independent_labels.values().all(|l| *l == r.final_label);
            assert_eq!(agree, r.resolved_by == ResolvedBy::Agreement);
        }
        let matrix = svc.annotation_matrix("s").unwrap();
        assert_eq!(export.summary.pre_reconciliation_kappa, fleiss_kappa(&matrix));
        assert!((export.summary.pre_reconciliation_agreement - 4.0 / 6.0).abs() < 1e-12);

        let on_disk = labelaudit::flagging::read_expert_labels(&svc.export_path("s")).unwrap();
        assert_eq!(on_disk.len(), 6);
        assert_eq!(on_disk["x0"], Label::Inconsistent);
    }

    #[test]
    fn full_agreement_closes_immediately() {
        let dir = tempfile::tempdir().unwrap();
        let svc = ReviewService::open(dir.path(), ServiceOptions::default()).unwrap();
        svc.create_session(request(3, &["a", "b"])).unwrap();
        for i in 0..3 {
            submit(&svc, "a", &format!("x{i}"), Label::Inconsistent);
            submit(&svc, "b", &format!("x{i}"), Label::Inconsistent);
        }
        assert!(svc.open_reconciliation("s").unwrap().is_empty());
        let export = svc.close_session("s").unwrap();
        assert_eq!(export.summary.resolved_by_agreement, 3);
        assert_eq!(export.summary.pre_reconciliation_kappa, labelaudit::stats::Kappa::Degenerate);
    }

    #[test]
    fn restart_replays_everything() {
        let dir = tempfile::tempdir().unwrap();
        let svc = ReviewService::open(dir.path(), ServiceOptions::default()).unwrap();
        svc.create_session(request(5, &["a", "b"])).unwrap();
        annotate_all(&svc, 5);
        submit(&svc, "a", "x3", Label::Inconsistent);
        submit(&svc, "a", "x3", Label::Consistent);
        let before = svc.status("s").unwrap();
        drop(svc);

        let svc = ReviewService::open(dir.path(), ServiceOptions::default()).unwrap();
        assert_eq!(svc.status("s").unwrap(), before);
        assert_eq!(submit(&svc, "a", "x3", Label::Consistent).revision, 4);
        svc.open_reconciliation("s").unwrap();
        resolve(&svc, "x0", Label::Consistent).unwrap();
        drop(svc);

        let svc = ReviewService::open(dir.path(), ServiceOptions::default()).unwrap();
        let status = svc.status("s").unwrap();
        assert_eq!(status.phase, Phase::Reconciliation);
        assert_eq!(status.unresolved, Some(1));
        resolve(&svc, "x1", Label::Inconsistent).unwrap();
        let export = svc.close_session("s").unwrap();
        drop(svc);
        let svc = ReviewService::open(dir.path(), ServiceOptions::default()).unwrap();
        assert_eq!(svc.export("s").unwrap(), export);
    }
}
