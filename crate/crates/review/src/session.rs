//! In-memory session state. Every change goes through [`Session::apply`],
//! which is also how a session is rebuilt from its log.

use std::collections::{BTreeMap, HashMap};

use labelaudit::flagging::{ExpertResolution, ResolvedBy, ReviewItem, SCHEMA_VERSION};
use labelaudit::sampling;
use labelaudit::seed_of;
use labelaudit::stats::{fleiss_kappa, percent_agreement, AnnotationMatrix};
use labelaudit::Label;

use crate::error::{Result, ReviewError};
use crate::log::Event;
use crate::model::{
    ChangeTally, ExpertAnnotation, Export, ExportSummary, NextTask, Phase, ReconciliationItem, SessionStatus,
    TaskPayload,
};

#[derive(Debug, Clone, PartialEq)]
struct Resolution {
    final_label: Label,
    resolved_by: ResolvedBy,
    note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    dataset: String,
    annotators: Vec<String>,
    show_dataset: bool,
    items: Vec<ReviewItem>,
    index: HashMap<String, usize>,
    /// Presentation order per annotator, as indices into `items`.
    orders: BTreeMap<String, Vec<usize>>,
    /// Current annotation per annotator and item index.
    annotations: BTreeMap<String, BTreeMap<usize, ExpertAnnotation>>,
    phase: Phase,
    /// Item indices whose independent labels differ, in intake order.
    disagreements: Vec<usize>,
    resolutions: BTreeMap<usize, Resolution>,
}

/// Per-annotator presentation order for `n` items.
pub fn presentation_order(seed: u64, annotator: &str, n: usize) -> Vec<usize> {
    let mut rng = sampling::rng(seed_of!(seed, "review", annotator));
    sampling::permutation(&mut rng, n)
}

impl Session {
    /// Build a session from its creation event.
    pub fn from_created(event: &Event) -> Result<Self> {
        let Event::Created {
            session_id,
            dataset,
            annotators,
            seed,
            show_dataset,
            items,
            ..
        } = event
        else {
            return Err(ReviewError::Invalid("session log must start with a created record".into()));
        };
        let index = items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.example_id.clone(), i))
            .collect();
        let orders = annotators
            .iter()
            .map(|a| (a.clone(), presentation_order(*seed, a, items.len())))
            .collect();
        Ok(Session {
            id: session_id.clone(),
            dataset: dataset.clone(),
            annotators: annotators.clone(),
            show_dataset: *show_dataset,
            items: items.clone(),
            index,
            orders,
            annotations: annotators.iter().map(|a| (a.clone(), BTreeMap::new())).collect(),
            phase: Phase::Independent,
            disagreements: Vec::new(),
            resolutions: BTreeMap::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn annotators(&self) -> &[String] {
        &self.annotators
    }

    pub fn items(&self) -> &[ReviewItem] {
        &self.items
    }

    pub fn order(&self, annotator: &str) -> Result<&[usize]> {
        self.orders
            .get(annotator)
            .map(Vec::as_slice)
            .ok_or_else(|| ReviewError::UnknownAnnotator {
                session: self.id.clone(),
                annotator: annotator.to_string(),
            })
    }

    fn expect_phase(&self, expected: Phase) -> Result<()> {
        if self.phase == expected {
            Ok(())
        } else {
            Err(ReviewError::WrongPhase {
                expected,
                actual: self.phase,
            })
        }
    }

    fn item_index(&self, example_id: &str) -> Result<usize> {
        self.index
            .get(example_id)
            .copied()
            .ok_or_else(|| ReviewError::UnknownExample(example_id.to_string()))
    }

    fn completed(&self, annotator: &str) -> usize {
        self.annotations.get(annotator).map_or(0, BTreeMap::len)
    }

    pub fn status(&self) -> SessionStatus {
        let after = self.phase != Phase::Independent;
        SessionStatus {
            schema_version: SCHEMA_VERSION,
            session_id: self.id.clone(),
            dataset: self.dataset.clone(),
            phase: self.phase,
            tasks: self.items.len(),
            completed: self
                .annotators
                .iter()
                .map(|a| (a.clone(), self.completed(a)))
                .collect(),
            disagreements: after.then_some(self.disagreements.len()),
            unresolved: after.then(|| self.unresolved()),
        }
    }

    fn unresolved(&self) -> usize {
        self.disagreements
            .iter()
            .filter(|i| !self.resolutions.contains_key(i))
            .count()
    }

    fn payload(&self, annotator: &str, position: usize) -> Result<TaskPayload> {
        let item = &self.items[self.order(annotator)?[position]];
        Ok(TaskPayload {
            schema_version: SCHEMA_VERSION,
            session_id: self.id.clone(),
            example_id: item.example_id.clone(),
            dataset: self.show_dataset.then(|| self.dataset.clone()),
            grounding: item.grounding.clone(),
            generated_text: item.generated_text.clone(),
            position: position + 1,
            total: self.items.len(),
        })
    }

    /// First task in the annotator's order they have not yet labelled.
    pub fn next_task(&self, annotator: &str) -> Result<NextTask> {
        let order = self.order(annotator)?;
        self.expect_phase(Phase::Independent)?;
        let done = &self.annotations[annotator];
        match order.iter().position(|i| !done.contains_key(i)) {
            Some(pos) => Ok(NextTask::Task(self.payload(annotator, pos)?)),
            None => Ok(NextTask::Done {
                schema_version: SCHEMA_VERSION,
                completed: done.len(),
                total: self.items.len(),
            }),
        }
    }

    pub fn annotation_event(&self, annotator: &str, example_id: &str, label: Label, at: u64) -> Result<Event> {
        self.order(annotator)?;
        self.expect_phase(Phase::Independent)?;
        let i = self.item_index(example_id)?;
        let revision = self.annotations[annotator].get(&i).map_or(1, |a| a.revision + 1);
        Ok(Event::Annotated(ExpertAnnotation {
            session_id: self.id.clone(),
            example_id: example_id.to_string(),
            annotator_id: annotator.to_string(),
            label,
            submitted_at: at,
            revision,
        }))
    }

    pub fn open_event(&self, at: u64) -> Result<Event> {
        self.expect_phase(Phase::Independent)?;
        let missing: BTreeMap<String, usize> = self
            .annotators
            .iter()
            .map(|a| (a.clone(), self.items.len() - self.completed(a)))
            .filter(|(_, n)| *n > 0)
            .collect();
        if !missing.is_empty() {
            return Err(ReviewError::Incomplete { missing });
        }
        Ok(Event::ReconciliationOpened { at })
    }

    pub fn resolution_event(&self, example_id: &str, final_label: Label, note: Option<String>, at: u64) -> Result<Event> {
        self.expect_phase(Phase::Reconciliation)?;
        let i = self.item_index(example_id)?;
        if !self.disagreements.contains(&i) {
            return Err(ReviewError::NotADisagreement(example_id.to_string()));
        }
        Ok(Event::Resolved {
            example_id: example_id.to_string(),
            final_label,
            note,
            at,
        })
    }

    pub fn close_event(&self, at: u64) -> Result<Event> {
        self.expect_phase(Phase::Reconciliation)?;
        match self.unresolved() {
            0 => Ok(Event::Closed { at }),
            count => Err(ReviewError::Unresolved { count }),
        }
    }

    fn labels_of(&self, i: usize) -> BTreeMap<String, Label> {
        self.annotations
            .iter()
            .filter_map(|(a, m)| m.get(&i).map(|x| (a.clone(), x.label)))
            .collect()
    }

    /// Apply a logged event. Events produced by the `*_event` methods are
    /// always accepted; anything else is rejected as a corrupt log.
    pub fn apply(&mut self, event: Event) -> Result<()> {
        match event {
            Event::Created { .. } => {
                return Err(ReviewError::Invalid("duplicate created record".into()));
            }
            Event::Annotated(a) => {
                let ev = self.annotation_event(&a.annotator_id, &a.example_id, a.label, a.submitted_at)?;
                let Event::Annotated(expected) = ev else { unreachable!() };
                if a.revision != expected.revision {
                    return Err(ReviewError::Invalid(format!(
                        "revision {} for {} out of sequence",
                        a.revision, a.example_id
                    )));
                }
                let i = self.index[&a.example_id];
                self.annotations.get_mut(&a.annotator_id).expect("checked").insert(i, a);
            }
            Event::ReconciliationOpened { at } => {
                self.open_event(at)?;
                self.phase = Phase::Reconciliation;
                for i in 0..self.items.len() {
                    let labels = self.labels_of(i);
                    let first = *labels.values().next().expect("complete");
                    if labels.values().all(|l| *l == first) {
                        self.resolutions.insert(
                            i,
                            Resolution {
                                final_label: first,
                                resolved_by: ResolvedBy::Agreement,
                                note: None,
                            },
                        );
                    } else {
                        self.disagreements.push(i);
                    }
                }
            }
            Event::Resolved {
                example_id,
                final_label,
                note,
                at,
            } => {
                self.resolution_event(&example_id, final_label, note.clone(), at)?;
                self.resolutions.insert(
                    self.index[&example_id],
                    Resolution {
                        final_label,
                        resolved_by: ResolvedBy::Reconciliation,
                        note,
                    },
                );
            }
            Event::Closed { at } => {
                self.close_event(at)?;
                self.phase = Phase::Closed;
            }
        }
        Ok(())
    }

    fn reconciliation_item(&self, i: usize) -> ReconciliationItem {
        let item = &self.items[i];
        let res = self.resolutions.get(&i);
        ReconciliationItem {
            schema_version: SCHEMA_VERSION,
            example_id: item.example_id.clone(),
            grounding: item.grounding.clone(),
            generated_text: item.generated_text.clone(),
            labels: self.labels_of(i),
            final_label: res.map(|r| r.final_label),
            note: res.and_then(|r| r.note.clone()),
        }
    }

    /// Disagreements with both independent labels side by side.
    pub fn reconciliation(&self) -> Result<Vec<ReconciliationItem>> {
        if self.phase == Phase::Independent {
            return Err(ReviewError::WrongPhase {
                expected: Phase::Reconciliation,
                actual: self.phase,
            });
        }
        Ok(self.disagreements.iter().map(|&i| self.reconciliation_item(i)).collect())
    }

    pub fn reconciliation_item_for(&self, example_id: &str) -> Result<ReconciliationItem> {
        Ok(self.reconciliation_item(self.item_index(example_id)?))
    }

    /// Pre-reconciliation labels as an item-by-category count matrix, in
    /// intake order.
    pub fn annotation_matrix(&self) -> Result<AnnotationMatrix> {
        if self.phase == Phase::Independent {
            return Err(ReviewError::WrongPhase {
                expected: Phase::Reconciliation,
                actual: self.phase,
            });
        }
        let rows: Vec<Vec<Label>> = (0..self.items.len())
            .map(|i| self.labels_of(i).into_values().collect())
            .collect();
        Ok(AnnotationMatrix::from_labels(rows)?)
    }

    /// Gold-label export of a closed session, in intake order.
    pub fn export(&self) -> Result<Export> {
        self.expect_phase(Phase::Closed)?;
        let mut changes = ChangeTally::default();
        let mut by_agreement = 0;
        let resolutions: Vec<ExpertResolution> = (0..self.items.len())
            .map(|i| {
                let res = &self.resolutions[&i];
                let labels = self.labels_of(i);
                for l in labels.values() {
                    match (l, res.final_label) {
                        (Label::Consistent, Label::Inconsistent) => changes.consistent_to_inconsistent += 1,
                        (Label::Inconsistent, Label::Consistent) => changes.inconsistent_to_consistent += 1,
                        _ => {}
                    }
                }
                if res.resolved_by == ResolvedBy::Agreement {
                    by_agreement += 1;
                }
                ExpertResolution {
                    schema_version: SCHEMA_VERSION,
                    example_id: self.items[i].example_id.clone(),
                    final_label: res.final_label,
                    resolved_by: res.resolved_by,
                    independent_labels: labels,
                    note: res.note.clone(),
                }
            })
            .collect();
        let matrix = self.annotation_matrix()?;
        Ok(Export {
            summary: ExportSummary {
                schema_version: SCHEMA_VERSION,
                session_id: self.id.clone(),
                dataset: self.dataset.clone(),
                resolutions: resolutions.len(),
                resolved_by_agreement: by_agreement,
                resolved_by_reconciliation: resolutions.len() - by_agreement,
                pre_reconciliation_agreement: percent_agreement(&matrix),
                pre_reconciliation_kappa: fleiss_kappa(&matrix),
                changes,
            },
            resolutions,
        })
    }
}
