//! A two-expert review session driven in process: blind independent passes,
//! reconciliation of the disagreements, and the export.
//!
//! ```text
//! cargo run -p labelaudit-review --example review_session -- [data_dir]
//! ```
//!
//! Pass a directory to keep the session log and export; a temporary one is
//! used otherwise.

use std::path::PathBuf;

use labelaudit::flagging::{ReviewItem, SCHEMA_VERSION};
use labelaudit::Label;
use labelaudit_review::{CreateSession, NextTask, ReviewService, ServiceOptions, SubmitAnnotation, SubmitResolution};

fn main() -> labelaudit_review::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("review-demo-{}", std::process::id())));
    let service = ReviewService::open(&dir, ServiceOptions::default())?;

    let claims = [
        ("Revenue rose 12% in the third quarter.", "Third-quarter revenue grew by 12%.", Label::Inconsistent),
        ("The bridge opened in 1932.", "The bridge opened in 1923.", Label::Consistent),
        ("She studied chemistry in Lyon.", "She studied physics in Lyon.", Label::Consistent),
        ("The museum is closed on Mondays.", "The museum opens every day.", Label::Consistent),
    ];
    let items = claims
        .iter()
        .enumerate()
        .map(|(i, (grounding, text, label))| ReviewItem {
            schema_version: SCHEMA_VERSION,
            example_id: format!("demo-{i}"),
            dataset: "demo".into(),
            grounding: grounding.to_string(),
            generated_text: text.to_string(),
            original_label: *label,
            ensemble_p: if label.is_consistent() { 0.1 } else { 0.9 },
        })
        .collect();
    let status = service.create_session(CreateSession {
        schema_version: SCHEMA_VERSION,
        session_id: None,
        dataset: "demo".into(),
        annotators: vec!["ana".into(), "ben".into()],
        seed: 1,
        items,
    })?;
    let id = status.session_id;
    println!("session {id}: {} tasks per annotator, in {}", status.tasks, dir.display());

    // Ana marks every claim faithfully; Ben misses the swapped subject.
    let verdict = |who: &str, example: &str| match (who, example) {
        ("ben", "demo-2") => Label::Consistent,
        (_, "demo-0") => Label::Consistent,
        _ => Label::Inconsistent,
    };
    for who in ["ana", "ben"] {
        while let NextTask::Task(task) = service.next_task(&id, who)? {
            // Tasks carry the texts only: no original label, no ensemble score.
            let label = verdict(who, &task.example_id);
            service.submit_annotation(
                &id,
                who,
                SubmitAnnotation {
                    schema_version: SCHEMA_VERSION,
                    example_id: task.example_id.clone(),
                    label,
                },
            )?;
            println!("  {who} [{}/{}] {} -> {}", task.position, task.total, task.example_id, label.as_u8());
        }
    }

    for item in service.open_reconciliation(&id)? {
        println!("disagreement on {}: {:?}", item.example_id, item.labels);
        service.submit_resolution(
            &id,
            SubmitResolution {
                schema_version: SCHEMA_VERSION,
                example_id: item.example_id,
                final_label: Label::Inconsistent,
                note: Some("the subject changed".into()),
            },
        )?;
    }

    let export = service.close_session(&id)?;
    let s = &export.summary;
    println!(
        "closed: {} resolutions ({} by agreement, {} reconciled), agreement {:.2}, kappa {}",
        s.resolutions, s.resolved_by_agreement, s.resolved_by_reconciliation, s.pre_reconciliation_agreement, s.pre_reconciliation_kappa
    );
    for r in &export.resolutions {
        println!("  {} -> {}", r.example_id, r.final_label.as_u8());
    }
    println!("export written to {}", service.export_path(&id).display());
    Ok(())
}
