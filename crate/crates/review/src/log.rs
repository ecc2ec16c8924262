//! Append-only session log. One JSON record per line; a record is synced to
//! disk before the operation that produced it is acknowledged.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use labelaudit::flagging::{ReviewItem, SCHEMA_VERSION};
use labelaudit::Label;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ReviewError};
use crate::model::ExpertAnnotation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        session_id: String,
        dataset: String,
        annotators: Vec<String>,
        seed: u64,
        show_dataset: bool,
        items: Vec<ReviewItem>,
        at: u64,
    },
    Annotated(ExpertAnnotation),
    ReconciliationOpened {
        at: u64,
    },
    Resolved {
        example_id: String,
        final_label: Label,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
        at: u64,
    },
    Closed {
        at: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Record {
    schema_version: u32,
    #[serde(flatten)]
    event: Event,
}

#[derive(Debug)]
pub struct SessionLog {
    path: PathBuf,
    file: File,
}

impl SessionLog {
    /// Create a new log holding `first`. Fails if the file exists.
    pub fn create(path: &Path, first: &Event) -> Result<Self> {
        let file = OpenOptions::new().append(true).create_new(true).open(path)?;
        let mut log = SessionLog {
            path: path.to_path_buf(),
            file,
        };
        log.append(first)?;
        if let Some(dir) = path.parent() {
            // Make the new directory entry itself durable.
            File::open(dir)?.sync_all()?;
        }
        Ok(log)
    }

    /// Read every record, dropping a torn final line left by a crash
    /// mid-write, and reopen the file for appending.
    pub fn open(path: &Path) -> Result<(Self, Vec<Event>)> {
        let (events, valid_len) = replay(path)?;
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        if file.metadata()?.len() != valid_len {
            tracing::warn!(path = %path.display(), "dropping torn final record");
            file.set_len(valid_len)?;
            file.sync_all()?;
        }
        let file = OpenOptions::new().append(true).open(path)?;
        Ok((
            SessionLog {
                path: path.to_path_buf(),
                file,
            },
            events,
        ))
    }

    pub fn append(&mut self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(&Record {
            schema_version: SCHEMA_VERSION,
            event: event.clone(),
        })?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

fn corrupt(path: &Path, line: usize, message: impl Into<String>) -> ReviewError {
    ReviewError::CorruptLog {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parsed events plus the byte length of the intact prefix.
fn replay(path: &Path) -> Result<(Vec<Event>, u64)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    let mut valid = 0u64;
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        // Only the last line can be torn, and only if unterminated.
        if buf.last() != Some(&b'\n') {
            break;
        }
        let rec: Record = serde_json::from_slice(&buf).map_err(|e| corrupt(path, line_no, e.to_string()))?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(corrupt(
                path,
                line_no,
                format!("schema_version {} unsupported", rec.schema_version),
            ));
        }
        events.push(rec.event);
        valid += n as u64;
    }
    Ok((events, valid))
}
