//! Newline-delimited event log: one canonical-form event per line.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::event::ProjectEvent;
use crate::state::ProjectState;
use crate::value::to_canonical_string;

/// Default number of events between snapshots.
pub const SNAPSHOT_INTERVAL: u64 = 500;

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    /// The first sequence number that could not be read or applied.
    #[error("corrupt log at sequence {sequence}: {reason}")]
    Corrupt { sequence: u64, reason: String },
    #[error("cannot encode event {sequence}: {reason}")]
    Encode { sequence: u64, reason: String },
}

pub fn encode_event(event: &ProjectEvent) -> Result<String, LogError> {
    to_canonical_string(event).map_err(|e| LogError::Encode { sequence: event.sequence, reason: e.to_string() })
}

/// Parses log text. Blank lines are ignored; sequences must run 1, 2, 3...
pub fn parse_log(text: &str) -> Result<Vec<ProjectEvent>, LogError> {
    let events = parse_records(text)?;
    for (i, event) in events.iter().enumerate() {
        let expected = i as u64 + 1;
        if event.sequence != expected {
            return Err(LogError::Corrupt {
                sequence: expected,
                reason: format!("found sequence {} where {expected} was expected", event.sequence),
            });
        }
    }
    Ok(events)
}

/// Parses records without checking that sequences are dense. A line that is
/// not an event is reported under the sequence it should have carried.
pub fn parse_records(text: &str) -> Result<Vec<ProjectEvent>, LogError> {
    let mut events: Vec<ProjectEvent> = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let expected = events.last().map_or(1, |e| e.sequence + 1);
        let event = serde_json::from_str(line)
            .map_err(|e| LogError::Corrupt { sequence: expected, reason: e.to_string() })?;
        events.push(event);
    }
    Ok(events)
}

pub fn read_log(path: &Path) -> Result<Vec<ProjectEvent>, LogError> {
    parse_log(&read_text(path)?)
}

/// Reads a log that may have gaps, for auditing.
pub fn read_records(path: &Path) -> Result<Vec<ProjectEvent>, LogError> {
    parse_records(&read_text(path)?)
}

fn read_text(path: &Path) -> Result<String, LogError> {
    let mut text = String::new();
    for line in BufReader::new(fs::File::open(path)?).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    Ok(text)
}

pub fn render_log(events: &[ProjectEvent]) -> Result<String, LogError> {
    let mut out = String::new();
    for e in events {
        out.push_str(&encode_event(e)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_log(path: &Path, events: &[ProjectEvent]) -> Result<(), LogError> {
    let text = render_log(events)?;
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    f.sync_all()?;
    Ok(())
}

/// Appends events to an existing log file.
pub fn append_events(path: &Path, events: &[ProjectEvent]) -> Result<(), LogError> {
    let text = render_log(events)?;
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Folds a log, mapping apply failures to the sequence that failed.
pub fn fold(events: &[ProjectEvent]) -> Result<ProjectState, LogError> {
    ProjectState::replay(events)
        .map_err(|e| LogError::Corrupt { sequence: e.sequence, reason: e.to_string() })
}

/// Folded state as of `state.last_sequence`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Snapshot {
    pub state: ProjectState,
}

pub fn write_snapshot(path: &Path, state: &ProjectState) -> Result<(), LogError> {
    let text = to_canonical_string(&Snapshot { state: state.clone() })
        .map_err(|e| LogError::Encode { sequence: state.last_sequence, reason: e.to_string() })?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, LogError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| LogError::Corrupt { sequence: 0, reason: format!("snapshot: {e}") })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{ClientId, LogicalTime, WorkerId};
    use crate::scheduler::AssignmentPolicy;
    use crate::workflow::Project;

    fn small_project() -> Project {
        let mut p = Project::create(
            ClientId("c".into()),
            fixtures::todo_request(),
            AssignmentPolicy::default(),
            LogicalTime::ZERO,
        )
        .unwrap();
        p.fetch(&WorkerId::new("w1"), LogicalTime(5)).unwrap();
        p
    }

    #[test]
    fn round_trip_reproduces_state() {
        let p = small_project();
        let text = render_log(p.events()).unwrap();
        assert_eq!(text.lines().count(), p.events().len());
        let events = parse_log(&text).unwrap();
        assert_eq!(events, p.events());
        assert_eq!(&fold(&events).unwrap(), p.state());
        assert_eq!(render_log(&events).unwrap(), text);
    }

    #[test]
    fn empty_log_is_empty_state() {
        let events = parse_log("").unwrap();
        assert!(events.is_empty());
        assert_eq!(fold(&events).unwrap(), ProjectState::default());
    }

    #[test]
    fn garbage_names_first_bad_sequence() {
        let p = small_project();
        let mut lines: Vec<String> = render_log(p.events()).unwrap().lines().map(String::from).collect();
        lines[4] = "{not json".into();
        match parse_log(&lines.join("\n")) {
            Err(LogError::Corrupt { sequence, .. }) => assert_eq!(sequence, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gap_names_missing_sequence() {
        let p = small_project();
        let mut lines: Vec<String> = render_log(p.events()).unwrap().lines().map(String::from).collect();
        lines.remove(2);
        match parse_log(&lines.join("\n")) {
            Err(LogError::Corrupt { sequence, .. }) => assert_eq!(sequence, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let p = small_project();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.json");
        write_snapshot(&path, p.state()).unwrap();
        let snap = read_snapshot(&path).unwrap();
        assert_eq!(&snap.state, p.state());
        let resumed = Project::from_snapshot(snap.state, p.events().to_vec()).unwrap();
        assert_eq!(resumed.state(), p.state());
    }
}
