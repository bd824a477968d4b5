use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::{read_table, IoError};
use crate::time::Seconds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterventionKind {
    HoldConfirm,
    Cancel,
    Restore,
    ShortTurnNote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionEntry {
    pub entry_id: u64,
    pub kind: InterventionKind,
    pub trip_id: String,
    pub stop: Option<usize>,
    pub instructed_hold: Option<Seconds>,
    /// Departure the supervisor communicated, for hold confirmations.
    pub instructed_departure: Option<Seconds>,
    pub scheduled_departure: Option<Seconds>,
    pub driver_id: Option<String>,
    pub actor: String,
    /// Service clock at receipt.
    pub timestamp: Seconds,
    pub note: Option<String>,
}

/// Append-only record of supervisor actions. Entry ids start at 1.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionLog {
    entries: Vec<InterventionEntry>,
}

impl InterventionLog {
    /// Appends an entry, assigning the next id, and returns a copy.
    pub fn append(&mut self, mut entry: InterventionEntry) -> InterventionEntry {
        entry.entry_id = self.entries.len() as u64 + 1;
        self.entries.push(entry.clone());
        entry
    }

    pub fn entries(&self) -> &[InterventionEntry] {
        &self.entries
    }

    /// Entries with an id greater than `since`.
    pub fn since(&self, since: u64) -> &[InterventionEntry] {
        let start = (since as usize).min(self.entries.len());
        &self.entries[start..]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub const INTERVENTION_COLUMNS: [&str; 11] = [
    "entry_id",
    "kind",
    "trip_id",
    "stop",
    "instructed_hold",
    "instructed_departure",
    "scheduled_departure",
    "driver_id",
    "actor",
    "timestamp",
    "note",
];

pub fn write_interventions(path: &Path, entries: &[InterventionEntry]) -> Result<(), IoError> {
    let io = |source| IoError::Io { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    for e in entries {
        w.serialize(e).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

pub fn read_interventions(path: &Path) -> Result<Vec<InterventionEntry>, IoError> {
    read_table(path, &INTERVENTION_COLUMNS, &[])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(kind: InterventionKind) -> InterventionEntry {
        InterventionEntry {
            entry_id: 0,
            kind,
            trip_id: "T1".into(),
            stop: Some(0),
            instructed_hold: Some(60),
            instructed_departure: Some(25_260),
            scheduled_departure: Some(25_200),
            driver_id: Some("D1".into()),
            actor: "sup".into(),
            timestamp: 25_000,
            note: None,
        }
    }

    #[test]
    fn ids_are_sequential_and_since_pages() {
        let mut log = InterventionLog::default();
        for kind in [InterventionKind::HoldConfirm, InterventionKind::Cancel, InterventionKind::Restore] {
            log.append(entry(kind));
        }
        let ids: Vec<u64> = log.entries().iter().map(|e| e.entry_id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        assert_eq!(log.since(1).len(), 2);
        assert_eq!(log.since(1)[0].entry_id, 2);
        assert!(log.since(9).is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let mut log = InterventionLog::default();
        log.append(entry(InterventionKind::HoldConfirm));
        let mut note = entry(InterventionKind::ShortTurnNote);
        note.instructed_hold = None;
        note.driver_id = None;
        note.note = Some("short-turned at stop 4".into());
        log.append(note);
        write_interventions(&path, log.entries()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("entry_id,kind,trip_id,stop,"));
        assert!(text.contains("hold-confirm") && text.contains("short-turn-note"));
        assert_eq!(read_interventions(&path).unwrap(), log.entries());
    }
}
