//! Message data model and line-delimited JSON IO.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One chat utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: String,
    /// Milliseconds since epoch.
    pub ts: i64,
    pub speaker: String,
    pub text: String,
    /// Gold conversation label, present in labeled corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thread_id: Option<String>,
}

impl Message {
    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidMessage {
                id: self.id.clone(),
                reason: "empty id".into(),
            });
        }
        if self.text.trim().is_empty() {
            return Err(Error::InvalidMessage {
                id: self.id.clone(),
                reason: "empty text".into(),
            });
        }
        if self.ts < 0 {
            return Err(Error::InvalidMessage {
                id: self.id.clone(),
                reason: format!("negative timestamp {}", self.ts),
            });
        }
        Ok(())
    }
}

/// Messages sorted ascending by (timestamp, id).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    messages: Vec<Message>,
}

impl Corpus {
    /// Builds a corpus from unordered messages, sorting and checking id uniqueness.
    pub fn new(mut messages: Vec<Message>) -> Result<Self> {
        for m in &messages {
            m.validate()?;
        }
        messages.sort_by(|a, b| (a.ts, &a.id).cmp(&(b.ts, &b.id)));
        let mut seen = std::collections::HashSet::new();
        for m in &messages {
            if !seen.insert(m.id.as_str()) {
                return Err(Error::DuplicateId(m.id.clone()));
            }
        }
        Ok(Corpus { messages })
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Message> {
        self.messages.iter()
    }
}

/// Result of one online assignment decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub message_id: String,
    pub predicted_thread: String,
    pub decision: Decision,
    /// Minimum candidate perplexity at decision time. `None` when the store
    /// had no candidate threads (the min is vacuously infinite).
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "new")]
    NewThread,
    #[serde(rename = "append")]
    Appended,
}

/// Loads line-delimited JSON messages in file order, without sorting.
pub fn load_messages(path: impl AsRef<Path>) -> Result<Vec<Message>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let reader = BufReader::new(file);
    let mut messages = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let msg: Message = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: display.clone(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        msg.validate()?;
        messages.push(msg);
    }
    Ok(messages)
}

/// Loads a line-delimited JSON corpus, sorted by (timestamp, id).
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    Corpus::new(load_messages(path)?)
}

/// Writes a corpus back out, one JSON object per line.
pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let display = path.as_ref().display().to_string();
    let mut file = std::fs::File::create(path.as_ref()).map_err(|e| Error::io(&display, e))?;
    for m in corpus.iter() {
        serde_json::to_writer(&mut file, m)?;
        file.write_all(b"\n").map_err(|e| Error::io(&display, e))?;
    }
    Ok(())
}

/// Groups a fully-labeled corpus by gold thread id, preserving corpus order
/// within each group and group order by first appearance.
pub fn group_by_thread(corpus: &Corpus) -> Result<IndexMap<String, Vec<Message>>> {
    let mut groups: IndexMap<String, Vec<Message>> = IndexMap::new();
    for m in corpus.iter() {
        let label = m
            .thread_id
            .as_ref()
            .ok_or_else(|| Error::MissingThreadLabel(m.id.clone()))?;
        groups.entry(label.clone()).or_default().push(m.clone());
    }
    Ok(groups)
}

/// Writes assignment records, one JSON object per line.
pub fn write_assignments(records: &[AssignmentRecord], path: impl AsRef<Path>) -> Result<()> {
    let display = path.as_ref().display().to_string();
    let mut file = std::fs::File::create(path.as_ref()).map_err(|e| Error::io(&display, e))?;
    for r in records {
        serde_json::to_writer(&mut file, r)?;
        file.write_all(b"\n").map_err(|e| Error::io(&display, e))?;
    }
    Ok(())
}

/// Loads assignment records written by [`write_assignments`].
pub fn load_assignments(path: impl AsRef<Path>) -> Result<Vec<AssignmentRecord>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AssignmentRecord =
            serde_json::from_str(&line).map_err(|e| Error::Malformed {
                path: display.clone(),
                line: idx + 1,
                reason: e.to_string(),
            })?;
        records.push(rec);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    pub(crate) fn msg(id: &str, ts: i64, text: &str, thread: Option<&str>) -> Message {
        Message {
            id: id.into(),
            ts,
            speaker: "s".into(),
            text: text.into(),
            thread_id: thread.map(Into::into),
        }
    }

    #[test]
    fn load_sorts_by_timestamp_then_id() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"m3","ts":30,"speaker":"a","text":"three"}}"#).unwrap();
        writeln!(f, r#"{{"id":"m1","ts":10,"speaker":"a","text":"one"}}"#).unwrap();
        writeln!(f, r#"{{"id":"m2","ts":20,"speaker":"b","text":"two"}}"#).unwrap();
        let c = load_corpus(f.path()).unwrap();
        let ids: Vec<_> = c.iter().map(|m| m.id.as_str()).collect();
        assert_eq!(ids, ["m1", "m2", "m3"]);
    }

    #[test]
    fn load_empty_file_gives_empty_corpus() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let c = load_corpus(f.path()).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn duplicate_id_rejected_by_name() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"m1","ts":1,"speaker":"a","text":"x"}}"#).unwrap();
        writeln!(f, r#"{{"id":"m2","ts":2,"speaker":"a","text":"y"}}"#).unwrap();
        writeln!(f, r#"{{"id":"m1","ts":3,"speaker":"a","text":"z"}}"#).unwrap();
        let err = load_corpus(f.path()).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(ref id) if id == "m1"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"m1","ts":1,"speaker":"a","text":"x"}}"#).unwrap();
        writeln!(f, "not json").unwrap();
        let err = load_corpus(f.path()).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }));
    }

    #[test]
    fn tie_on_timestamp_breaks_on_id() {
        let c = Corpus::new(vec![
            msg("b", 5, "x", None),
            msg("a", 5, "y", None),
        ])
        .unwrap();
        let ids: Vec<_> = c.iter().map(|m| m.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn group_by_thread_partitions_in_order() {
        let c = Corpus::new(vec![
            msg("m1", 1, "x", Some("A")),
            msg("m2", 2, "y", Some("B")),
            msg("m3", 3, "z", Some("A")),
        ])
        .unwrap();
        let g = group_by_thread(&c).unwrap();
        assert_eq!(g["A"].iter().map(|m| &m.id).collect::<Vec<_>>(), ["m1", "m3"]);
        assert_eq!(g["B"].len(), 1);
        let total: usize = g.values().map(|v| v.len()).sum();
        assert_eq!(total, c.len());
    }

    #[test]
    fn group_by_thread_rejects_unlabeled() {
        let c = Corpus::new(vec![msg("m1", 1, "x", Some("A")), msg("m2", 2, "y", None)]).unwrap();
        let err = group_by_thread(&c).unwrap_err();
        assert!(matches!(err, Error::MissingThreadLabel(ref id) if id == "m2"));
    }

    #[test]
    fn assignments_round_trip() {
        let recs = vec![
            AssignmentRecord {
                message_id: "m1".into(),
                predicted_thread: "t0".into(),
                decision: Decision::NewThread,
                score: None,
            },
            AssignmentRecord {
                message_id: "m2".into(),
                predicted_thread: "t0".into(),
                decision: Decision::Appended,
                score: Some(12.34),
            },
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_assignments(&recs, f.path()).unwrap();
        let back = load_assignments(f.path()).unwrap();
        assert_eq!(recs, back);
    }

    #[test]
    fn corpus_round_trip_preserves_fields() {
        let c = Corpus::new(vec![
            msg("m1", 1, "hello there", Some("A")),
            msg("m2", 2, "general", None),
        ])
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_corpus(&c, f.path()).unwrap();
        let back = load_corpus(f.path()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let err = write_assignments(&[], "/nonexistent-dir/out.jsonl").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
