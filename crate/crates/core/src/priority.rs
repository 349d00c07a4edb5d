//! Keyword-weighted, time-decayed thread prioritization.
//!
//! A thread's dynamic priority is `keyword_weight + alpha * (now - request_ts)`.
//! Because the `now` term is common to every entry, pairwise order is
//! invariant in time and the static key `keyword_weight - alpha * request_ts`
//! sorts identically at every instant. The queue therefore never needs
//! periodic rekeying.

use std::collections::HashMap;
use std::path::Path;

use crate::lm_core::tokenize;
use crate::{Error, Result};

/// Lowercased single-token urgency keywords mapped to positive weights.
#[derive(Debug, Clone, Default)]
pub struct WeightTable {
    entries: HashMap<String, f64>,
}

impl WeightTable {
    pub fn new(entries: HashMap<String, f64>) -> Result<Self> {
        for (kw, w) in &entries {
            if *w <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "keyword {kw:?} has non-positive weight {w}"
                )));
            }
            let toks = tokenize(kw);
            if toks.len() != 1 || toks[0] != *kw {
                return Err(Error::InvalidArgument(format!(
                    "keyword {kw:?} is not a single lowercase token"
                )));
            }
        }
        Ok(WeightTable { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let display = path.as_ref().display().to_string();
        let data = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&display, e))?;
        let entries: HashMap<String, f64> = serde_json::from_str(&data)?;
        Self::new(entries)
    }

    pub fn get(&self, token: &str) -> f64 {
        self.entries.get(token).copied().unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Sum of configured weights over all tokens of a text; repeated
/// occurrences count repeatedly.
pub fn text_weight(text: &str, table: &WeightTable) -> f64 {
    tokenize(text).iter().map(|t| table.get(t)).sum()
}

/// Keyword weight of a whole thread: the joined entry text (topic header
/// included) scored token by token.
pub fn thread_weight(thread: &crate::disentangle::Thread, table: &WeightTable) -> f64 {
    text_weight(&thread.joined_text("\n", false), table)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PriorityEntry {
    pub thread_id: String,
    pub keyword_weight: f64,
    pub request_ts: i64,
    /// Static sort key, equivalent in order to the dynamic priority.
    pub key: f64,
}

impl PriorityEntry {
    pub fn new(thread_id: String, keyword_weight: f64, request_ts: i64, alpha: f64) -> Self {
        let key = keyword_weight - alpha * request_ts as f64 / 1000.0;
        PriorityEntry {
            thread_id,
            keyword_weight,
            request_ts,
            key,
        }
    }

    /// Dynamic priority at an explicit instant; same ordering as `key`.
    pub fn dynamic_priority(&self, now_ms: i64, alpha: f64) -> f64 {
        self.keyword_weight + alpha * (now_ms - self.request_ts) as f64 / 1000.0
    }
}

/// Max-key queue with upsert. Ties break by earlier request_ts, then
/// lexicographic thread id.
///
/// Backed by a lazy binary heap: upserts push a fresh versioned entry and
/// pops skip stale versions.
#[derive(Debug, Default, Clone)]
pub struct PriorityQueue {
    heap: std::collections::BinaryHeap<HeapItem>,
    live: HashMap<String, (u64, PriorityEntry)>,
    version: u64,
}

#[derive(Debug, Clone)]
struct HeapItem {
    key: f64,
    request_ts: i64,
    thread_id: String,
    version: u64,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key
            .total_cmp(&other.key)
            .then_with(|| other.request_ts.cmp(&self.request_ts))
            .then_with(|| other.thread_id.cmp(&self.thread_id))
    }
}

impl PriorityQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn contains(&self, thread_id: &str) -> bool {
        self.live.contains_key(thread_id)
    }

    pub fn get(&self, thread_id: &str) -> Option<&PriorityEntry> {
        self.live.get(thread_id).map(|(_, e)| e)
    }

    /// Inserts or replaces the entry for a thread; ordering reflects the
    /// new key immediately.
    pub fn upsert(&mut self, entry: PriorityEntry) {
        self.version += 1;
        self.heap.push(HeapItem {
            key: entry.key,
            request_ts: entry.request_ts,
            thread_id: entry.thread_id.clone(),
            version: self.version,
        });
        self.live
            .insert(entry.thread_id.clone(), (self.version, entry));
    }

    pub fn remove(&mut self, thread_id: &str) -> Option<PriorityEntry> {
        self.live.remove(thread_id).map(|(_, e)| e)
    }

    /// Removes and returns the maximal-key entry.
    pub fn pop_head(&mut self) -> Result<PriorityEntry> {
        while let Some(item) = self.heap.pop() {
            match self.live.get(&item.thread_id) {
                Some((v, _)) if *v == item.version => {
                    let (_, entry) = self.live.remove(&item.thread_id).expect("checked");
                    return Ok(entry);
                }
                _ => continue, // stale version
            }
        }
        Err(Error::EmptyQueue)
    }

    pub fn entries(&self) -> impl Iterator<Item = &PriorityEntry> {
        self.live.values().map(|(_, e)| e)
    }
}
