//! Manufactures multi-party streams and instruction-format training pairs
//! from thread-labeled corpora.
//!
//! Labeled threads are partitioned into random groups, each group is
//! interleaved into a single shuffled stream that preserves within-thread
//! order, and every (shuffled, thread-grouped) pair is rendered into the
//! `<s>[INST]...[/INST]...</s>` instruction template.
//!
//! All randomness flows through PCG-64 so a (corpus, seed) pair reproduces
//! byte-identical output on any platform. Each group gets its own generator
//! stream derived from (seed, group index).

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::corpus::{group_by_thread, Corpus, Message};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InterleaveConfig {
    pub seed: u64,
    pub min_group: usize,
    pub max_group: usize,
}

impl Default for InterleaveConfig {
    fn default() -> Self {
        InterleaveConfig {
            seed: 0,
            min_group: 1,
            max_group: 5,
        }
    }
}

impl InterleaveConfig {
    fn validate(&self) -> Result<()> {
        if self.min_group < 1 || self.min_group > self.max_group {
            return Err(Error::InvalidArgument(format!(
                "require 1 <= min_group <= max_group, got [{}, {}]",
                self.min_group, self.max_group
            )));
        }
        Ok(())
    }
}

/// One shuffled-stream / grouped-target pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub unsorted: Vec<String>,
    pub sorted: Vec<String>,
    pub rendered: String,
}

/// Splits labels into disjoint random groups of size in
/// [min_group, max_group]; a short remainder forms a final smaller group.
pub fn partition_threads(
    labels: &[String],
    rng: &mut impl Rng,
    cfg: &InterleaveConfig,
) -> Result<Vec<Vec<String>>> {
    cfg.validate()?;
    if labels.is_empty() {
        return Err(Error::EmptyInput("thread label list".into()));
    }
    let mut pool: Vec<String> = labels.to_vec();
    pool.shuffle(rng);
    let mut subsets = Vec::new();
    let mut start = 0;
    while start < pool.len() {
        let want = rng.gen_range(cfg.min_group..=cfg.max_group);
        let end = (start + want).min(pool.len());
        subsets.push(pool[start..end].to_vec());
        start = end;
    }
    Ok(subsets)
}

/// Merges the subset's threads into one stream: repeatedly pick a random
/// non-exhausted thread and pop its first message. Within-thread order is
/// preserved.
pub fn interleave_subset(
    groups: &IndexMap<String, Vec<Message>>,
    subset: &[String],
    rng: &mut impl Rng,
) -> Result<Vec<Message>> {
    let mut queues: Vec<(usize, &[Message])> = Vec::with_capacity(subset.len());
    for label in subset {
        let msgs = groups
            .get(label)
            .filter(|m| !m.is_empty())
            .ok_or_else(|| Error::EmptyInput(format!("thread {label:?} has no messages")))?;
        queues.push((0, msgs.as_slice()));
    }
    let total: usize = queues.iter().map(|(_, m)| m.len()).sum();
    let mut out = Vec::with_capacity(total);
    let mut live: Vec<usize> = (0..queues.len()).collect();
    while !live.is_empty() {
        let pick = rng.gen_range(0..live.len());
        let qi = live[pick];
        let (cursor, msgs) = &mut queues[qi];
        out.push(msgs[*cursor].clone());
        *cursor += 1;
        if *cursor == msgs.len() {
            live.remove(pick);
        }
    }
    Ok(out)
}

/// Renders the instruction template:
/// `<s>[INST]{unsorted}[/INST]{sorted}</s>`, texts joined with `\n`.
pub fn format_training_pair(unsorted: &[String], sorted: &[String]) -> Result<String> {
    if unsorted.is_empty() || sorted.is_empty() {
        return Err(Error::EmptyInput("training pair text list".into()));
    }
    Ok(format!(
        "<s>[INST]{}[/INST]{}</s>",
        unsorted.join("\n"),
        sorted.join("\n")
    ))
}

/// Runs the full dataset construction over a labeled corpus.
///
/// The `sorted` target groups each subset's messages by thread, threads
/// ordered by first appearance in the shuffled stream, original order within
/// each thread.
pub fn build_dataset(corpus: &Corpus, cfg: &InterleaveConfig) -> Result<Vec<TrainingPair>> {
    cfg.validate()?;
    let groups = group_by_thread(corpus)?;
    let labels: Vec<String> = groups.keys().cloned().collect();
    if labels.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = Pcg64::seed_from_u64(cfg.seed);
    let subsets = partition_threads(&labels, &mut rng, cfg)?;
    let mut pairs = Vec::with_capacity(subsets.len());
    for (idx, subset) in subsets.iter().enumerate() {
        let mut subset_rng = subset_rng(cfg.seed, idx);
        let stream = interleave_subset(&groups, subset, &mut subset_rng)?;
        let unsorted: Vec<String> = stream.iter().map(|m| m.text.clone()).collect();
        let sorted = grouped_target(&stream);
        let rendered = format_training_pair(&unsorted, &sorted)?;
        pairs.push(TrainingPair {
            unsorted,
            sorted,
            rendered,
        });
    }
    Ok(pairs)
}

/// Independent per-subset generator stream.
fn subset_rng(seed: u64, subset_index: usize) -> Pcg64 {
    Pcg64::seed_from_u64(seed ^ (subset_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn grouped_target(stream: &[Message]) -> Vec<String> {
    let mut by_thread: IndexMap<&str, Vec<&str>> = IndexMap::new();
    for m in stream {
        let label = m.thread_id.as_deref().unwrap_or_default();
        by_thread.entry(label).or_default().push(&m.text);
    }
    by_thread
        .values()
        .flatten()
        .map(|t| t.to_string())
        .collect()
}
