//! End-to-end orchestration: per-message detection, topic compression and
//! priority upkeep on arrival; bounded-prompt response generation on demand.
//!
//! The two paths are strictly separated: message processing never invokes
//! the generator.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::{AssignmentRecord, Corpus, Message};
use crate::disentangle::{assign_message, DetectionConfig, Thread, ThreadStore};
use crate::evalharness::{evaluate, ClusteringMetrics, Labeling};
use crate::lm_core::LanguageModelScorer;
use crate::priority::{thread_weight, PriorityEntry, PriorityQueue, WeightTable};
use crate::topic::maybe_compress;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub detection: DetectionConfig,
    /// Time-decay coefficient, per second.
    pub alpha: f64,
    /// Prompt message budget.
    pub last_n: usize,
    pub max_tokens: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            detection: DetectionConfig::default(),
            alpha: 0.01,
            last_n: 5,
            max_tokens: 128,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.detection.validate()?;
        if self.last_n < 1 || self.last_n > self.detection.max_len {
            return Err(Error::InvalidArgument(format!(
                "require 1 <= last_n <= max_len, got last_n={} max_len={}",
                self.last_n, self.detection.max_len
            )));
        }
        if self.alpha < 0.0 {
            return Err(Error::InvalidArgument("alpha must be >= 0".into()));
        }
        Ok(())
    }
}

/// One generated response, with the prompt that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseEvent {
    pub thread_id: String,
    pub prompt: String,
    pub response: String,
    pub popped_key: f64,
    pub wall_time: Duration,
}

/// Topic header (if any) plus the last `last_n` messages, oldest first.
pub fn build_prompt(thread: &Thread, last_n: usize, separator: &str) -> Result<String> {
    if thread.topic.is_none() && thread.messages.is_empty() {
        return Err(Error::EmptyInput(format!("thread {} is empty", thread.id)));
    }
    let start = thread.messages.len().saturating_sub(last_n);
    let mut parts = Vec::with_capacity(last_n + 1);
    if let Some(t) = &thread.topic {
        parts.push(t.clone());
    }
    for m in &thread.messages[start..] {
        parts.push(m.text.clone());
    }
    Ok(parts.join(separator))
}

#[derive(Debug, Clone)]
pub struct PipelineState {
    pub store: ThreadStore,
    pub queue: PriorityQueue,
    pub weights: WeightTable,
    pub config: PipelineConfig,
}

/// Queue-side effect of processing one message.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueUpdate {
    pub thread_id: String,
    pub key: f64,
    pub compressed: bool,
}

impl PipelineState {
    pub fn new(config: PipelineConfig, weights: WeightTable) -> Result<Self> {
        config.validate()?;
        Ok(PipelineState {
            store: ThreadStore::new(),
            queue: PriorityQueue::new(),
            weights,
            config,
        })
    }

    /// Detection path: assign, compress if over budget, reweight, upsert.
    /// On any failure the state equals the pre-message snapshot. Never
    /// calls the generator.
    pub fn process_message(
        &mut self,
        scorer: &dyn LanguageModelScorer,
        message: &Message,
    ) -> Result<(AssignmentRecord, QueueUpdate)> {
        let snapshot = (self.store.clone(), self.queue.clone());
        match self.process_inner(scorer, message) {
            Ok(out) => Ok(out),
            Err(e) => {
                self.store = snapshot.0;
                self.queue = snapshot.1;
                Err(e)
            }
        }
    }

    fn process_inner(
        &mut self,
        scorer: &dyn LanguageModelScorer,
        message: &Message,
    ) -> Result<(AssignmentRecord, QueueUpdate)> {
        let record = assign_message(&mut self.store, scorer, message, &self.config.detection)?;
        let alpha = self.config.alpha;
        let max_len = self.config.detection.max_len;
        let topic_cfg = self.config.detection.topic.clone();
        let weights = &self.weights;
        let thread = self
            .store
            .get_mut(&record.predicted_thread)
            .expect("assigned thread exists");
        let compressed = maybe_compress(thread, max_len, &topic_cfg)?;
        thread.weight = thread_weight(thread, weights);
        let entry = PriorityEntry::new(
            thread.id.clone(),
            thread.weight,
            thread.request_ts.unwrap_or(message.ts),
            alpha,
        );
        let update = QueueUpdate {
            thread_id: entry.thread_id.clone(),
            key: entry.key,
            compressed,
        };
        self.queue.upsert(entry);
        Ok((record, update))
    }

    /// Response path: pop the most urgent thread, build its bounded prompt,
    /// generate. On generator failure the popped entry is reinserted with
    /// its original key.
    pub fn respond_next(&mut self, generator: &dyn LanguageModelScorer) -> Result<ResponseEvent> {
        let entry = self.queue.pop_head()?;
        let thread = self
            .store
            .get(&entry.thread_id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown thread {}", entry.thread_id)))?;
        let prompt = build_prompt(thread, self.config.last_n, &self.config.detection.join_separator)?;
        let started = Instant::now();
        match generator.generate(&prompt, self.config.max_tokens) {
            Ok(response) => {
                let wall_time = started.elapsed();
                let popped_key = entry.key;
                let thread_id = entry.thread_id;
                if let Some(t) = self.store.get_mut(&thread_id) {
                    t.request_ts = None; // answered; re-queues on next message
                }
                Ok(ResponseEvent {
                    thread_id,
                    prompt,
                    response,
                    popped_key,
                    wall_time,
                })
            }
            Err(e) => {
                self.queue.upsert(entry);
                Err(e)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutput {
    pub assignments: Vec<AssignmentRecord>,
    pub responses: Vec<ResponseEvent>,
    /// Present when every input message carried a gold label.
    pub metrics: Option<ClusteringMetrics>,
    pub detect_time: Duration,
    pub respond_time: Duration,
}

/// Offline driver: replays a corpus through the detection path, then drains
/// the queue through the response path.
pub fn run_batch(
    corpus: &Corpus,
    config: &PipelineConfig,
    weights: WeightTable,
    scorer: &dyn LanguageModelScorer,
    generator: &dyn LanguageModelScorer,
) -> Result<RunOutput> {
    let mut state = PipelineState::new(config.clone(), weights)?;
    let mut assignments = Vec::with_capacity(corpus.len());
    let detect_started = Instant::now();
    for message in corpus.iter() {
        let (record, _) = state.process_message(scorer, message)?;
        assignments.push(record);
    }
    let detect_time = detect_started.elapsed();

    let respond_started = Instant::now();
    let mut responses = Vec::new();
    while !state.queue.is_empty() {
        responses.push(state.respond_next(generator)?);
    }
    let respond_time = respond_started.elapsed();

    let metrics = if !corpus.is_empty() && corpus.iter().all(|m| m.thread_id.is_some()) {
        let gold: Labeling = corpus
            .iter()
            .map(|m| (m.id.clone(), m.thread_id.clone().unwrap()))
            .collect();
        let predicted: Labeling = assignments
            .iter()
            .map(|r| (r.message_id.clone(), r.predicted_thread.clone()))
            .collect();
        Some(evaluate(&predicted, &gold)?)
    } else {
        None
    };

    Ok(RunOutput {
        assignments,
        responses,
        metrics,
        detect_time,
        respond_time,
    })
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    version: u32,
    threads: Vec<Thread>,
    queue: Vec<PriorityEntry>,
}

/// Persists threads and queue so `respond` can run after `detect`.
pub fn save_state(state: &PipelineState, path: impl AsRef<std::path::Path>) -> Result<()> {
    let file = StateFile {
        version: 1,
        threads: state.store.threads().to_vec(),
        queue: {
            let mut q: Vec<PriorityEntry> = state.queue.entries().cloned().collect();
            q.sort_by(|a, b| a.thread_id.cmp(&b.thread_id));
            q
        },
    };
    let display = path.as_ref().display().to_string();
    let json = serde_json::to_string_pretty(&file)?;
    std::fs::write(path.as_ref(), json).map_err(|e| Error::io(&display, e))
}

pub fn load_state(
    path: impl AsRef<std::path::Path>,
    config: PipelineConfig,
    weights: WeightTable,
) -> Result<PipelineState> {
    config.validate()?;
    let display = path.as_ref().display().to_string();
    let data = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&display, e))?;
    let file: StateFile = serde_json::from_str(&data)?;
    if file.version != 1 {
        return Err(Error::InvalidArgument(format!(
            "unsupported state file version {}",
            file.version
        )));
    }
    let mut queue = PriorityQueue::new();
    for entry in file.queue {
        queue.upsert(entry);
    }
    Ok(PipelineState {
        store: ThreadStore::from_threads(file.threads),
        queue,
        weights,
        config,
    })
}
