//! Online thread assignment: each incoming message joins the live thread
//! with minimum perplexity, or opens a new thread when the minimum exceeds
//! the threshold.

use serde::{Deserialize, Serialize};

use crate::corpus::{AssignmentRecord, Decision, Message};
use crate::lm_core::{tokenize, LanguageModelScorer};
use crate::topic::{maybe_compress, TopicConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// New-thread perplexity threshold. Must exceed 1; PPL below 1 is
    /// impossible, so lower thresholds force every message into a new thread.
    pub threshold: f64,
    /// Message count above which a thread gets a topic header.
    pub max_len: usize,
    pub join_separator: String,
    /// Prefix each entry with `speaker:` in the scoring join.
    pub speaker_prefix: bool,
    /// Score only the candidate message's tokens given the thread as
    /// context, instead of the full join. Off by default.
    pub conditional: bool,
    pub topic: TopicConfig,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            threshold: 1e9,
            max_len: 10,
            join_separator: "\n".into(),
            speaker_prefix: false,
            conditional: false,
            topic: TopicConfig::default(),
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold <= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "threshold must be > 1, got {}",
                self.threshold
            )));
        }
        if self.max_len < 1 {
            return Err(Error::InvalidArgument("max_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// One live conversation thread.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Thread {
    pub id: String,
    /// Compact topic header, present once the thread has been compressed.
    pub topic: Option<String>,
    pub messages: Vec<Message>,
    /// Timestamp of the oldest message not yet responded to.
    pub request_ts: Option<i64>,
    /// Keyword weight, maintained by the priority layer.
    pub weight: f64,
}

impl Thread {
    fn new(id: String, first: Message) -> Self {
        let request_ts = Some(first.ts);
        Thread {
            id,
            topic: None,
            messages: vec![first],
            request_ts,
            weight: 0.0,
        }
    }

    /// Entries in scoring order: the topic header (if any) then messages.
    pub fn entry_texts(&self, speaker_prefix: bool) -> Vec<String> {
        let mut out = Vec::with_capacity(self.messages.len() + 1);
        if let Some(t) = &self.topic {
            out.push(t.clone());
        }
        for m in &self.messages {
            if speaker_prefix {
                out.push(format!("{}: {}", m.speaker, m.text));
            } else {
                out.push(m.text.clone());
            }
        }
        out
    }

    pub fn joined_text(&self, separator: &str, speaker_prefix: bool) -> String {
        self.entry_texts(speaker_prefix).join(separator)
    }
}

/// Live threads in creation order.
#[derive(Debug, Clone, Default)]
pub struct ThreadStore {
    threads: Vec<Thread>,
    next_id: usize,
}

impl ThreadStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn threads(&self) -> &[Thread] {
        &self.threads
    }

    pub fn get(&self, id: &str) -> Option<&Thread> {
        self.threads.iter().find(|t| t.id == id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Thread> {
        self.threads.iter_mut().find(|t| t.id == id)
    }

    pub fn total_messages(&self) -> usize {
        self.threads.iter().map(|t| t.messages.len()).sum()
    }

    /// Restores a store from persisted threads (snapshot loading).
    pub fn from_threads(threads: Vec<Thread>) -> Self {
        let next_id = threads
            .iter()
            .filter_map(|t| t.id.strip_prefix('t').and_then(|n| n.parse::<usize>().ok()))
            .map(|n| n + 1)
            .max()
            .unwrap_or(0);
        ThreadStore { threads, next_id }
    }

    pub fn into_threads(self) -> Vec<Thread> {
        self.threads
    }

    fn fresh_id(&mut self) -> String {
        let id = format!("t{}", self.next_id);
        self.next_id += 1;
        id
    }
}

/// Perplexity of the thread's entries joined with the candidate message.
pub fn score_candidate(
    scorer: &dyn LanguageModelScorer,
    thread: &Thread,
    message: &Message,
    cfg: &DetectionConfig,
) -> Result<f64> {
    let mut parts = thread.entry_texts(cfg.speaker_prefix);
    if parts.is_empty() {
        return Err(Error::EmptyInput(format!("thread {} has no entries", thread.id)));
    }
    let context = parts.join(&cfg.join_separator);
    let msg_text = if cfg.speaker_prefix {
        format!("{}: {}", message.speaker, message.text)
    } else {
        message.text.clone()
    };
    parts.push(msg_text);
    let full = parts.join(&cfg.join_separator);
    let full_score = scorer.perplexity(&full)?;
    if !cfg.conditional {
        return Ok(full_score.value);
    }
    // Conditional mode: perplexity of just the candidate tokens given the
    // thread, from the difference of the two joint log-probs.
    let ctx_score = scorer.perplexity(&context)?;
    let n_full = tokenize(&full).len();
    let n_ctx = tokenize(&context).len();
    let n_msg = n_full.saturating_sub(n_ctx);
    if n_msg == 0 {
        return Ok(full_score.value);
    }
    let lp = full_score.log_prob - ctx_score.log_prob;
    Ok((-lp / n_msg as f64).exp())
}

/// Assigns one message: append to the argmin-perplexity thread, or open a
/// new thread when the store is empty or the minimum exceeds the threshold.
/// The store is left untouched if scoring fails.
pub fn assign_message(
    store: &mut ThreadStore,
    scorer: &dyn LanguageModelScorer,
    message: &Message,
    cfg: &DetectionConfig,
) -> Result<AssignmentRecord> {
    cfg.validate()?;
    let mut best: Option<(usize, f64)> = None;
    for (idx, thread) in store.threads.iter().enumerate() {
        let score = score_candidate(scorer, thread, message, cfg)?;
        // Strict < keeps the lowest creation index on ties.
        if best.map_or(true, |(_, s)| score < s) {
            best = Some((idx, score));
        }
    }
    match best {
        Some((idx, score)) if score <= cfg.threshold => {
            let thread = &mut store.threads[idx];
            if thread.request_ts.is_none() {
                thread.request_ts = Some(message.ts);
            }
            thread.messages.push(message.clone());
            Ok(AssignmentRecord {
                message_id: message.id.clone(),
                predicted_thread: thread.id.clone(),
                decision: Decision::Appended,
                score: Some(score),
            })
        }
        other => {
            let id = store.fresh_id();
            store.threads.push(Thread::new(id.clone(), message.clone()));
            Ok(AssignmentRecord {
                message_id: message.id.clone(),
                predicted_thread: id,
                decision: Decision::NewThread,
                score: other.map(|(_, s)| s),
            })
        }
    }
}

fn check_sorted(messages: &[Message]) -> Result<()> {
    for (i, pair) in messages.windows(2).enumerate() {
        if (pair[1].ts, &pair[1].id) < (pair[0].ts, &pair[0].id) {
            return Err(Error::UnsortedCorpus(i + 1));
        }
    }
    Ok(())
}

/// Processes a timestamp-ordered stream: assignment then topic compression
/// per message. Deterministic for deterministic scorers.
pub fn detect_stream(
    messages: &[Message],
    cfg: &DetectionConfig,
    scorer: &dyn LanguageModelScorer,
) -> Result<(ThreadStore, Vec<AssignmentRecord>)> {
    cfg.validate()?;
    check_sorted(messages)?;
    let mut store = ThreadStore::new();
    let mut records = Vec::with_capacity(messages.len());
    for message in messages {
        let record = assign_message(&mut store, scorer, message, cfg)?;
        let thread = store
            .get_mut(&record.predicted_thread)
            .expect("assigned thread exists");
        maybe_compress(thread, cfg.max_len, &cfg.topic)?;
        records.push(record);
    }
    Ok((store, records))
}

/// Grid-searches the new-thread threshold on a labeled stream, maximizing
/// one-to-one accuracy. Ties go to the smaller threshold.
pub fn calibrate_threshold(
    messages: &[Message],
    cfg: &DetectionConfig,
    scorer: &dyn LanguageModelScorer,
    grid: &[f64],
) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty threshold grid".into()));
    }
    let gold: crate::evalharness::Labeling = messages
        .iter()
        .map(|m| {
            m.thread_id
                .clone()
                .map(|t| (m.id.clone(), t))
                .ok_or_else(|| Error::MissingThreadLabel(m.id.clone()))
        })
        .collect::<Result<_>>()?;
    let mut sorted_grid: Vec<f64> = grid.to_vec();
    sorted_grid.sort_by(|a, b| a.total_cmp(b));
    let mut best: Option<(f64, f64)> = None;
    for &threshold in &sorted_grid {
        if threshold <= 1.0 {
            continue;
        }
        let mut trial = cfg.clone();
        trial.threshold = threshold;
        let (_, records) = detect_stream(messages, &trial, scorer)?;
        let predicted: crate::evalharness::Labeling = records
            .iter()
            .map(|r| (r.message_id.clone(), r.predicted_thread.clone()))
            .collect();
        let acc = crate::evalharness::one_to_one_accuracy(&predicted, &gold)?;
        if best.map_or(true, |(_, b)| acc > b) {
            best = Some((threshold, acc));
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("no usable threshold in grid".into()))
}

/// Log-spaced grid over [lo, hi] with `steps` points.
pub fn log_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 {
        return vec![lo];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..steps)
        .map(|i| (llo + (lhi - llo) * i as f64 / (steps - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm_core::{NgramModel, NgramScorer, PerplexityScore};

    fn msg(id: &str, ts: i64, text: &str) -> Message {
        Message {
            id: id.into(),
            ts,
            speaker: "s".into(),
            text: text.into(),
            thread_id: None,
        }
    }

    /// Scorer assigning probability 1 to everything: PPL is always 1.
    struct Degenerate;
    impl LanguageModelScorer for Degenerate {
        fn perplexity(&self, _: &str) -> Result<PerplexityScore<f64>> {
            Ok(PerplexityScore {
                value: 1.0,
                log_prob: 0.0,
            })
        }
        fn generate(&self, _: &str, _: usize) -> Result<String> {
            Ok(String::new())
        }
    }

    struct Failing;
    impl LanguageModelScorer for Failing {
        fn perplexity(&self, _: &str) -> Result<PerplexityScore<f64>> {
            Err(Error::Scorer("down".into()))
        }
        fn generate(&self, _: &str, _: usize) -> Result<String> {
            Err(Error::Generator("down".into()))
        }
    }

    fn cfg(threshold: f64) -> DetectionConfig {
        DetectionConfig {
            threshold,
            ..Default::default()
        }
    }

    fn vocab_scorer(corpus: &[&str]) -> NgramScorer {
        let texts: Vec<String> = corpus.iter().map(|s| s.to_string()).collect();
        NgramScorer::new(NgramModel::train(&texts, 2, 0.5).unwrap(), 0)
    }

    #[test]
    fn degenerate_model_scores_one() {
        let thread = Thread::new("t0".into(), msg("m1", 1, "a b"));
        let score = score_candidate(&Degenerate, &thread, &msg("m2", 2, "a b"), &cfg(2.0)).unwrap();
        assert_eq!(score, 1.0);
    }

    #[test]
    fn score_matches_join_and_score_oracle() {
        let scorer = vocab_scorer(&["alpha alpha beta", "alpha beta alpha"]);
        let thread = Thread::new("t0".into(), msg("m1", 1, "alpha alpha"));
        let score =
            score_candidate(&scorer, &thread, &msg("m2", 2, "alpha"), &cfg(2.0)).unwrap();
        let oracle = scorer.model().score("alpha alpha\nalpha").unwrap().value;
        assert!((score - oracle).abs() < 1e-12);
    }

    #[test]
    fn empty_thread_rejected() {
        let thread = Thread {
            id: "t0".into(),
            topic: None,
            messages: vec![],
            request_ts: None,
            weight: 0.0,
        };
        assert!(score_candidate(&Degenerate, &thread, &msg("m", 1, "x"), &cfg(2.0)).is_err());
    }

    #[test]
    fn first_message_opens_thread() {
        let mut store = ThreadStore::new();
        let r = assign_message(&mut store, &Degenerate, &msg("m1", 1, "hi"), &cfg(2.0)).unwrap();
        assert_eq!(r.decision, Decision::NewThread);
        assert_eq!(r.score, None);
        assert_eq!(store.threads().len(), 1);
    }

    #[test]
    fn disjoint_vocabularies_append_to_argmin() {
        let scorer = vocab_scorer(&[
            "alpha alpha alpha alpha",
            "beta beta beta beta",
        ]);
        let config = cfg(1e9);
        let mut store = ThreadStore::new();
        assign_message(&mut store, &scorer, &msg("m1", 1, "alpha alpha"), &config).unwrap();
        // Force a distinct second thread by a strict threshold pass.
        store.threads.push(Thread::new("tb".into(), msg("m2", 2, "beta beta")));
        let r = assign_message(&mut store, &scorer, &msg("m3", 3, "alpha alpha"), &config).unwrap();
        assert_eq!(r.decision, Decision::Appended);
        assert_eq!(r.predicted_thread, "t0");
        // Oracle: recompute both candidate scores by brute force.
        let s_alpha = scorer.model().score("alpha alpha\nalpha alpha").unwrap().value;
        let s_beta = scorer.model().score("beta beta\nalpha alpha").unwrap().value;
        assert!(s_alpha < s_beta);
        assert!((r.score.unwrap() - s_alpha).abs() < 1e-12);
    }

    #[test]
    fn tight_threshold_spawns_new_threads() {
        // A near-uniform scorer: untrained model gives PPL = |V| > 1.0001.
        let model = NgramModel::with_vocab(2, 0.5, ["a".to_string(), "b".to_string()]).unwrap();
        let scorer = NgramScorer::new(model, 0);
        let config = cfg(1.0001);
        let mut store = ThreadStore::new();
        for i in 0..5 {
            let r = assign_message(
                &mut store,
                &scorer,
                &msg(&format!("m{i}"), i, "a b"),
                &config,
            )
            .unwrap();
            assert_eq!(r.decision, Decision::NewThread);
            if let Some(s) = r.score {
                assert!(s > config.threshold);
            }
        }
        assert_eq!(store.threads().len(), 5);
    }

    #[test]
    fn scorer_failure_leaves_store_unmodified() {
        let mut store = ThreadStore::new();
        assign_message(&mut store, &Degenerate, &msg("m1", 1, "hi"), &cfg(2.0)).unwrap();
        let before = store.total_messages();
        let err = assign_message(&mut store, &Failing, &msg("m2", 2, "yo"), &cfg(2.0));
        assert!(err.is_err());
        assert_eq!(store.total_messages(), before);
    }

    #[test]
    fn single_message_stream() {
        let (store, records) =
            detect_stream(&[msg("m1", 1, "hello")], &cfg(2.0), &Degenerate).unwrap();
        assert_eq!(store.threads().len(), 1);
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].decision, Decision::NewThread);
    }

    #[test]
    fn unsorted_stream_rejected() {
        let msgs = vec![msg("m1", 10, "a"), msg("m2", 5, "b")];
        let err = detect_stream(&msgs, &cfg(2.0), &Degenerate).unwrap_err();
        assert!(matches!(err, Error::UnsortedCorpus(_)));
    }

    #[test]
    fn conservation_across_detection() {
        let scorer = vocab_scorer(&["red green blue", "one two three"]);
        let msgs: Vec<Message> = (0..12)
            .map(|i| msg(&format!("m{i}"), i, if i % 2 == 0 { "red green" } else { "one two" }))
            .collect();
        let (store, records) = detect_stream(&msgs, &cfg(50.0), &scorer).unwrap();
        assert_eq!(store.total_messages(), msgs.len());
        assert_eq!(records.len(), msgs.len());
    }

    #[test]
    fn threshold_monotonicity() {
        let scorer = vocab_scorer(&["red green blue red green", "one two three one two"]);
        let msgs: Vec<Message> = (0..10)
            .map(|i| msg(&format!("m{i}"), i, if i % 2 == 0 { "red green blue" } else { "one two three" }))
            .collect();
        let mut prev_threads = usize::MAX;
        for threshold in [2.0, 5.0, 20.0, 100.0, 1e6] {
            let (store, _) = detect_stream(&msgs, &cfg(threshold), &scorer).unwrap();
            assert!(store.threads().len() <= prev_threads);
            prev_threads = store.threads().len();
        }
    }

    #[test]
    fn detection_is_deterministic() {
        let scorer = vocab_scorer(&["x y z x y", "p q r p q"]);
        let msgs: Vec<Message> = (0..8)
            .map(|i| msg(&format!("m{i}"), i, if i % 2 == 0 { "x y" } else { "p q" }))
            .collect();
        let a = detect_stream(&msgs, &cfg(30.0), &scorer).unwrap().1;
        let b = detect_stream(&msgs, &cfg(30.0), &scorer).unwrap().1;
        assert_eq!(a, b);
    }

    #[test]
    fn new_thread_records_exceed_threshold() {
        let scorer = vocab_scorer(&["aa bb cc", "dd ee ff"]);
        let msgs: Vec<Message> = (0..10)
            .map(|i| msg(&format!("m{i}"), i, if i < 5 { "aa bb cc" } else { "dd ee ff" }))
            .collect();
        let (_, records) = detect_stream(&msgs, &cfg(4.0), &scorer).unwrap();
        for r in records.iter().skip(1) {
            if r.decision == Decision::NewThread {
                assert!(r.score.unwrap() > 4.0);
            }
        }
    }

    #[test]
    fn threshold_at_most_one_rejected() {
        let err = detect_stream(&[msg("m1", 1, "a")], &cfg(1.0), &Degenerate).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn calibration_finds_separating_threshold() {
        let scorer = vocab_scorer(&[
            "alpha beta gamma alpha beta gamma alpha",
            "uno dos tres uno dos tres uno",
        ]);
        let mut msgs = Vec::new();
        for i in 0..10 {
            let (text, label) = if i % 2 == 0 {
                ("alpha beta gamma", "A")
            } else {
                ("uno dos tres", "B")
            };
            msgs.push(Message {
                id: format!("m{i}"),
                ts: i,
                speaker: "s".into(),
                text: text.into(),
                thread_id: Some(label.into()),
            });
        }
        let grid = log_grid(2.0, 200.0, 20);
        let (threshold, acc) = calibrate_threshold(&msgs, &cfg(2.0), &scorer, &grid).unwrap();
        assert!(threshold > 1.0);
        assert!(acc >= 0.9, "best accuracy {acc}");
    }

    #[test]
    fn conditional_mode_scores_message_tokens_only() {
        let scorer = vocab_scorer(&["alpha beta alpha beta"]);
        let thread = Thread::new("t0".into(), msg("m1", 1, "alpha beta"));
        let mut config = cfg(2.0);
        config.conditional = true;
        let score = score_candidate(&scorer, &thread, &msg("m2", 2, "alpha"), &config).unwrap();
        // Oracle: difference of joint log-probs over the message length.
        let full = scorer.model().score("alpha beta\nalpha").unwrap();
        let ctx = scorer.model().score("alpha beta").unwrap();
        let expected = (-(full.log_prob - ctx.log_prob) / 1.0).exp();
        assert!((score - expected).abs() < 1e-12);
    }
}
