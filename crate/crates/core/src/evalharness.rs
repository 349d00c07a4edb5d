//! Clustering metrics against gold thread labels, plus the scoring-vs-
//! generation latency comparison.

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::lm_core::LanguageModelScorer;
use crate::{Error, Result};

/// A labeling: message id -> cluster label.
pub type Labeling = HashMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringMetrics {
    pub pairwise_precision: f64,
    pub pairwise_recall: f64,
    pub pairwise_f1: f64,
    pub one_to_one_accuracy: f64,
    pub thread_count_predicted: usize,
    pub thread_count_gold: usize,
}

fn check_id_sets(predicted: &Labeling, gold: &Labeling) -> Result<()> {
    if predicted.len() != gold.len() || !predicted.keys().all(|k| gold.contains_key(k)) {
        return Err(Error::InvalidArgument(
            "predicted and gold labelings cover different message ids".into(),
        ));
    }
    Ok(())
}

fn cluster_count(labeling: &Labeling) -> usize {
    labeling.values().collect::<std::collections::HashSet<_>>().len()
}

/// Precision/recall/F1 over same-thread decisions for all unordered message
/// pairs, plus one-to-one accuracy.
pub fn evaluate(predicted: &Labeling, gold: &Labeling) -> Result<ClusteringMetrics> {
    check_id_sets(predicted, gold)?;
    let ids: Vec<&String> = {
        let mut v: Vec<&String> = predicted.keys().collect();
        v.sort();
        v
    };
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            let same_pred = predicted[ids[i]] == predicted[ids[j]];
            let same_gold = gold[ids[i]] == gold[ids[j]];
            match (same_pred, same_gold) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    // Conventions: no pairs anywhere -> perfect; predicted empty against
    // real gold pairs -> zero.
    let precision = if tp + fp == 0 {
        if fn_ == 0 { 1.0 } else { 0.0 }
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        if fp == 0 { 1.0 } else { 0.0 }
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ClusteringMetrics {
        pairwise_precision: precision,
        pairwise_recall: recall,
        pairwise_f1: f1,
        one_to_one_accuracy: one_to_one_accuracy(predicted, gold)?,
        thread_count_predicted: cluster_count(predicted),
        thread_count_gold: cluster_count(gold),
    })
}

/// Best total overlap over one-to-one matchings of predicted to gold
/// clusters, normalized by message count. Exact optimal assignment.
pub fn one_to_one_accuracy(predicted: &Labeling, gold: &Labeling) -> Result<f64> {
    check_id_sets(predicted, gold)?;
    if predicted.is_empty() {
        return Ok(1.0);
    }
    // Overlap matrix between predicted and gold clusters.
    let mut overlap: BTreeMap<(&String, &String), i64> = BTreeMap::new();
    let mut pred_labels: Vec<&String> = Vec::new();
    let mut gold_labels: Vec<&String> = Vec::new();
    for (id, p) in predicted {
        let g = &gold[id];
        *overlap.entry((p, g)).or_insert(0) += 1;
        if !pred_labels.contains(&p) {
            pred_labels.push(p);
        }
        if !gold_labels.contains(&g) {
            gold_labels.push(g);
        }
    }
    pred_labels.sort();
    gold_labels.sort();
    // kuhn_munkres wants rows <= columns; pad the smaller side with zeros.
    let n = pred_labels.len().max(gold_labels.len());
    let weights = Matrix::from_fn(n, n, |(r, c)| {
        match (pred_labels.get(r), gold_labels.get(c)) {
            (Some(p), Some(g)) => overlap.get(&(*p, *g)).copied().unwrap_or(0),
            _ => 0,
        }
    });
    let (best, _) = kuhn_munkres(&weights);
    Ok(best as f64 / predicted.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyReport {
    pub mean_score_time: Duration,
    pub mean_generate_time: Duration,
    /// mean_generate_time / mean_score_time.
    pub speed_ratio: f64,
    pub samples: usize,
}

/// Times perplexity scoring vs generation on the same backend. One warm-up
/// pass per sample is excluded from the means.
pub fn latency_compare(
    backend: &dyn LanguageModelScorer,
    samples: &[String],
    max_tokens: usize,
) -> Result<LatencyReport> {
    if samples.len() < 10 {
        return Err(Error::InvalidArgument(
            "latency comparison needs at least 10 samples".into(),
        ));
    }
    // Warm-up.
    backend.perplexity(&samples[0])?;
    backend.generate(&samples[0], max_tokens)?;

    let mut score_total = Duration::ZERO;
    let mut generate_total = Duration::ZERO;
    for s in samples {
        let t = Instant::now();
        backend.perplexity(s)?;
        score_total += t.elapsed();
    }
    for s in samples {
        let t = Instant::now();
        backend.generate(s, max_tokens)?;
        generate_total += t.elapsed();
    }
    let n = samples.len() as u32;
    let mean_score = score_total / n;
    let mean_generate = generate_total / n;
    Ok(LatencyReport {
        mean_score_time: mean_score,
        mean_generate_time: mean_generate,
        speed_ratio: mean_generate.as_secs_f64() / mean_score.as_secs_f64().max(f64::MIN_POSITIVE),
        samples: samples.len(),
    })
}
