//! Topic compression: TF-IDF vectorization, NMF by multiplicative updates,
//! and top-term extraction used to cap prompt length for long threads.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::lm_core::tokenize;
use crate::num::Real;
use crate::{Error, Result};

/// Division-by-zero guard in the multiplicative updates.
const NMF_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicConfig {
    pub method: String,
    pub k_terms: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for TopicConfig {
    fn default() -> Self {
        TopicConfig {
            method: "tfidf_nmf".into(),
            k_terms: 4,
            max_iter: 200,
            tol: 1e-4,
            seed: 0,
        }
    }
}

/// Nonnegative document-term matrix with its vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct DocTermMatrix<T: Real = f64> {
    pub values: Array2<T>,
    /// Lexicographically sorted terms, one per column.
    pub vocab: Vec<String>,
}

/// Result of a nonnegative factorization X ≈ W·H.
#[derive(Debug, Clone)]
pub struct NmfFactors<T: Real = f64> {
    pub w: Array2<T>,
    pub h: Array2<T>,
    pub rank: usize,
    /// Frobenius norm of X − W·H at the final iterate.
    pub residual: T,
}

fn vocab_of(messages: &[String]) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    if messages.is_empty() {
        return Err(Error::EmptyInput("message list".into()));
    }
    let tokenized: Vec<Vec<String>> = messages.iter().map(|m| tokenize(m)).collect();
    let mut vocab: Vec<String> = tokenized.iter().flatten().cloned().collect();
    vocab.sort();
    vocab.dedup();
    if vocab.is_empty() {
        return Err(Error::EmptyInput("no tokens in any message".into()));
    }
    Ok((vocab, tokenized))
}

/// Raw token counts per message.
pub fn build_counts<T: Real>(messages: &[String]) -> Result<DocTermMatrix<T>> {
    let (vocab, tokenized) = vocab_of(messages)?;
    let index: std::collections::HashMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let mut values = Array2::zeros((messages.len(), vocab.len()));
    for (row, tokens) in tokenized.iter().enumerate() {
        for t in tokens {
            values[[row, index[t.as_str()]]] = values[[row, index[t.as_str()]]] + T::one();
        }
    }
    Ok(DocTermMatrix { values, vocab })
}

/// TF-IDF weights: tf = raw count, idf = ln((1+n)/(1+df)) + 1, rows
/// L2-normalized. Zero rows (no in-vocab tokens) stay zero.
pub fn build_tfidf<T: Real>(messages: &[String]) -> Result<DocTermMatrix<T>> {
    let counts = build_counts::<T>(messages)?;
    let n = T::from_f64_lossy(messages.len() as f64);
    let mut values = counts.values;
    let ncols = values.ncols();
    let mut idf = Vec::with_capacity(ncols);
    for col in 0..ncols {
        let df = values
            .index_axis(Axis(1), col)
            .iter()
            .filter(|v| **v > T::zero())
            .count();
        let df = T::from_f64_lossy(df as f64);
        idf.push(((T::one() + n) / (T::one() + df)).ln() + T::one());
    }
    for mut row in values.rows_mut() {
        for (col, v) in row.iter_mut().enumerate() {
            *v = *v * idf[col];
        }
        let norm = row.iter().map(|v| *v * *v).sum::<T>().sqrt();
        if norm > T::zero() {
            row.mapv_inplace(|v| v / norm);
        }
    }
    Ok(DocTermMatrix {
        values,
        vocab: counts.vocab,
    })
}

/// Frobenius norm of X − W·H.
fn frobenius_residual<T: Real>(x: &Array2<T>, w: &Array2<T>, h: &Array2<T>) -> T {
    let approx = w.dot(h);
    x.iter()
        .zip(approx.iter())
        .map(|(a, b)| {
            let d = *a - *b;
            d * d
        })
        .sum::<T>()
        .sqrt()
}

/// Fits X ≈ W·H by Lee–Seung multiplicative updates from a seeded uniform
/// nonnegative initialization. Stops at `max_iter` or when the relative
/// residual improvement drops below `tol`.
pub fn nmf_factorize<T: Real>(
    x: &DocTermMatrix<T>,
    rank: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<NmfFactors<T>> {
    let xm = &x.values;
    let (rows, cols) = xm.dim();
    if rank < 1 || rank > rows.min(cols) {
        return Err(Error::InvalidArgument(format!(
            "rank {rank} out of range for a {rows}x{cols} matrix"
        )));
    }
    if xm.iter().any(|v| *v < T::zero()) {
        return Err(Error::InvalidArgument("matrix has negative entries".into()));
    }
    let mut rng = Pcg64::seed_from_u64(seed);
    let mut init = |r: usize, c: usize| {
        Array2::from_shape_fn((r, c), |_| T::from_f64_lossy(rng.gen_range(0.01..1.0)))
    };
    let mut w = init(rows, rank);
    let mut h = init(rank, cols);
    let eps = T::from_f64_lossy(NMF_EPS);
    let tol = T::from_f64_lossy(tol);
    let mut residual = frobenius_residual(xm, &w, &h);
    for _ in 0..max_iter {
        // H <- H * (WᵀX) / (WᵀWH)
        let wt = w.t();
        let numer = wt.dot(xm);
        let denom = wt.dot(&w).dot(&h);
        azip_update(&mut h, &numer, &denom, eps);
        // W <- W * (XHᵀ) / (WHHᵀ)
        let ht = h.t();
        let numer = xm.dot(&ht);
        let denom = w.dot(&h).dot(&ht);
        azip_update(&mut w, &numer, &denom, eps);

        let next = frobenius_residual(xm, &w, &h);
        let improvement = if residual > T::zero() {
            (residual - next) / residual
        } else {
            T::zero()
        };
        residual = next;
        if improvement >= T::zero() && improvement < tol {
            break;
        }
    }
    Ok(NmfFactors {
        w,
        h,
        rank,
        residual,
    })
}

fn azip_update<T: Real>(base: &mut Array2<T>, numer: &Array2<T>, denom: &Array2<T>, eps: T) {
    ndarray::Zip::from(base)
        .and(numer)
        .and(denom)
        .for_each(|b, &n, &d| {
            *b = *b * n / (d + eps);
        });
}

/// Joins the top `k_terms` terms of component row 0, weight-descending,
/// ties broken by lexicographically smaller term.
pub fn extract_topic<T: Real>(
    x: &DocTermMatrix<T>,
    factors: &NmfFactors<T>,
    k_terms: usize,
) -> Result<String> {
    if k_terms < 1 {
        return Err(Error::InvalidArgument("k_terms must be >= 1".into()));
    }
    let row = factors.h.index_axis(Axis(0), 0);
    let mut order: Vec<usize> = (0..x.vocab.len()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| x.vocab[a].cmp(&x.vocab[b]))
    });
    let take = k_terms.min(x.vocab.len());
    Ok(order[..take]
        .iter()
        .map(|&i| x.vocab[i].as_str())
        .collect::<Vec<_>>()
        .join(" "))
}

/// Computes a topic string for a list of message texts (TF-IDF + rank-1 NMF).
pub fn topic_of_messages(messages: &[String], cfg: &TopicConfig) -> Result<String> {
    let x = build_tfidf::<f64>(messages)?;
    let factors = nmf_factorize(&x, 1, cfg.seed, cfg.max_iter, cfg.tol)?;
    extract_topic(&x, &factors, cfg.k_terms)
}

/// Sets (or replaces) the thread's topic header once its message count
/// exceeds `max_len`. Messages are never edited or reordered.
pub fn maybe_compress(
    thread: &mut crate::disentangle::Thread,
    max_len: usize,
    cfg: &TopicConfig,
) -> Result<bool> {
    if thread.messages.len() <= max_len {
        return Ok(false);
    }
    let texts: Vec<String> = thread.messages.iter().map(|m| m.text.clone()).collect();
    thread.topic = Some(topic_of_messages(&texts, cfg)?);
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn counts_are_direct() {
        let m = build_counts::<f64>(&["a a b".into()]).unwrap();
        assert_eq!(m.vocab, ["a", "b"]);
        assert_eq!(m.values, array![[2.0, 1.0]]);
    }

    #[test]
    fn counts_identity_pattern() {
        let m = build_counts::<f64>(&["a".into(), "b".into()]).unwrap();
        assert_eq!(m.values, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn tokenless_messages_rejected() {
        assert!(build_counts::<f64>(&["!!!".into()]).is_err());
    }

    #[test]
    fn single_message_tfidf_is_unit() {
        let m = build_tfidf::<f64>(&["a".into()]).unwrap();
        assert!((m.values[[0, 0]] - 1.0).abs() < 1e-12);
    }

    // Oracle: hand computation of idf and L2 normalization for ["a b", "a"].
    #[test]
    fn tfidf_matches_hand_computation() {
        let m = build_tfidf::<f64>(&["a b".into(), "a".into()]).unwrap();
        // n = 2. df(a) = 2, df(b) = 1.
        let idf_a = (3.0f64 / 3.0).ln() + 1.0; // 1.0
        let idf_b = (3.0f64 / 2.0).ln() + 1.0;
        // row 0: [1*idf_a, 1*idf_b], L2-normalized.
        let norm = (idf_a * idf_a + idf_b * idf_b).sqrt();
        assert!((m.values[[0, 0]] - idf_a / norm).abs() < 1e-12);
        assert!((m.values[[0, 1]] - idf_b / norm).abs() < 1e-12);
        // row 1: only "a", normalizes to 1.
        assert!((m.values[[1, 0]] - 1.0).abs() < 1e-12);
        assert_eq!(m.values[[1, 1]], 0.0);
        // Rarer term gets strictly larger idf.
        assert!(idf_b > idf_a);
    }

    #[test]
    fn rank_one_input_recovered() {
        let u = array![[1.0], [2.0], [0.5]];
        let v = array![[3.0, 1.0, 0.2, 4.0]];
        let x = DocTermMatrix {
            values: u.dot(&v),
            vocab: vec!["a".into(), "b".into(), "c".into(), "d".into()],
        };
        let f = nmf_factorize(&x, 1, 7, 500, 1e-12).unwrap();
        assert!(f.residual < 1e-6, "residual {}", f.residual);
    }

    #[test]
    fn residual_is_monotone_non_increasing() {
        // Re-runs the update loop step by step against the library result.
        let x = DocTermMatrix::<f64> {
            values: Array2::from_shape_fn((6, 8), |(i, j)| ((i * 13 + j * 7) % 11) as f64 / 3.0),
            vocab: (0..8).map(|i| format!("t{i}")).collect(),
        };
        let mut prev = f64::INFINITY;
        for iters in 1..40 {
            let f = nmf_factorize(&x, 2, 3, iters, 0.0).unwrap();
            assert!(f.residual <= prev + 1e-12, "iter {iters}: {} > {prev}", f.residual);
            prev = f.residual;
        }
    }

    // Oracle: second, independently coded multiplicative-update loop.
    #[test]
    fn factorization_matches_independent_reimplementation() {
        let x = DocTermMatrix::<f64> {
            values: Array2::from_shape_fn((6, 8), |(i, j)| ((i * 5 + j * 3) % 7) as f64 + 0.1),
            vocab: (0..8).map(|i| format!("t{i}")).collect(),
        };
        let seed = 11;
        let iters = 60;
        let f = nmf_factorize(&x, 2, seed, iters, 0.0).unwrap();

        // Plain nested-loop reimplementation with the same init sequence.
        let mut rng = Pcg64::seed_from_u64(seed);
        let (rows, cols, r) = (6usize, 8usize, 2usize);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(0.01..1.0)).collect()
        };
        let mut w = draw(rows * r);
        let mut h = draw(r * cols);
        let xv: Vec<f64> = x.values.iter().cloned().collect();
        let at = |v: &[f64], i: usize, j: usize, ncols: usize| v[i * ncols + j];
        for _ in 0..iters {
            // H update
            let mut hn = vec![0.0; r * cols];
            for a in 0..r {
                for b in 0..cols {
                    let mut numer = 0.0;
                    let mut denom = 0.0;
                    for i in 0..rows {
                        numer += at(&w, i, a, r) * at(&xv, i, b, cols);
                        let mut wh = 0.0;
                        for c in 0..r {
                            wh += at(&w, i, c, r) * at(&h, c, b, cols);
                        }
                        denom += at(&w, i, a, r) * wh;
                    }
                    hn[a * cols + b] = at(&h, a, b, cols) * numer / (denom + NMF_EPS);
                }
            }
            h = hn;
            // W update
            let mut wn = vec![0.0; rows * r];
            for i in 0..rows {
                for a in 0..r {
                    let mut numer = 0.0;
                    let mut denom = 0.0;
                    for b in 0..cols {
                        numer += at(&xv, i, b, cols) * at(&h, a, b, cols);
                        let mut wh = 0.0;
                        for c in 0..r {
                            wh += at(&w, i, c, r) * at(&h, c, b, cols);
                        }
                        denom += wh * at(&h, a, b, cols);
                    }
                    wn[i * r + a] = at(&w, i, a, r) * numer / (denom + NMF_EPS);
                }
            }
            w = wn;
        }
        let mut sq = 0.0;
        for i in 0..rows {
            for b in 0..cols {
                let mut wh = 0.0;
                for c in 0..r {
                    wh += at(&w, i, c, r) * at(&h, c, b, cols);
                }
                let d = at(&xv, i, b, cols) - wh;
                sq += d * d;
            }
        }
        assert!((f.residual - sq.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn rank_out_of_range_rejected() {
        let x = build_counts::<f64>(&["a b".into()]).unwrap();
        assert!(nmf_factorize(&x, 3, 0, 10, 1e-4).is_err());
        assert!(nmf_factorize(&x, 0, 0, 10, 1e-4).is_err());
    }

    #[test]
    fn factors_stay_nonnegative() {
        let x = DocTermMatrix::<f64> {
            values: Array2::from_shape_fn((5, 6), |(i, j)| ((i + j) % 4) as f64),
            vocab: (0..6).map(|i| format!("t{i}")).collect(),
        };
        let f = nmf_factorize(&x, 2, 21, 100, 0.0).unwrap();
        assert!(f.w.iter().all(|v| *v >= 0.0));
        assert!(f.h.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn extract_topic_argsort_slice() {
        let x = DocTermMatrix::<f64> {
            values: Array2::zeros((1, 5)),
            vocab: vec!["a".into(), "b".into(), "c".into(), "d".into(), "e".into()],
        };
        let f = NmfFactors {
            w: Array2::zeros((1, 1)),
            h: array![[0.1, 0.9, 0.5, 0.2, 0.05]],
            rank: 1,
            residual: 0.0,
        };
        assert_eq!(extract_topic(&x, &f, 4).unwrap(), "b c d a");
    }

    #[test]
    fn extract_topic_single_term() {
        let x = DocTermMatrix::<f64> {
            values: Array2::zeros((1, 1)),
            vocab: vec!["hello".into()],
        };
        let f = NmfFactors {
            w: Array2::zeros((1, 1)),
            h: array![[0.7]],
            rank: 1,
            residual: 0.0,
        };
        assert_eq!(extract_topic(&x, &f, 4).unwrap(), "hello");
        assert!(extract_topic(&x, &f, 0).is_err());
    }

    #[test]
    fn dominant_term_survives_selection() {
        let messages: Vec<String> = vec![
            "kernel panic in the kernel scheduler kernel".into(),
            "kernel kernel module kernel".into(),
            "lunch plans today".into(),
        ];
        let topic = topic_of_messages(&messages, &TopicConfig::default()).unwrap();
        assert!(topic.split(' ').any(|t| t == "kernel"), "topic was {topic:?}");
    }

    // Rank-1 recovery: topic terms equal the top-k of v.
    #[test]
    fn rank_one_topic_matches_v() {
        let u = array![[1.0], [0.5], [2.0]];
        let v = array![[0.2, 5.0, 1.0, 3.0, 0.1]];
        let x = DocTermMatrix {
            values: u.dot(&v),
            vocab: vec!["a".into(), "b".into(), "c".into(), "d".into(), "e".into()],
        };
        let f = nmf_factorize(&x, 1, 2, 500, 1e-12).unwrap();
        assert_eq!(extract_topic(&x, &f, 3).unwrap(), "b d c");
    }

    #[test]
    fn compress_triggers_only_past_max_len() {
        use crate::corpus::Message;
        use crate::disentangle::Thread;
        let mk = |n: usize| Thread {
            id: "t0".into(),
            topic: None,
            messages: (0..n)
                .map(|i| Message {
                    id: format!("m{i}"),
                    ts: i as i64,
                    speaker: "s".into(),
                    text: format!("word{} filler text", i % 3),
                    thread_id: None,
                })
                .collect(),
            request_ts: None,
            weight: 0.0,
        };
        let cfg = TopicConfig::default();

        let mut short = mk(2);
        assert!(!maybe_compress(&mut short, 10, &cfg).unwrap());
        assert!(short.topic.is_none());

        let mut long = mk(11);
        let before: Vec<String> = long.messages.iter().map(|m| m.id.clone()).collect();
        assert!(maybe_compress(&mut long, 10, &cfg).unwrap());
        assert!(long.topic.is_some());
        let after: Vec<String> = long.messages.iter().map(|m| m.id.clone()).collect();
        assert_eq!(before, after);

        // Compressing twice keeps exactly one header.
        let first = long.topic.clone();
        assert!(maybe_compress(&mut long, 10, &cfg).unwrap());
        assert_eq!(long.topic, first);
    }

    #[test]
    fn f32_factorization_works() {
        let x = build_tfidf::<f32>(&["a b c".into(), "a c".into(), "b".into()]).unwrap();
        let f = nmf_factorize(&x, 1, 0, 100, 1e-4).unwrap();
        assert!(f.residual.is_finite());
    }
}
