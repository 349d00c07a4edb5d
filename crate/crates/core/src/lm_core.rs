//! Tokenization, perplexity, and a trainable add-k n-gram reference model.
//!
//! Perplexity is computed in log space: `PPL = exp(-log_prob / N)` where
//! `log_prob` is the natural-log joint probability of the token sequence and
//! `N` its length. The n-gram model exists so the whole pipeline runs
//! offline and deterministically; real LLM scoring goes through
//! [`crate::remote_lm`].

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::num::Real;
use crate::{Error, Result};

/// Unknown-token sentinel, always a vocabulary member.
pub const UNK: &str = "<unk>";
/// Start-of-sequence padding for short contexts. Never a predictable token.
pub const BOS: &str = "<s>";

/// Lowercased maximal alphanumeric runs; punctuation discarded.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Perplexity with its underlying log-probability, kept together so callers
/// can re-derive conditional scores without rescoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerplexityScore<T: Real = f64> {
    pub value: T,
    /// Natural-log joint probability of the scored sequence.
    pub log_prob: T,
}

impl<T: Real> PerplexityScore<T> {
    pub fn from_log_prob(log_prob: T, n_tokens: usize) -> Self {
        let n = T::from_f64_lossy(n_tokens as f64);
        PerplexityScore {
            value: (-log_prob / n).exp(),
            log_prob,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct ContextCounts {
    total: u64,
    by_token: HashMap<String, u64>,
}

/// Add-k smoothed n-gram model over a closed vocabulary.
#[derive(Debug, Clone)]
pub struct NgramModel<T: Real = f64> {
    order: usize,
    k: T,
    vocab: BTreeSet<String>,
    /// Keyed by context (order-1 tokens, BOS-padded).
    counts: HashMap<Vec<String>, ContextCounts>,
}

impl<T: Real> NgramModel<T> {
    /// An untrained model over an explicit vocabulary; every conditional is
    /// the uniform add-k distribution.
    pub fn with_vocab(
        order: usize,
        k: T,
        tokens: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidArgument("n-gram order must be >= 1".into()));
        }
        if k <= T::zero() {
            return Err(Error::InvalidArgument("smoothing k must be > 0".into()));
        }
        let mut vocab: BTreeSet<String> = tokens.into_iter().collect();
        vocab.insert(UNK.to_string());
        Ok(NgramModel {
            order,
            k,
            vocab,
            counts: HashMap::new(),
        })
    }

    /// Trains on raw texts using [`tokenize`], with BOS padding for the
    /// first order-1 positions of each text.
    pub fn train(texts: &[String], order: usize, k: T) -> Result<Self> {
        if texts.is_empty() {
            return Err(Error::EmptyInput("training corpus".into()));
        }
        let tokenized: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
        let mut model = Self::with_vocab(
            order,
            k,
            tokenized.iter().flatten().cloned().collect::<Vec<_>>(),
        )?;
        for tokens in &tokenized {
            let padded = model.pad(tokens);
            for i in 0..tokens.len() {
                let context = padded[i..i + order - 1].to_vec();
                let token = padded[i + order - 1].clone();
                let entry = model.counts.entry(context).or_default();
                entry.total += 1;
                *entry.by_token.entry(token).or_insert(0) += 1;
            }
        }
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Vocabulary size including the unknown sentinel.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains(token)
    }

    fn pad(&self, tokens: &[String]) -> Vec<String> {
        let mut padded = vec![BOS.to_string(); self.order - 1];
        padded.extend(tokens.iter().map(|t| self.normalize(t)));
        padded
    }

    /// Maps out-of-vocabulary tokens to the unknown sentinel. BOS passes
    /// through so padding survives normalization.
    fn normalize(&self, token: &str) -> String {
        if token == BOS || self.vocab.contains(token) {
            token.to_string()
        } else {
            UNK.to_string()
        }
    }

    /// ln P(token | context) with add-k smoothing over the full vocabulary.
    pub fn cond_log_prob(&self, context: &[String], token: &str) -> T {
        let token = self.normalize(token);
        let v = T::from_f64_lossy(self.vocab.len() as f64);
        let (count, total) = match self.counts.get(context) {
            Some(c) => (
                c.by_token.get(&token).copied().unwrap_or(0),
                c.total,
            ),
            None => (0, 0),
        };
        let num = T::from_f64_lossy(count as f64) + self.k;
        let den = T::from_f64_lossy(total as f64) + self.k * v;
        (num / den).ln()
    }

    /// Natural-log joint probability of a token sequence.
    pub fn sequence_log_prob(&self, tokens: &[String]) -> Result<T> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("token sequence".into()));
        }
        let padded = self.pad(tokens);
        let mut lp = T::zero();
        for i in 0..tokens.len() {
            let context = &padded[i..i + self.order - 1];
            lp = lp + self.cond_log_prob(context, &padded[i + self.order - 1]);
        }
        Ok(lp)
    }

    /// Perplexity of raw text under this model.
    pub fn score(&self, text: &str) -> Result<PerplexityScore<T>> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::EmptyInput("text tokenizes to nothing".into()));
        }
        let lp = self.sequence_log_prob(&tokens)?;
        Ok(PerplexityScore::from_log_prob(lp, tokens.len()))
    }

    /// Samples up to `max_tokens` continuation tokens from the smoothed
    /// conditionals. Deterministic for a fixed generator state.
    pub fn generate_with(
        &self,
        prompt: &str,
        max_tokens: usize,
        rng: &mut impl Rng,
    ) -> Result<String> {
        if max_tokens < 1 {
            return Err(Error::InvalidArgument("max_tokens must be >= 1".into()));
        }
        let mut history = self.pad(&tokenize(prompt));
        let mut out = Vec::with_capacity(max_tokens);
        for _ in 0..max_tokens {
            let context = history[history.len() - (self.order - 1)..].to_vec();
            let token = self.sample_token(&context, rng);
            history.push(token.clone());
            out.push(token);
        }
        Ok(out.join(" "))
    }

    fn sample_token(&self, context: &[String], rng: &mut impl Rng) -> String {
        let draw: f64 = rng.gen::<f64>();
        let target = T::from_f64_lossy(draw);
        let mut cumulative = T::zero();
        // BTreeSet iteration order is stable, so the inverse-CDF walk is
        // deterministic for a given draw.
        for token in &self.vocab {
            cumulative = cumulative + self.cond_log_prob(context, token).exp();
            if cumulative > target {
                return token.clone();
            }
        }
        self.vocab.iter().next_back().expect("non-empty vocab").clone()
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    order: usize,
    k: f64,
    vocab: Vec<String>,
    counts: HashMap<String, HashMap<String, u64>>,
}

impl<T: Real> NgramModel<T> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = ModelFile {
            version: 1,
            order: self.order,
            k: self.k.to_f64().unwrap_or(f64::NAN),
            vocab: self.vocab.iter().cloned().collect(),
            counts: self
                .counts
                .iter()
                .map(|(ctx, c)| (ctx.join(" "), c.by_token.clone()))
                .collect(),
        };
        let display = path.as_ref().display().to_string();
        let json = serde_json::to_string(&file)?;
        std::fs::write(path.as_ref(), json).map_err(|e| Error::io(&display, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let display = path.as_ref().display().to_string();
        let data = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&display, e))?;
        let file: ModelFile = serde_json::from_str(&data)?;
        if file.version != 1 {
            return Err(Error::InvalidArgument(format!(
                "unsupported model file version {}",
                file.version
            )));
        }
        let mut model = Self::with_vocab(
            file.order,
            T::from_f64_lossy(file.k),
            file.vocab.into_iter(),
        )?;
        for (ctx, by_token) in file.counts {
            let context: Vec<String> = if ctx.is_empty() {
                Vec::new()
            } else {
                ctx.split(' ').map(String::from).collect()
            };
            let total = by_token.values().sum();
            model
                .counts
                .insert(context, ContextCounts { total, by_token });
        }
        Ok(model)
    }
}

/// Behavioral contract for anything that can score and continue text:
/// the local n-gram reference model or a remote completion endpoint.
pub trait LanguageModelScorer: Send + Sync {
    fn perplexity(&self, text: &str) -> Result<PerplexityScore<f64>>;
    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String>;
}

/// N-gram model plus a generation seed, implementing the scorer contract.
///
/// Each `generate` call derives its generator from (seed, prompt), so the
/// same prompt under the same seed always yields the same continuation.
pub struct NgramScorer {
    model: NgramModel<f64>,
    gen_seed: u64,
}

impl NgramScorer {
    pub fn new(model: NgramModel<f64>, gen_seed: u64) -> Self {
        NgramScorer { model, gen_seed }
    }

    pub fn model(&self) -> &NgramModel<f64> {
        &self.model
    }
}

impl LanguageModelScorer for NgramScorer {
    fn perplexity(&self, text: &str) -> Result<PerplexityScore<f64>> {
        self.model.score(text)
    }

    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String> {
        use rand::SeedableRng;
        use std::hash::{Hash, Hasher};
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        prompt.hash(&mut hasher);
        let mut rng = rand_pcg::Pcg64::seed_from_u64(self.gen_seed ^ hasher.finish());
        self.model.generate_with(prompt, max_tokens, &mut rng)
    }
}
