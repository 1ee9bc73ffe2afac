//! Per-agent memory: short-term encoding, decay-weighted retrieval, and
//! long-term consolidation.
//!
//! Retrieval weight of entry k for query q at round `now`:
//! `w_k ∝ exp(-lambda * (now - round_k)) * max(0, cos(q, emb_k))`, normalized
//! to sum 1, or uniform when every term is zero.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::prompt::{LONG_MEMORY, SHORT_MEMORY};
use crate::agent::{AgentProfile, Backend};
use crate::embed::{cosine, EmbeddingProvider};
use crate::{Error, Result};

/// Content shorter than this many characters is stored verbatim.
pub const BYPASS_CHARS: usize = 120;
/// Scripted short-term encoding keeps this many leading words.
pub const SHORT_WORDS: usize = 20;
/// Scripted consolidation keeps this many leading words.
pub const LONG_WORDS: usize = 40;
pub const DEFAULT_CAPACITY: usize = 256;
pub const DEFAULT_SAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Short,
    Long,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub content: String,
    pub embedding: Vec<f64>,
    pub round: u32,
    pub kind: MemoryKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryPool {
    entries: Vec<MemoryEntry>,
    capacity: usize,
}

impl Default for MemoryPool {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

impl MemoryPool {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "memory capacity must be positive");
        Self {
            entries: Vec::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Most recently inserted short-term entry.
    pub fn latest_short(&self) -> Option<&MemoryEntry> {
        self.entries.iter().rev().find(|e| e.kind == MemoryKind::Short)
    }

    /// Inserts and evicts down to capacity: oldest short-term entries go
    /// first, long-term ones only once no short-term entry is left.
    pub fn insert(&mut self, entry: MemoryEntry) {
        self.entries.push(entry);
        while self.entries.len() > self.capacity {
            let victim = self
                .oldest(MemoryKind::Short)
                .or_else(|| self.oldest(MemoryKind::Long))
                .expect("pool over capacity is non-empty");
            self.entries.remove(victim);
        }
    }

    fn oldest(&self, kind: MemoryKind) -> Option<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind == kind)
            .min_by_key(|(i, e)| (e.round, *i))
            .map(|(i, _)| i)
    }

    /// Retrieval-weighted sample of up to `n` entries.
    pub fn sample<R: Rng + ?Sized>(&self, query: &[f64], lambda: f64, now: u32, n: usize, rng: &mut R) -> Result<Vec<&MemoryEntry>> {
        let w = retrieval_weights(query, &self.entries, lambda, now)?;
        Ok(sample_memories(&w, n, rng)?.into_iter().map(|i| &self.entries[i]).collect())
    }
}

pub fn retrieval_weights(query: &[f64], entries: &[MemoryEntry], lambda: f64, now: u32) -> Result<Vec<f64>> {
    if entries.is_empty() {
        return Err(Error::EmptyPool);
    }
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    // Shift ages by the youngest one: a common factor that cancels in the
    // normalization but keeps exp() away from underflow on long runs.
    let ages: Vec<f64> = entries.iter().map(|e| f64::from(now.saturating_sub(e.round))).collect();
    let youngest = ages.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = entries
        .iter()
        .zip(&ages)
        .map(|(e, age)| (-lambda * (age - youngest)).exp() * cosine(query, &e.embedding).max(0.0))
        .collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 && total.is_finite() {
        Ok(raw.into_iter().map(|w| w / total).collect())
    } else {
        Ok(vec![1.0 / entries.len() as f64; entries.len()])
    }
}

/// Draws `n` distinct indices, each pick proportional to the remaining
/// weights. With `n >= len` every index is returned by descending weight.
pub fn sample_memories<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if weights.is_empty() {
        return Err(Error::EmptyPool);
    }
    if n >= weights.len() {
        let mut idx: Vec<usize> = (0..weights.len()).collect();
        idx.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
        return Ok(idx);
    }
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut picked = Vec::with_capacity(n);
    for _ in 0..n {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let pos = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = None;
            for (p, &i) in remaining.iter().enumerate() {
                if u < weights[i] {
                    chosen = Some(p);
                    break;
                }
                u -= weights[i];
            }
            chosen.unwrap_or_else(|| remaining.iter().rposition(|&i| weights[i] > 0.0).expect("positive total"))
        } else {
            rng.random_range(0..remaining.len())
        };
        picked.push(remaining.remove(pos));
    }
    Ok(picked)
}

pub fn truncate_words(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub entry: MemoryEntry,
    /// No backend call was made because the content was short.
    pub bypassed: bool,
    /// An LLM backend failed and the scripted rule was used.
    pub fallback: bool,
}

pub fn encode_short_term(
    content: &str,
    profile: &AgentProfile,
    prev: Option<&MemoryEntry>,
    backend: &Backend,
    embedder: &dyn EmbeddingProvider,
    round: u32,
) -> Result<Encoded> {
    if content.trim().is_empty() {
        return Err(Error::Config("cannot encode empty memory content".into()));
    }
    let (text, bypassed, fallback) = if content.chars().count() < BYPASS_CHARS {
        (content.to_string(), true, false)
    } else {
        match backend.llm() {
            None => (truncate_words(content, SHORT_WORDS), false, false),
            Some(llm) => {
                let fields = BTreeMap::from([
                    ("profile", profile.to_text()),
                    ("message", content.to_string()),
                    ("memory", prev.map_or_else(|| "(none)".to_string(), |e| e.content.clone())),
                ]);
                match llm.ask_field(SHORT_MEMORY, &fields, "short_term_memory") {
                    Ok(s) => (s, false, false),
                    Err(e) => {
                        log::warn!("short-term memory for {} fell back to truncation: {e}", profile.user_id);
                        (truncate_words(content, SHORT_WORDS), false, true)
                    }
                }
            }
        }
    };
    let embedding = embedder.embed(&text)?;
    Ok(Encoded {
        entry: MemoryEntry {
            content: text,
            embedding,
            round,
            kind: MemoryKind::Short,
        },
        bypassed,
        fallback,
    })
}

pub fn consolidate_long_term(
    content: &str,
    profile: &AgentProfile,
    samples: &[&MemoryEntry],
    backend: &Backend,
    embedder: &dyn EmbeddingProvider,
    round: u32,
) -> Result<Encoded> {
    let scripted = || {
        let joined = std::iter::once(content)
            .chain(samples.iter().map(|e| e.content.as_str()))
            .collect::<Vec<_>>()
            .join(" | ");
        truncate_words(&joined, LONG_WORDS)
    };
    let (text, fallback) = match backend.llm() {
        None => (scripted(), false),
        Some(llm) => {
            let fields = BTreeMap::from([
                ("profile", profile.to_text()),
                ("message", content.to_string()),
                (
                    "short_memory",
                    samples.iter().map(|e| format!("- {}", e.content)).collect::<Vec<_>>().join("\n"),
                ),
            ]);
            match llm.ask_field(LONG_MEMORY, &fields, "long_term_memory") {
                Ok(s) => (s, false),
                Err(e) => {
                    log::warn!("long-term memory for {} fell back to concatenation: {e}", profile.user_id);
                    (scripted(), true)
                }
            }
        }
    };
    let embedding = embedder.embed(&text)?;
    Ok(Encoded {
        entry: MemoryEntry {
            content: text,
            embedding,
            round,
            kind: MemoryKind::Long,
        },
        bypassed: false,
        fallback,
    })
}
