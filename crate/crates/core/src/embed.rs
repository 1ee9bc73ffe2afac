//! Text embedding providers.
//!
//! [`HashEmbedder`] folds hashed word unigrams and character trigrams into a
//! fixed number of signed buckets and L2-normalizes the result. It is pure,
//! fast, and needs no model. Distinct n-grams can collide in a bucket, which
//! only adds a small amount of noise to cosine similarities at the default
//! 64 dimensions. [`RemoteEmbedder`] calls an HTTP endpoint.

use std::sync::Arc;

use serde_json::{json, Value};

use crate::http::{JsonClient, RetryPolicy};
use crate::{seed, Error, Result};

pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    /// Embeds a batch; every output is unit length.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>>;

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.embed_batch(&[text])?.pop().unwrap_or_default())
    }
}

pub type SharedEmbedder = Arc<dyn EmbeddingProvider>;

const WORD_WEIGHT: f64 = 1.0;
const TRIGRAM_WEIGHT: f64 = 0.35;

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    fn add(&self, v: &mut [f64], token: &str, weight: f64) {
        let h = seed::derive(self.seed, &[seed::hash_str(token)]);
        let bucket = (h % self.dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign * weight;
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let lower = text.to_lowercase();
        for word in lower
            .split(|c: char| !(c.is_alphanumeric() || c == '#' || c == '\''))
            .filter(|w| !w.is_empty())
        {
            self.add(&mut v, word, WORD_WEIGHT);
            let padded: Vec<char> = format!(" {word} ").chars().collect();
            for tri in padded.windows(3) {
                let t: String = tri.iter().collect();
                self.add(&mut v, &t, TRIGRAM_WEIGHT);
            }
        }
        if !normalize(&mut v) {
            // No tokens (or exact cancellation): fall back to a fixed axis so
            // the unit-norm invariant holds.
            v[0] = 1.0;
        }
        v
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

/// Client for `POST {"model", "input": [text...]}` returning either
/// `{"data": [{"embedding": [...]}, ...]}` or `{"embeddings": [[...], ...]}`.
pub struct RemoteEmbedder {
    url: String,
    model: String,
    dim: usize,
    client: JsonClient,
}

impl RemoteEmbedder {
    pub fn new(url: impl Into<String>, model: impl Into<String>, dim: usize, policy: RetryPolicy, api_key: Option<String>) -> Result<Self> {
        Ok(Self {
            url: url.into(),
            model: model.into(),
            dim,
            client: JsonClient::new(policy, api_key)?,
        })
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let reply = self.client.post(&self.url, &json!({ "model": self.model, "input": texts }))?;
        let vectors = parse_embedding_reply(&reply)?;
        if vectors.len() != texts.len() {
            return Err(Error::Backend(format!(
                "embedding endpoint returned {} vectors for {} inputs",
                vectors.len(),
                texts.len()
            )));
        }
        vectors
            .into_iter()
            .map(|mut v| {
                if v.len() != self.dim {
                    return Err(Error::Shape {
                        expected: self.dim,
                        actual: v.len(),
                    });
                }
                if !normalize(&mut v) {
                    return Err(Error::Backend("zero embedding vector".into()));
                }
                Ok(v)
            })
            .collect()
    }
}

fn parse_embedding_reply(reply: &Value) -> Result<Vec<Vec<f64>>> {
    let as_vec = |v: &Value| -> Option<Vec<f64>> { v.as_array()?.iter().map(Value::as_f64).collect() };
    if let Some(data) = reply.get("data").and_then(Value::as_array) {
        return data
            .iter()
            .map(|d| d.get("embedding").and_then(as_vec))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Backend("malformed `data` in embedding reply".into()));
    }
    if let Some(list) = reply.get("embeddings").and_then(Value::as_array) {
        return list
            .iter()
            .map(as_vec)
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Backend("malformed `embeddings` in embedding reply".into()));
    }
    Err(Error::Backend("embedding reply has neither `data` nor `embeddings`".into()))
}

/// Scales `v` to unit length in place; returns false for a zero vector.
pub fn normalize(v: &mut [f64]) -> bool {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; zero when either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}
