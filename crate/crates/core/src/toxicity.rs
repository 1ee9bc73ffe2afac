//! Toxicity scoring of content-bearing actions.
//!
//! Lexicon mode counts tokens covered by the bundled word list
//! (`data/toxic_lexicon.txt`, single words and two-word phrases) and maps the
//! covered fraction `d` through
//! `CAP * (1 - exp(-KAPPA * d)) / (1 - exp(-KAPPA))`, so a text made only of
//! lexicon terms scores exactly `CAP`. Remote mode POSTs `{"text": ...}` and
//! expects `{"score": x}` with `x` in [0,1]; any failure falls back to the
//! lexicon and is flagged.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use serde_json::{json, Value};

use crate::http::{JsonClient, RetryPolicy};
use crate::{Error, Result};

pub const CAP: f64 = 0.95;
pub const KAPPA: f64 = 8.0;

const LEXICON_SRC: &str = include_str!("../data/toxic_lexicon.txt");

struct Lexicon {
    words: BTreeSet<String>,
    phrases: BTreeSet<(String, String)>,
}

fn lexicon() -> &'static Lexicon {
    static LEX: OnceLock<Lexicon> = OnceLock::new();
    LEX.get_or_init(|| {
        let mut words = BTreeSet::new();
        let mut phrases = BTreeSet::new();
        for line in LEXICON_SRC.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                [w] => {
                    words.insert(w.to_string());
                }
                [a, b] => {
                    phrases.insert((a.to_string(), b.to_string()));
                }
                _ => log::warn!("ignoring lexicon entry `{line}`"),
            }
        }
        Lexicon { words, phrases }
    })
}

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Fraction of tokens covered by lexicon terms.
pub fn lexicon_density(text: &str) -> f64 {
    let toks = tokens(text);
    if toks.is_empty() {
        return 0.0;
    }
    let lex = lexicon();
    let mut covered = vec![false; toks.len()];
    for i in 0..toks.len() {
        if lex.words.contains(&toks[i]) {
            covered[i] = true;
        }
        if i + 1 < toks.len() && lex.phrases.contains(&(toks[i].clone(), toks[i + 1].clone())) {
            covered[i] = true;
            covered[i + 1] = true;
        }
    }
    covered.iter().filter(|c| **c).count() as f64 / toks.len() as f64
}

pub fn saturate(density: f64) -> f64 {
    CAP * (1.0 - (-KAPPA * density).exp()) / (1.0 - (-KAPPA).exp())
}

pub fn lexicon_score(text: &str) -> f64 {
    saturate(lexicon_density(text))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToxicityScore {
    pub value: f64,
    /// True when a remote scorer was configured but the lexicon answered.
    pub fallback: bool,
}

pub enum ToxicityScorer {
    Lexicon,
    Remote { url: String, client: JsonClient },
}

impl ToxicityScorer {
    pub fn remote(url: impl Into<String>, policy: RetryPolicy, api_key: Option<String>) -> Result<Self> {
        Ok(Self::Remote {
            url: url.into(),
            client: JsonClient::new(policy, api_key)?,
        })
    }

    pub fn score(&self, text: &str) -> ToxicityScore {
        match self {
            ToxicityScorer::Lexicon => ToxicityScore {
                value: lexicon_score(text),
                fallback: false,
            },
            ToxicityScorer::Remote { url, client } => match remote_score(client, url, text) {
                Ok(value) => ToxicityScore { value, fallback: false },
                Err(e) => {
                    log::warn!("toxicity scorer failed, using lexicon: {e}");
                    ToxicityScore {
                        value: lexicon_score(text),
                        fallback: true,
                    }
                }
            },
        }
    }
}

fn remote_score(client: &JsonClient, url: &str, text: &str) -> Result<f64> {
    let reply = client.post(url, &json!({ "text": text }))?;
    let v = reply
        .get("score")
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::Backend("toxicity reply lacks numeric `score`".into()))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Backend(format!("toxicity score {v} outside [0,1]")));
    }
    Ok(v)
}
