#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};
use social_sandbox::dataprep::Candidate;
use social_sandbox::embed::{EmbeddingProvider, HashEmbedder};

pub type Handler = dyn Fn(&str, &Value) -> (u16, Value) + Send + Sync;

/// A tiny HTTP/1.1 server answering JSON POSTs on a background thread.
pub struct MockServer {
    pub base: String,
    hits: Arc<AtomicUsize>,
}

impl MockServer {
    pub fn start(handler: impl Fn(&str, &Value) -> (u16, Value) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let base = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        let counter = hits.clone();
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let handler = handler.clone();
                let counter = counter.clone();
                thread::spawn(move || {
                    counter.fetch_add(1, Ordering::SeqCst);
                    let _ = answer(stream, handler.as_ref());
                });
            }
        });
        Self { base, hits }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn answer(stream: TcpStream, handler: &Handler) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body)?;
    let value: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let (status, reply) = handler(&path, &value);
    let text = reply.to_string();
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    )?;
    stream.flush()
}

pub fn chat_reply(content: &str) -> Value {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
}

/// The last user turn of a chat request.
pub fn user_prompt(body: &Value) -> String {
    body["messages"]
        .as_array()
        .and_then(|m| m.iter().rev().find(|m| m["role"] == "user"))
        .and_then(|m| m["content"].as_str())
        .unwrap_or_default()
        .to_string()
}

/// Plays every prompt template with canned but prompt-dependent answers.
pub fn fake_llm(prompt: &str) -> String {
    if prompt.contains("Decide how to react") {
        if prompt.contains("your feed is empty") {
            r#"[{"action": "tweet", "content": "Thinking about the registry today."}]"#.to_string()
        } else if prompt.len().is_multiple_of(2) {
            r#"Sure. [{"action": "like"}, {"action": "reply", "content": "I see it differently."}]"#.to_string()
        } else {
            r#"[{"action": "retweet", "content": "Worth a read"}]"#.to_string()
        }
    } else if prompt.contains("could not be read") {
        r#"[{"action": "like"}]"#.to_string()
    } else if prompt.contains("judging the stance") {
        if prompt.len().is_multiple_of(3) { "-1" } else { "1" }.to_string()
    } else if prompt.contains("short_term_memory") {
        r#"{"short_term_memory": "Saw a post about the registry."}"#.to_string()
    } else if prompt.contains("long_term_memory") {
        r#"{"long_term_memory": "Follows the registry debate closely."}"#.to_string()
    } else if prompt.contains("persona for this account") {
        r#"{"likely_identity": "local resident", "interested_areas": ["politics", "community"],
            "posting_style": "short posts", "interaction_behavior": "replies often"}"#
            .to_string()
    } else {
        "I cannot help with that.".to_string()
    }
}

/// Deterministic pseudo-embedding keyed on text bytes.
pub fn fake_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for (i, b) in text.bytes().enumerate() {
        v[(i * 31 + b as usize) % dim] += 1.0;
    }
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    v
}

/// Serves `/chat`, `/embed` and `/tox` with the fakes above.
pub fn full_server(dim: usize) -> MockServer {
    MockServer::start(move |path, body| match path {
        "/chat" => (200, chat_reply(&fake_llm(&user_prompt(body)))),
        "/embed" => {
            let inputs: Vec<String> = body["input"]
                .as_array()
                .map(|a| a.iter().filter_map(|s| s.as_str().map(str::to_string)).collect())
                .unwrap_or_default();
            let data: Vec<Value> = inputs.iter().map(|t| json!({"embedding": fake_embedding(t, dim)})).collect();
            (200, json!({ "data": data }))
        }
        "/tox" => {
            let text = body["text"].as_str().unwrap_or_default();
            (200, json!({"score": if text.contains("differently") { 0.2 } else { 0.01 }}))
        }
        _ => (404, json!({"error": "not found"})),
    })
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        d / (na * nb)
    }
}

/// Tries every j-subset of the admissible candidates and returns the one
/// whose sorted keys are lexicographically smallest.
pub fn brute_force_negatives(pos: &Candidate, cands: &[Candidate], emb: &HashEmbedder, j: usize, threshold: f64) -> Option<Vec<usize>> {
    let text = |c: &Candidate| c.content.clone().unwrap_or_else(|| c.kind.label().to_string());
    let p = emb.embed(&text(pos)).unwrap();
    let keys: Vec<(bool, f64, usize)> = cands
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            let s = cos(&p, &emb.embed(&text(c)).unwrap());
            let ok = c.kind != pos.kind || s < threshold;
            ok.then_some((c.kind == pos.kind, s, i))
        })
        .collect();
    if keys.len() < j {
        return None;
    }
    let n = keys.len();
    let mut best: Option<Vec<(bool, f64, usize)>> = None;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != j {
            continue;
        }
        let mut pick: Vec<_> = (0..n).filter(|b| mask & (1 << b) != 0).map(|b| keys[b]).collect();
        pick.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        let better = match &best {
            None => true,
            Some(cur) => {
                pick.iter()
                    .zip(cur)
                    .map(|(a, b)| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)))
                    .find(|o| o.is_ne())
                    == Some(std::cmp::Ordering::Less)
            }
        };
        if better {
            best = Some(pick);
        }
    }
    best.map(|b| b.into_iter().map(|k| k.2).collect())
}
