//! Decision backends.
//!
//! The HTTP contract is the common chat-completion shape:
//!
//! ```text
//! POST {url}
//! {"model": "...", "messages": [{"role": "system", "content": "..."},
//!                               {"role": "user", "content": "..."}],
//!  "temperature": 0.7, "max_tokens": 512}
//! ```
//!
//! and the reply is read from `choices[0].message.content` (a bare
//! `{"content": "..."}` is accepted too).

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::TemplateStore;
use crate::http::{JsonClient, RetryPolicy};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Anything that can answer a chat request. Implementations are shared
/// across concurrent decision calls.
pub trait ChatModel: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

pub struct HttpChatModel {
    url: String,
    model: String,
    client: JsonClient,
}

impl HttpChatModel {
    pub fn new(url: impl Into<String>, model: impl Into<String>, policy: RetryPolicy, api_key: Option<String>) -> Result<Self> {
        Ok(Self {
            url: url.into(),
            model: model.into(),
            client: JsonClient::new(policy, api_key)?,
        })
    }
}

impl ChatModel for HttpChatModel {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let body = json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let reply = self.client.post(&self.url, &body)?;
        reply_content(&reply)
    }
}

fn reply_content(reply: &Value) -> Result<String> {
    reply
        .pointer("/choices/0/message/content")
        .or_else(|| reply.get("content"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::Backend("chat reply has no message content".into()))
}

pub const DEFAULT_SYSTEM: &str =
    "You simulate one account on a social network. Stay in character and follow the requested output format exactly.";

pub struct LlmBackend {
    model: Arc<dyn ChatModel>,
    templates: TemplateStore,
    pub system: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl LlmBackend {
    pub fn new(model: Arc<dyn ChatModel>, templates: TemplateStore) -> Self {
        Self {
            model,
            templates,
            system: DEFAULT_SYSTEM.to_string(),
            temperature: 0.7,
            max_tokens: 512,
        }
    }

    pub fn templates(&self) -> &TemplateStore {
        &self.templates
    }

    pub fn request(&self, user: String) -> ChatRequest {
        ChatRequest {
            messages: vec![ChatMessage::new("system", self.system.clone()), ChatMessage::new("user", user)],
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<String> {
        self.model.complete(request)
    }

    /// Renders a template and sends it as a single user turn.
    pub fn ask(&self, template: &str, fields: &BTreeMap<&str, String>) -> Result<String> {
        let prompt = self.templates.render(template, fields)?;
        self.complete(&self.request(prompt))
    }

    /// Like [`ask`](Self::ask) but extracts the string under `key` from the
    /// first JSON object in the reply.
    pub fn ask_field(&self, template: &str, fields: &BTreeMap<&str, String>, key: &str) -> Result<String> {
        let raw = self.ask(template, fields)?;
        let obj = first_json_object(&raw).ok_or_else(|| Error::Parse(format!("no JSON object in reply to `{template}`")))?;
        obj.get(key)
            .and_then(Value::as_str)
            .filter(|s| !s.trim().is_empty())
            .map(str::to_string)
            .ok_or_else(|| Error::Parse(format!("reply to `{template}` lacks `{key}`")))
    }
}

/// Which engine drives agent behavior.
#[derive(Clone, Default)]
pub enum Backend {
    #[default]
    Scripted,
    Llm(Arc<LlmBackend>),
}

impl Backend {
    pub fn llm(&self) -> Option<&LlmBackend> {
        match self {
            Backend::Scripted => None,
            Backend::Llm(b) => Some(b),
        }
    }
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Backend::Scripted => f.write_str("Scripted"),
            Backend::Llm(_) => f.write_str("Llm"),
        }
    }
}

/// First balanced `{...}` in `raw` that parses as a JSON object.
pub fn first_json_object(raw: &str) -> Option<serde_json::Map<String, Value>> {
    let bytes = raw.as_bytes();
    let mut start = 0;
    while let Some(off) = raw[start..].find('{') {
        let open = start + off;
        let mut depth = 0i32;
        let mut in_str = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        if let Ok(Value::Object(m)) = serde_json::from_str(&raw[open..=i]) {
                            return Some(m);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        start = open + 1;
    }
    None
}
