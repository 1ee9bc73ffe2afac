//! Blocking JSON-over-HTTP client with bounded retries, shared by the chat,
//! embedding, and toxicity backends.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            base_delay_ms: 250,
            timeout_secs: 30,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry `attempt` (1-based): base * 2^(attempt-1).
    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1 << (attempt.saturating_sub(1)).min(16)))
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    policy: RetryPolicy,
    api_key: Option<String>,
    #[cfg(feature = "http")]
    inner: reqwest::blocking::Client,
}

impl JsonClient {
    pub fn new(policy: RetryPolicy, api_key: Option<String>) -> Result<Self> {
        #[cfg(feature = "http")]
        let inner = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(policy.timeout_secs))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(Self {
            policy,
            api_key,
            #[cfg(feature = "http")]
            inner,
        })
    }

    pub fn policy(&self) -> RetryPolicy {
        self.policy
    }

    /// POSTs `body` and parses the JSON reply. Transport errors and 5xx/429
    /// responses are retried; other statuses fail immediately.
    pub fn post(&self, url: &str, body: &Value) -> Result<Value> {
        let mut attempt = 0;
        loop {
            match self.post_once(url, body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(msg)) => return Err(Error::Backend(msg)),
                Err(Attempt::Retryable(msg)) => {
                    if attempt >= self.policy.max_retries {
                        return Err(Error::Backend(format!(
                            "{url}: giving up after {} attempts: {msg}",
                            attempt + 1
                        )));
                    }
                    attempt += 1;
                    log::warn!("{url}: attempt {attempt} failed ({msg}), retrying");
                    std::thread::sleep(self.policy.backoff(attempt));
                }
            }
        }
    }

    #[cfg(feature = "http")]
    fn post_once(&self, url: &str, body: &Value) -> std::result::Result<Value, Attempt> {
        let mut req = self.inner.post(url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retryable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retryable(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(format!("status {status}")));
        }
        resp.json::<Value>().map_err(|e| Attempt::Fatal(format!("bad json: {e}")))
    }

    #[cfg(not(feature = "http"))]
    fn post_once(&self, url: &str, _body: &Value) -> std::result::Result<Value, Attempt> {
        let _ = &self.api_key;
        Err(Attempt::Fatal(format!("{url}: built without http support")))
    }
}

enum Attempt {
    #[cfg_attr(not(feature = "http"), allow(dead_code))]
    Retryable(String),
    Fatal(String),
}
