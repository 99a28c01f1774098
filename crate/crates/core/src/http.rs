//! Minimal JSON-over-HTTP transport shared by the remote embedding and
//! chat-completion providers.

use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    /// Network failure, timeout, 429 or 5xx after all retries were spent.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    /// A response the caller should not retry (4xx other than 429).
    #[error("endpoint rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl HttpError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, HttpError::Transport { .. })
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Duration,
}

impl JsonClient {
    pub fn new(api_key: Option<String>, timeout: Duration, max_retries: u32) -> Self {
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().new_agent();
        Self { agent, api_key, max_retries, backoff: Duration::from_millis(250) }
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    /// POSTs `body` and parses the JSON reply, retrying transient failures
    /// with exponential backoff.
    pub fn post(&self, url: &str, body: &Value) -> Result<Value, HttpError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.post_once(url, body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(message)) => {
                    if attempt > self.max_retries {
                        return Err(HttpError::Transport { attempts: attempt, message });
                    }
                    let factor = 1u32 << (attempt - 1).min(5);
                    std::thread::sleep((self.backoff * factor).min(Duration::from_secs(8)));
                }
            }
        }
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<Value, Attempt> {
        let mut request = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(body).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("status {status}: {}", snippet(&text))));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(HttpError::Rejected { status, body: snippet(&text) }));
        }
        serde_json::from_str(&text).map_err(|e| Attempt::Fatal(HttpError::Malformed(e.to_string())))
    }
}

enum Attempt {
    Retry(String),
    Fatal(HttpError),
}

fn snippet(text: &str) -> String {
    text.chars().take(300).collect()
}
