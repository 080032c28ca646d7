//! Chat-style LLM clients.
//!
//! Wire protocol: `POST {endpoint}/v1/chat` with
//! `{"messages": [{"role", "content"}]}`, answered by `{"content": str}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::BackendError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

pub trait LlmClient: Send + Sync {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, BackendError>;
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct ChatResponse {
    content: String,
}

pub struct HttpLlmClient {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpLlmClient {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

    pub fn new(endpoint: &str) -> Result<Self, BackendError> {
        Self::with_timeout(endpoint, Self::DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(endpoint: &str, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::new(format!("building HTTP client: {e}")))?;
        Ok(Self {
            url: format!("{}/v1/chat", endpoint.trim_end_matches('/')),
            client,
        })
    }
}

impl LlmClient for HttpLlmClient {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let resp = self
            .client
            .post(&self.url)
            .json(&ChatRequest { messages })
            .send()
            .map_err(|e| BackendError::retryable(format!("POST {}: {e}", self.url)))?;
        let status = resp.status();
        if !status.is_success() {
            let msg = format!("POST {} returned {status}", self.url);
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                BackendError::retryable(msg)
            } else {
                BackendError::new(msg)
            });
        }
        let body: ChatResponse = resp
            .json()
            .map_err(|e| BackendError::new(format!("invalid chat response from {}: {e}", self.url)))?;
        Ok(body.content)
    }
}

type Responder = dyn Fn(&[ChatMessage]) -> Result<String, BackendError> + Send + Sync;

/// In-process client for tests and offline runs.
pub struct MockLlm {
    responder: Box<Responder>,
}

impl MockLlm {
    pub fn from_fn(
        f: impl Fn(&[ChatMessage]) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            responder: Box::new(f),
        }
    }

    pub fn fixed(reply: impl Into<String>) -> Self {
        let reply = reply.into();
        Self::from_fn(move |_| Ok(reply.clone()))
    }

    pub fn failing(message: impl Into<String>) -> Self {
        let message = message.into();
        Self::from_fn(move |_| Err(BackendError::retryable(message.clone())))
    }

    /// Answers with the prompt's `Current step:` line, or a fixed notice when there is none.
    pub fn echo_current_step() -> Self {
        Self::from_fn(|messages| {
            let line = messages
                .iter()
                .rev()
                .flat_map(|m| m.content.lines())
                .find(|l| l.starts_with("Current step:"))
                .map(str::to_string);
            Ok(line.unwrap_or_else(|| "I do not know the current step yet.".into()))
        })
    }
}

impl LlmClient for MockLlm {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        (self.responder)(messages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_finds_current_step_line() {
        let llm = MockLlm::echo_current_step();
        let out = llm
            .chat(&[ChatMessage::user("Recipe...\nCurrent step: 2. Fry the onion.\nQuestion: ?")])
            .unwrap();
        assert_eq!(out, "Current step: 2. Fry the onion.");
    }

    #[test]
    fn unreachable_endpoint_is_retryable_backend_error() {
        let client = HttpLlmClient::with_timeout("http://127.0.0.1:9", Duration::from_millis(300)).unwrap();
        let err = client.chat(&[ChatMessage::user("hi")]).unwrap_err();
        assert!(err.retryable);
    }
}
