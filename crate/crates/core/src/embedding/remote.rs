use std::sync::OnceLock;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{BackendDescriptor, BackendKind, EmbeddingBackend, EmbeddingVector};
use crate::error::{BackendError, Error, Result};
use crate::frames::{FrameRef, ImageFormat, ImageRef};

/// Per-call client budget for embedding requests.
pub const DEFAULT_TIMEOUT_MS: u64 = 1000;

#[derive(Serialize)]
#[serde(untagged)]
enum Item<'a> {
    Text(&'a str),
    Image { b64: String, format: ImageFormat },
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    kind: &'static str,
    items: Vec<Item<'a>>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

/// Client for `POST {endpoint}/v1/embed`.
pub struct RemoteBackend {
    url: String,
    endpoint: String,
    model_label: String,
    dim: OnceLock<usize>,
    timeout: Duration,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    /// `dim` may be left unset, in which case it is fixed by the first response.
    pub fn new(endpoint: &str, model_label: &str, dim: Option<usize>, timeout_ms: u64) -> Result<Self> {
        let timeout = Duration::from_millis(timeout_ms);
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::new(format!("building HTTP client: {e}")))?;
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let dim_cell = OnceLock::new();
        if let Some(d) = dim {
            if d == 0 {
                return Err(Error::InvalidArgument("embedding dim must be > 0".into()));
            }
            let _ = dim_cell.set(d);
        }
        Ok(Self {
            url: format!("{endpoint}/v1/embed"),
            endpoint,
            model_label: model_label.to_string(),
            dim: dim_cell,
            timeout,
            client,
        })
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn call(&self, kind: &'static str, items: Vec<Item<'_>>) -> Result<Vec<EmbeddingVector>> {
        let expected = items.len();
        let resp = self
            .client
            .post(&self.url)
            .json(&EmbedRequest { kind, items })
            .send()
            .map_err(|e| BackendError::retryable(format!("POST {}: {e}", self.url)))?;
        let status = resp.status();
        if !status.is_success() {
            let msg = format!("POST {} returned {status}", self.url);
            return Err(if status.is_server_error() {
                BackendError::retryable(msg)
            } else {
                BackendError::new(msg)
            }
            .into());
        }
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| BackendError::new(format!("invalid embed response: {e}")))?;
        if body.vectors.len() != expected {
            return Err(BackendError::new(format!(
                "embed response has {} vectors for {expected} items",
                body.vectors.len()
            ))
            .into());
        }
        let dim = *self.dim.get_or_init(|| body.dim);
        if body.dim != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: body.dim,
            });
        }
        body.vectors
            .into_iter()
            .map(|v| {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: v.len(),
                    });
                }
                EmbeddingVector::normalized(v)
                    .map_err(|_| BackendError::new("embed response contains a zero or non-finite vector").into())
            })
            .collect()
    }
}

impl EmbeddingBackend for RemoteBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::Remote,
            endpoint: Some(self.endpoint.clone()),
            dim: self.dim.get().copied().unwrap_or(0),
            model_label: self.model_label.clone(),
        }
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::InvalidArgument("no texts to embed".into()));
        }
        self.call("text", texts.iter().map(|t| Item::Text(t)).collect())
    }

    fn embed_images(&self, frames: &[FrameRef]) -> Result<Vec<EmbeddingVector>> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument("no frames to embed".into()));
        }
        let items = frames
            .iter()
            .map(|f| {
                let (b64, format) = match &f.image {
                    ImageRef::Inline { b64, format } => (b64.clone(), *format),
                    other => {
                        let (bytes, format) = other.load_bytes()?;
                        (base64::engine::general_purpose::STANDARD.encode(bytes), format)
                    }
                };
                Ok(Item::Image { b64, format })
            })
            .collect::<Result<Vec<_>>>()?;
        self.call("image", items)
    }
}
