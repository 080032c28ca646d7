use std::sync::Arc;

use anyhow::{bail, Context};

use oscar_core::embedding::{CachedBackend, EmbeddingBackend, RemoteBackend, SyntheticBackend, SyntheticSpec};
use oscar_core::llm::{HttpLlmClient, LlmClient, MockLlm};

use crate::BackendArgs;

/// Builds the embedding backend. A synthetic backend takes its worlds from
/// `--synthetic`, falling back to `fallback` (a dataset's own definitions).
pub fn embedding(args: &BackendArgs, fallback: Option<&SyntheticSpec>) -> anyhow::Result<Arc<dyn EmbeddingBackend>> {
    if args.backend == "synthetic" {
        let spec = match (&args.synthetic, fallback) {
            (Some(path), _) => Some(SyntheticSpec::load(path)?),
            (None, Some(spec)) => Some(spec.clone()),
            (None, None) => None,
        };
        let worlds = match spec {
            Some(s) => s.build()?,
            None => Vec::new(),
        };
        return Ok(Arc::new(SyntheticBackend::new(worlds)));
    }
    if !(args.backend.starts_with("http://") || args.backend.starts_with("https://")) {
        bail!("--backend must be `synthetic` or an http(s) URL, got {:?}", args.backend);
    }
    let remote = RemoteBackend::new(&args.backend, &args.model_label, None, args.timeout_ms)
        .with_context(|| format!("configuring embedding backend {}", args.backend))?;
    let mut cached = CachedBackend::new(remote);
    if let Some(dir) = &args.cache_dir {
        cached = cached.with_dir(dir);
    }
    Ok(Arc::new(cached))
}

pub fn llm(spec: &str) -> anyhow::Result<Arc<dyn LlmClient>> {
    if spec == "mock" {
        return Ok(Arc::new(MockLlm::echo_current_step()));
    }
    Ok(Arc::new(HttpLlmClient::new(spec)?))
}
