//! Live tracking sessions: frame ingestion, progress, contextual Q/A and a
//! server-sent event stream.

pub mod error;
pub mod http;
pub mod qa;
pub mod session;

use std::net::SocketAddr;
use std::sync::Arc;

pub use error::{ServiceError, ServiceResult};
pub use http::router;
pub use qa::{build_qa_prompt, QAExchange, QaContext};
pub use session::{ServiceConfig, SessionEvent, SessionManager, SessionSnapshot};

/// Binds `addr` and serves until the process ends.
pub async fn serve(manager: Arc<SessionManager>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(manager)).await
}
