use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

/// Seconds a client should wait before retrying a retryable backend failure.
pub const RETRY_AFTER_S: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("session {0} is closed")]
    SessionClosed(String),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error(transparent)]
    Core(#[from] oscar_core::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type ServiceResult<T> = Result<T, ServiceError>;

#[derive(Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    retryable: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    retry_after_s: Option<u64>,
}

impl ServiceError {
    pub fn kind(&self) -> &'static str {
        use oscar_core::Error as E;
        match self {
            ServiceError::UnknownSession(_) => "UnknownSession",
            ServiceError::SessionClosed(_) => "SessionClosed",
            ServiceError::BadRequest(_) => "BadRequest",
            ServiceError::Internal(_) => "Internal",
            ServiceError::Core(e) => match e {
                E::NonMonotoneTimestamp { .. } => "NonMonotoneTimestamp",
                E::InvalidRecipe(_) | E::UnparseableRecipe(_) => "InvalidRecipe",
                E::Backend(_) => "BackendError",
                E::MalformedLlmOutput(_) => "MalformedLlmOutput",
                E::Decode(_) => "DecodeError",
                E::DimensionMismatch { .. } => "DimensionMismatch",
                E::Io { .. } => "Io",
                _ => "BadRequest",
            },
        }
    }

    pub fn status(&self) -> StatusCode {
        use oscar_core::Error as E;
        match self {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::SessionClosed(_) => StatusCode::GONE,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ServiceError::Core(e) => match e {
                E::NonMonotoneTimestamp { .. } => StatusCode::CONFLICT,
                E::InvalidRecipe(_) | E::UnparseableRecipe(_) => StatusCode::UNPROCESSABLE_ENTITY,
                E::Backend(_) | E::MalformedLlmOutput(_) | E::DimensionMismatch { .. } => StatusCode::BAD_GATEWAY,
                E::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
                _ => StatusCode::BAD_REQUEST,
            },
        }
    }

    fn retryable(&self) -> Option<bool> {
        match self {
            ServiceError::Core(oscar_core::Error::Backend(b)) => Some(b.retryable),
            _ => None,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let retryable = self.retryable();
        let retry_after_s = retryable.filter(|r| *r).map(|_| RETRY_AFTER_S);
        let body = ErrorBody {
            error: self.kind(),
            message: self.to_string(),
            retryable,
            retry_after_s,
        };
        let mut resp = (self.status(), Json(body)).into_response();
        if let Some(s) = retry_after_s {
            resp.headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from_str(&s.to_string()).expect("digits"));
        }
        resp
    }
}
