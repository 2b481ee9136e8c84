use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use scanfit_core::Error as CoreError;

/// Error returned to clients as `{code, message, detail}`.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReviewError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("revision conflict: expected {expected}, current {current}")]
    Conflict { expected: u64, current: u64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("illegal status transition: {from} -> {to}")]
    IllegalTransition { from: String, to: String },
    #[error("object unobservable: {0}")]
    Unobservable(String),
    #[error("unauthorized")]
    Unauthorized,
    #[error("internal error: {0}")]
    Internal(String),
}

pub type ReviewResult<T> = Result<T, ReviewError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub detail: serde_json::Value,
}

impl ReviewError {
    pub fn status(&self) -> StatusCode {
        match self {
            ReviewError::NotFound(_) => StatusCode::NOT_FOUND,
            ReviewError::Conflict { .. } => StatusCode::CONFLICT,
            ReviewError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            ReviewError::IllegalTransition { .. } | ReviewError::Unobservable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ReviewError::Unauthorized => StatusCode::UNAUTHORIZED,
            ReviewError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ReviewError::NotFound(_) => "not_found",
            ReviewError::Conflict { .. } => "conflict",
            ReviewError::InvalidRequest(_) => "invalid_request",
            ReviewError::IllegalTransition { .. } => "illegal_transition",
            ReviewError::Unobservable(_) => "unobservable",
            ReviewError::Unauthorized => "unauthorized",
            ReviewError::Internal(_) => "internal",
        }
    }

    pub fn body(&self) -> ErrorBody {
        let detail = match self {
            ReviewError::Conflict { expected, current } => {
                serde_json::json!({ "expected_revision": expected, "current_revision": current })
            }
            ReviewError::IllegalTransition { from, to } => serde_json::json!({ "from": from, "to": to }),
            ReviewError::NotFound(what) | ReviewError::InvalidRequest(what) | ReviewError::Unobservable(what) => {
                serde_json::json!(what)
            }
            ReviewError::Unauthorized | ReviewError::Internal(_) => serde_json::Value::Null,
        };
        ErrorBody {
            code: self.code().into(),
            message: self.to_string(),
            detail,
        }
    }
}

impl From<CoreError> for ReviewError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::UnknownModel(id) => ReviewError::NotFound(format!("CAD model {id}")),
            CoreError::IllegalTransition { from, to } => ReviewError::IllegalTransition { from, to },
            CoreError::NoObservations => ReviewError::Unobservable(e.to_string()),
            CoreError::Unobservable(m) => ReviewError::Unobservable(m),
            CoreError::InvalidConfig(m) => ReviewError::InvalidRequest(m),
            other => ReviewError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        if let ReviewError::Internal(m) = &self {
            tracing::error!(error = %m, "request failed");
        }
        (self.status(), Json(self.body())).into_response()
    }
}
