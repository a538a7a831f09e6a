//! Error codes shared by every service and their clients.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use asky_core::metadata::MetadataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Unprovisioned,
    AlreadyProvisioned,
    AttestationFailed,
    Unauthorized,
    PermissionDenied,
    NotFound,
    AlreadyExists,
    Conflict,
    EmptyReaderSet,
    Integrity,
    BadRequest,
    TokenRejected,
    TokenModeDisabled,
    Upstream,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::Unprovisioned => StatusCode::SERVICE_UNAVAILABLE,
            ErrorCode::AlreadyProvisioned | ErrorCode::AlreadyExists | ErrorCode::Conflict => {
                StatusCode::CONFLICT
            }
            ErrorCode::AttestationFailed | ErrorCode::Unauthorized => StatusCode::UNAUTHORIZED,
            ErrorCode::PermissionDenied | ErrorCode::TokenRejected | ErrorCode::TokenModeDisabled => {
                StatusCode::FORBIDDEN
            }
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::EmptyReaderSet => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::Upstream => StatusCode::BAD_GATEWAY,
            ErrorCode::Integrity | ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code:?}: {message}")]
pub struct ApiError {
    #[serde(rename = "error")]
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn unauthorized(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Unauthorized, message)
    }

    pub fn permission_denied(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::PermissionDenied, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}

impl From<MetadataError> for ApiError {
    fn from(e: MetadataError) -> Self {
        let code = match &e {
            MetadataError::NotFound(_) => ErrorCode::NotFound,
            MetadataError::AlreadyExists(_) => ErrorCode::AlreadyExists,
            MetadataError::Integrity(_) => ErrorCode::Integrity,
            MetadataError::Conflict => ErrorCode::Conflict,
            MetadataError::Backend(_) => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<asky_core::Error> for ApiError {
    fn from(e: asky_core::Error) -> Self {
        let code = match e {
            asky_core::Error::EmptyReaderSet => ErrorCode::EmptyReaderSet,
            _ => ErrorCode::BadRequest,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        ApiError::internal(e.to_string())
    }
}
