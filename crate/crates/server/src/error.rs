use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use sievelab::study::StudyError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("missing or malformed bearer token")]
    Unauthenticated,
    #[error("{0}")]
    Forbidden(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
}

impl ApiError {
    /// HTTP status and a short machine-readable kind.
    pub fn classify(&self) -> (StatusCode, &'static str) {
        match self {
            ApiError::Unauthenticated => (StatusCode::UNAUTHORIZED, "unauthenticated"),
            ApiError::Forbidden(_) => (StatusCode::FORBIDDEN, "forbidden"),
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            ApiError::Study(e) => match e {
                StudyError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
                StudyError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
                StudyError::Authorization(_) => (StatusCode::FORBIDDEN, "authorization"),
                StudyError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
                StudyError::Limit(_) => (StatusCode::UNPROCESSABLE_ENTITY, "limit"),
                StudyError::Size(_) => (StatusCode::UNPROCESSABLE_ENTITY, "size"),
                StudyError::State(_) => (StatusCode::CONFLICT, "state"),
                StudyError::Invalid(_) => (StatusCode::BAD_REQUEST, "invalid"),
                StudyError::CorruptLog { .. } | StudyError::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = self.classify();
        let body = ErrorBody {
            error: kind,
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}
