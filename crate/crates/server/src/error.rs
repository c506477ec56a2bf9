use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use diary_core::ServiceError;
use serde::{Deserialize, Serialize};

use crate::auth::AuthError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error: ErrorBody,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn envelope(&self) -> ErrorEnvelope {
        ErrorEnvelope {
            error: ErrorBody {
                code: self.code.clone(),
                message: self.message.clone(),
            },
        }
    }
}

fn status_for(code: &str) -> StatusCode {
    match code {
        "unknown_participant" | "unknown_session" | "unknown_scope" => StatusCode::NOT_FOUND,
        "wrong_channel" | "session_expired" | "idle_mode_has_no_input" => StatusCode::CONFLICT,
        "provider_timeout" => StatusCode::GATEWAY_TIMEOUT,
        "provider_unreachable"
        | "provider_rejected"
        | "script_exhausted"
        | "recorded_failure"
        | "notifier_failure" => StatusCode::BAD_GATEWAY,
        "provider_not_configured" | "missing_credential" => StatusCode::SERVICE_UNAVAILABLE,
        "storage_full" | "corrupt_log" | "io_error" | "serialization_error" => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let code = e.code();
        ApiError::new(status_for(code), code, e.to_string())
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        let status = match e {
            AuthError::Forbidden(_) => StatusCode::FORBIDDEN,
            _ => StatusCode::UNAUTHORIZED,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.envelope())).into_response()
    }
}
