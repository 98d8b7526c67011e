//! Response envelope and the closed set of error codes.

use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use secrisk_core::delphi::DelphiError;
use secrisk_core::registry::RegistryError;
use secrisk_core::treatment::TreatmentError;
use serde::{Deserialize, Serialize};

pub const REQUEST_ID_HEADER: &str = "x-request-id";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Body is not well-formed JSON or a header is unparseable.
    MalformedRequest,
    /// Well-formed input rejected by a module's validation.
    ValidationFailed,
    /// Missing or unknown bearer token.
    Unauthenticated,
    /// Authenticated, but the role or handle may not do this.
    Forbidden,
    NotFound,
    /// The resource is in a state that does not allow the operation.
    Conflict,
    /// An `If-Match` precondition did not hold.
    VersionConflict,
    /// The store could not be read or written.
    StorageFault,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 8] = [
        ErrorCode::MalformedRequest,
        ErrorCode::ValidationFailed,
        ErrorCode::Unauthenticated,
        ErrorCode::Forbidden,
        ErrorCode::NotFound,
        ErrorCode::Conflict,
        ErrorCode::VersionConflict,
        ErrorCode::StorageFault,
    ];

    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::MalformedRequest => StatusCode::BAD_REQUEST,
            ErrorCode::ValidationFailed => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::Unauthenticated => StatusCode::UNAUTHORIZED,
            ErrorCode::Forbidden => StatusCode::FORBIDDEN,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Conflict | ErrorCode::VersionConflict => StatusCode::CONFLICT,
            ErrorCode::StorageFault => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::MalformedRequest => "malformed_request",
            ErrorCode::ValidationFailed => "validation_failed",
            ErrorCode::Unauthenticated => "unauthenticated",
            ErrorCode::Forbidden => "forbidden",
            ErrorCode::NotFound => "not_found",
            ErrorCode::Conflict => "conflict",
            ErrorCode::VersionConflict => "version_conflict",
            ErrorCode::StorageFault => "storage_fault",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

/// Every response body. Exactly one of `payload` and `error` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEnvelope<T> {
    pub request_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::MalformedRequest, message)
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::ValidationFailed, message)
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Forbidden, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Conflict, message)
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let code = match &e {
            RegistryError::NotFound(_) => ErrorCode::NotFound,
            RegistryError::VersionConflict { .. } => ErrorCode::VersionConflict,
            RegistryError::SnapshotImmutable(_) => ErrorCode::Conflict,
            RegistryError::Invalid { document: "store", field, .. } if field != "key" => ErrorCode::StorageFault,
            RegistryError::SnapshotMismatch { .. }
            | RegistryError::StoreLocked(_)
            | RegistryError::StoreUnwritable { .. }
            | RegistryError::Io { .. } => ErrorCode::StorageFault,
            RegistryError::Delphi(d) => return ApiError::from(d.clone()),
            _ => ErrorCode::ValidationFailed,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<DelphiError> for ApiError {
    fn from(e: DelphiError) -> Self {
        let code = match &e {
            DelphiError::UnknownParticipant(_) | DelphiError::NotModerator(_) => ErrorCode::Forbidden,
            DelphiError::NoSuchRound(_) => ErrorCode::NotFound,
            DelphiError::Finalized
            | DelphiError::Deadlocked(_)
            | DelphiError::NoActiveRound
            | DelphiError::RoundActive(_)
            | DelphiError::RoundCapReached(_)
            | DelphiError::IncompleteRound { .. }
            | DelphiError::ConsensusNotReached
            | DelphiError::NotDeadlocked => ErrorCode::Conflict,
            _ => ErrorCode::ValidationFailed,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<TreatmentError> for ApiError {
    fn from(e: TreatmentError) -> Self {
        ApiError::invalid(e.to_string())
    }
}

/// A handler outcome before the request id is attached.
pub type ApiResult = Result<(StatusCode, serde_json::Value), ApiError>;

pub fn ok<T: Serialize>(payload: &T) -> ApiResult {
    with_status(StatusCode::OK, payload)
}

pub fn created<T: Serialize>(payload: &T) -> ApiResult {
    with_status(StatusCode::CREATED, payload)
}

pub fn with_status<T: Serialize>(status: StatusCode, payload: &T) -> ApiResult {
    let value = serde_json::to_value(payload).map_err(|e| ApiError::new(ErrorCode::StorageFault, e.to_string()))?;
    Ok((status, value))
}

pub fn respond(request_id: &str, result: ApiResult) -> Response {
    let (status, envelope) = match result {
        Ok((status, payload)) => {
            (status, ApiEnvelope { request_id: request_id.to_string(), payload: Some(payload), error: None })
        }
        Err(e) => {
            if e.code == ErrorCode::StorageFault {
                tracing::error!(request_id, message = %e.message, "storage fault");
            }
            (
                e.code.status(),
                ApiEnvelope {
                    request_id: request_id.to_string(),
                    payload: None,
                    error: Some(ErrorBody { code: e.code, message: e.message }),
                },
            )
        }
    };
    let mut response = (status, axum::Json(envelope)).into_response();
    if let Ok(v) = HeaderValue::from_str(request_id) {
        response.headers_mut().insert(REQUEST_ID_HEADER, v);
    }
    response
}

/// Parses a JSON body, separating syntax errors from shape errors.
pub fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_data() {
            ApiError::invalid(format!("{path}: {inner}"))
        } else {
            ApiError::malformed(inner.to_string())
        }
    })
}
