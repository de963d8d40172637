use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use labrun_core::checker::CheckFinding;
use labrun_core::orchestrator::{OrchestratorError, PipelineError};
use serde::Serialize;
use serde_json::Value;

/// Error body: `{"error": code, "message": text, "findings": [...]}`.
#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub findings: Vec<CheckFinding>,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            error,
            message: message.into(),
            findings: Vec::new(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(what: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, what, message)
    }

    pub fn conflict(error: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, error, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn body(&self) -> Value {
        serde_json::to_value(self).expect("error body serializes")
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let (status, code) = match &e {
            PipelineError::ProviderFailure(_) => (StatusCode::BAD_GATEWAY, "provider_failure"),
            PipelineError::ParseFailure(_) => (StatusCode::BAD_REQUEST, "parse_failure"),
            PipelineError::UnrepairableProgram(_) => {
                (StatusCode::BAD_REQUEST, "unrepairable_program")
            }
            PipelineError::FaultPlan(_) => (StatusCode::BAD_REQUEST, "fault_plan"),
        };
        Self {
            findings: e.findings().to_vec(),
            ..Self::new(status, code, e.to_string())
        }
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::UnknownAlert(_) => Self::not_found("unknown_alert", e.to_string()),
            OrchestratorError::AlertNotOpen(_) => Self::conflict("alert_not_open", e.to_string()),
            OrchestratorError::RunNotSuspended(_) => {
                Self::conflict("run_not_suspended", e.to_string())
            }
            OrchestratorError::AlreadyTerminal(_) => {
                Self::conflict("already_terminal", e.to_string())
            }
            OrchestratorError::Pipeline(p) => p.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}
