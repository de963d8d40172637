//! Blocking HTTP clients for the pluggable remote collaborators: workflow generator,
//! parameter proposer and semantic validator. Call only from blocking contexts.

use std::time::Duration;

use labrun_core::detector::{DetectorError, SemanticValidator, SemanticVerdict, TaskConstraints};
use labrun_core::env::EnvConfig;
use labrun_core::optimizer::{OptimizerError, RemoteProposer, RemoteRequest};
use labrun_core::orchestrator::{ProviderError, WorkflowProvider};
use labrun_core::sim::ObservationFrame;
use serde::Serialize;
use serde_json::{json, Value};

const TIMEOUT: Duration = Duration::from_secs(30);

fn post(url: &str, body: &impl Serialize) -> Result<Value, String> {
    let client = reqwest::blocking::Client::builder()
        .timeout(TIMEOUT)
        .build()
        .map_err(|e| e.to_string())?;
    let resp = client
        .post(url)
        .json(body)
        .send()
        .map_err(|e| e.to_string())?;
    let status = resp.status();
    if !status.is_success() {
        return Err(format!("{url} answered {status}"));
    }
    resp.json::<Value>().map_err(|e| e.to_string())
}

/// Posts `{"query", "env"}` and expects `{"protocol": "<text>"}`.
#[derive(Debug, Clone)]
pub struct RemoteProvider {
    pub url: String,
}

impl WorkflowProvider for RemoteProvider {
    fn id(&self) -> &str {
        "remote"
    }

    fn generate(&self, query: &str, env: &EnvConfig) -> Result<String, ProviderError> {
        let reply =
            post(&self.url, &json!({ "query": query, "env": env.id })).map_err(ProviderError)?;
        reply
            .get("protocol")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProviderError("reply has no `protocol` string".into()))
    }
}

/// A proposer that posts each [`RemoteRequest`] to `url`.
pub fn remote_proposer(url: &str) -> RemoteProposer {
    let url = url.to_string();
    RemoteProposer::new("remote", move |req: &RemoteRequest| {
        post(&url, req).map_err(OptimizerError::RemoteUnavailable)
    })
}

/// Posts `{"frame", "requirements"}` and expects a [`SemanticVerdict`].
#[derive(Debug, Clone)]
pub struct RemoteValidator {
    pub url: String,
}

impl SemanticValidator for RemoteValidator {
    fn validate(
        &self,
        frame: &ObservationFrame,
        constraints: &TaskConstraints,
    ) -> Result<SemanticVerdict, DetectorError> {
        let requirements = constraints
            .requirements(frame.class)
            .ok_or(DetectorError::MissingConstraintSet(frame.class))?;
        let reply = post(
            &self.url,
            &json!({ "frame": frame, "requirements": requirements }),
        )
        .map_err(DetectorError::Validator)?;
        serde_json::from_value(reply).map_err(|e| DetectorError::Validator(e.to_string()))
    }
}
