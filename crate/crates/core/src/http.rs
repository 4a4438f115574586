//! Thin blocking HTTP layer shared by the translation and inference clients.
//! Both endpoints speak the same dialect: POST a JSON object, read a JSON
//! object back, extract one text field.

use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use crate::llm_eval::InferenceClient;
use crate::synthgen::TranslationClient;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("endpoint returned HTTP {status}")]
    Http { status: u16 },
    #[error("network failure: {0}")]
    Network(String),
    #[error("bad response: {0}")]
    BadResponse(String),
}

fn agent(timeout_secs: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_secs)))
        .http_status_as_error(false)
        .build()
        .new_agent()
}

fn post_for_text(
    agent: &ureq::Agent,
    endpoint: &str,
    payload: &Value,
    response_field: &str,
    bearer: Option<&str>,
) -> Result<String, TransportError> {
    let mut request = agent.post(endpoint);
    if let Some(token) = bearer {
        request = request.header("Authorization", &format!("Bearer {token}"));
    }
    let mut response = request
        .send_json(payload)
        .map_err(|e| TransportError::Network(e.to_string()))?;
    let status = response.status().as_u16();
    if !(200..300).contains(&status) {
        return Err(TransportError::Http { status });
    }
    let body: Value = response
        .body_mut()
        .read_json()
        .map_err(|e| TransportError::BadResponse(e.to_string()))?;
    body.get(response_field)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| {
            TransportError::BadResponse(format!("missing `{response_field}` field in response"))
        })
}

/// Completion client for a local inference server. Requests deterministic
/// decoding (temperature 0) unless configured otherwise.
pub struct HttpInferenceClient {
    endpoint: String,
    response_field: String,
    temperature: f64,
    agent: ureq::Agent,
}

impl HttpInferenceClient {
    pub fn new(endpoint: impl Into<String>, response_field: impl Into<String>) -> Self {
        HttpInferenceClient {
            endpoint: endpoint.into(),
            response_field: response_field.into(),
            temperature: 0.0,
            agent: agent(300),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }
}

impl InferenceClient for HttpInferenceClient {
    fn complete(&self, model_id: &str, prompt: &str) -> Result<String, TransportError> {
        let payload = serde_json::json!({
            "model": model_id,
            "prompt": prompt,
            "stream": false,
            "options": {"temperature": self.temperature},
        });
        post_for_text(&self.agent, &self.endpoint, &payload, &self.response_field, None)
    }
}

/// Translation client. The credential, when present, is sent as a bearer
/// token.
pub struct HttpTranslationClient {
    endpoint: String,
    model: String,
    response_field: String,
    credential: Option<String>,
    agent: ureq::Agent,
}

impl HttpTranslationClient {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        response_field: impl Into<String>,
        credential: Option<String>,
    ) -> Self {
        HttpTranslationClient {
            endpoint: endpoint.into(),
            model: model.into(),
            response_field: response_field.into(),
            credential,
            agent: agent(300),
        }
    }
}

impl TranslationClient for HttpTranslationClient {
    fn translate(&self, prompt: &str) -> Result<String, TransportError> {
        let payload = serde_json::json!({
            "model": self.model,
            "prompt": prompt,
        });
        post_for_text(
            &self.agent,
            &self.endpoint,
            &payload,
            &self.response_field,
            self.credential.as_deref(),
        )
    }
}
