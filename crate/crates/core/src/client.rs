//! HTTP client for a text-generation endpoint.

use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::pairs::DEFAULT_EOT_TOKEN;

/// Environment variable holding an optional bearer token.
pub const TOKEN_ENV: &str = "SCOPEFORGE_API_TOKEN";

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("endpoint unavailable: {0}")]
    EndpointUnavailable(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: u32,
    pub stop_sequences: Vec<String>,
    pub temperature: f64,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
}

impl Default for GenerationRequest {
    fn default() -> Self {
        Self {
            prompt: String::new(),
            max_new_tokens: 256,
            stop_sequences: vec![DEFAULT_EOT_TOKEN.to_string()],
            temperature: 0.0,
            timeout: Duration::from_secs(120),
        }
    }
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), ClientError> {
        if self.max_new_tokens == 0 {
            return Err(ClientError::InvalidRequest("max_new_tokens must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(ClientError::InvalidRequest("temperature must be non-negative".into()));
        }
        Ok(())
    }

    pub fn with_prompt(&self, prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            ..self.clone()
        }
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StopReason {
    StopSequence,
    MaxTokens,
    EndOfStream,
}

impl StopReason {
    fn parse_wire(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "stop_sequence" | "stop" => Some(StopReason::StopSequence),
            "max_tokens" | "length" => Some(StopReason::MaxTokens),
            "end_of_stream" | "eos" => Some(StopReason::EndOfStream),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub text: String,
    pub latency: Duration,
    pub stop_reason: StopReason,
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    max_new_tokens: u32,
    stop: &'a [String],
    temperature: f64,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    text: String,
    #[serde(default)]
    stop_reason: Option<String>,
}

/// Cuts `text` at the earliest occurrence of any stop sequence.
pub fn truncate_at_stop(text: &str, stops: &[String]) -> Option<usize> {
    stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
}

#[derive(Debug, Clone)]
pub struct ModelClient {
    http: reqwest::Client,
    url: String,
    bearer: Option<String>,
    pub max_retries: u32,
    pub retry_backoff: Duration,
    pub max_in_flight: usize,
}

enum Attempt {
    Retry(ClientError),
    Fatal(ClientError),
}

impl ModelClient {
    /// `endpoint` is either the full `/generate` URL or its base.
    pub fn new(endpoint: &str) -> Result<Self, ClientError> {
        let http = reqwest::Client::builder()
            .build()
            .map_err(|e| ClientError::EndpointUnavailable(e.to_string()))?;
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/generate") {
            base.to_string()
        } else {
            format!("{base}/generate")
        };
        Ok(Self {
            http,
            url,
            bearer: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            max_retries: 2,
            retry_backoff: Duration::from_millis(200),
            max_in_flight: 4,
        })
    }

    pub fn with_bearer(mut self, token: Option<String>) -> Self {
        self.bearer = token;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    async fn attempt(&self, req: &GenerationRequest) -> Result<WireResponse, Attempt> {
        let body = WireRequest {
            prompt: &req.prompt,
            max_new_tokens: req.max_new_tokens,
            stop: &req.stop_sequences,
            temperature: req.temperature,
        };
        let mut builder = self.http.post(&self.url).json(&body);
        if let Some(token) = &self.bearer {
            builder = builder.bearer_auth(token);
        }
        let fut = async {
            let resp = builder
                .send()
                .await
                .map_err(|e| Attempt::Retry(ClientError::EndpointUnavailable(e.to_string())))?;
            let status = resp.status();
            if !status.is_success() {
                let err = ClientError::EndpointUnavailable(format!("{} returned {status}", self.url));
                return Err(match status.as_u16() {
                    502..=504 => Attempt::Retry(err),
                    _ => Attempt::Fatal(err),
                });
            }
            let bytes = resp
                .bytes()
                .await
                .map_err(|e| Attempt::Retry(ClientError::EndpointUnavailable(e.to_string())))?;
            serde_json::from_slice::<WireResponse>(&bytes)
                .map_err(|e| Attempt::Fatal(ClientError::MalformedResponse(e.to_string())))
        };
        match tokio::time::timeout(req.timeout, fut).await {
            Ok(r) => r,
            Err(_) => Err(Attempt::Fatal(ClientError::Timeout(req.timeout))),
        }
    }

    pub async fn complete(&self, req: &GenerationRequest) -> Result<GenerationResult, ClientError> {
        req.validate()?;
        let started = Instant::now();
        let mut tries = 0;
        let wire = loop {
            match self.attempt(req).await {
                Ok(w) => break w,
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    if tries >= self.max_retries {
                        return Err(e);
                    }
                    tries += 1;
                    tracing::warn!(attempt = tries, "retrying generate request: {e}");
                    tokio::time::sleep(self.retry_backoff * tries).await;
                }
            }
        };
        let latency = started.elapsed();
        let reported = match wire.stop_reason.as_deref() {
            None => StopReason::EndOfStream,
            Some(s) => StopReason::parse_wire(s)
                .ok_or_else(|| ClientError::MalformedResponse(format!("unknown stop_reason {s:?}")))?,
        };
        let mut text = wire.text;
        let stop_reason = match truncate_at_stop(&text, &req.stop_sequences) {
            Some(cut) => {
                text.truncate(cut);
                StopReason::StopSequence
            }
            None => reported,
        };
        Ok(GenerationResult {
            text,
            latency,
            stop_reason,
        })
    }

    /// One result per input, in input order. Failures are reported per item.
    pub async fn batch_predict(
        &self,
        tests: &[(String, String)],
        template: &GenerationRequest,
    ) -> Vec<(String, Result<GenerationResult, ClientError>)> {
        stream::iter(tests)
            .map(|(id, prompt)| async move {
                let req = template.with_prompt(prompt.as_str());
                (id.clone(), self.complete(&req).await)
            })
            .buffered(self.max_in_flight.max(1))
            .collect()
            .await
    }
}

/// Serialized form of one prediction, as written by `predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub test_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PredictionRecord {
    pub fn from_outcome(test_id: String, outcome: &Result<GenerationResult, ClientError>) -> Self {
        match outcome {
            Ok(r) => Self {
                test_id,
                prediction: Some(r.text.clone()),
                latency_ms: Some(r.latency.as_secs_f64() * 1000.0),
                stop_reason: Some(r.stop_reason),
                error: None,
            },
            Err(e) => Self {
                test_id,
                prediction: None,
                latency_ms: None,
                stop_reason: None,
                error: Some(e.to_string()),
            },
        }
    }
}
