use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{Backend, BackendDescriptor, BackendKind, DetectResponse, ImageRef};
use crate::error::{Error, Result};

/// Retry schedule for transport failures: `attempts` tries, sleeping
/// `base_delay * 2^k` after the k-th failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(250),
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Serialize)]
struct DetectBody<'a> {
    image_path: &'a str,
    prompts: &'a [String],
}

#[derive(Deserialize)]
struct ModelInfo {
    name: String,
    supports_background_class: bool,
    #[serde(default)]
    max_concurrency: Option<usize>,
}

#[derive(Deserialize)]
struct Health {
    ok: bool,
}

/// Client for an inference adapter speaking the `/v1` JSON protocol.
pub struct RemoteBackend {
    descriptor: BackendDescriptor,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

enum Failure {
    Retryable(String),
    Fatal(Error),
}

impl RemoteBackend {
    /// Connects and reads `/v1/model` to fill in the descriptor.
    pub fn connect(base_url: &str, retry: RetryPolicy) -> Result<Self> {
        let agent = ureq::AgentBuilder::new().timeout(retry.timeout).build();
        let base = base_url.trim_end_matches('/').to_string();
        let mut backend = Self {
            descriptor: BackendDescriptor {
                name: base.clone(),
                kind: BackendKind::Remote,
                supports_background_class: false,
                max_concurrency: 1,
                base_url: Some(base),
            },
            agent,
            retry,
        };
        let info: ModelInfo = backend.with_retry(|b| b.get_json("/v1/model"))?;
        backend.descriptor.name = info.name;
        backend.descriptor.supports_background_class = info.supports_background_class;
        backend.descriptor.max_concurrency = info.max_concurrency.unwrap_or(1).max(1);
        Ok(backend)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.descriptor.base_url.as_deref().unwrap_or_default())
    }

    pub fn health(&self) -> Result<bool> {
        let health: Health = self.with_retry(|b| b.get_json("/v1/health"))?;
        Ok(health.ok)
    }

    fn get_json<T: serde::de::DeserializeOwned>(&self, path: &str) -> std::result::Result<T, Failure> {
        let response = self.agent.get(&self.url(path)).call().map_err(classify)?;
        response
            .into_json()
            .map_err(|e| Failure::Fatal(Error::RemoteSchema(format!("{path}: {e}"))))
    }

    fn with_retry<T>(&self, mut call: impl FnMut(&Self) -> std::result::Result<T, Failure>) -> Result<T> {
        let mut last = String::new();
        for attempt in 0..self.retry.attempts.max(1) {
            match call(self) {
                Ok(value) => return Ok(value),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => {
                    warn!("{}: attempt {} failed: {msg}", self.descriptor.name, attempt + 1);
                    last = msg;
                    if attempt + 1 < self.retry.attempts {
                        std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt));
                    }
                }
            }
        }
        Err(Error::RemoteUnavailable(format!(
            "{} after {} attempt(s): {last}",
            self.descriptor.base_url.as_deref().unwrap_or_default(),
            self.retry.attempts
        )))
    }
}

fn classify(err: ureq::Error) -> Failure {
    match err {
        ureq::Error::Status(code, response) if code >= 500 => {
            Failure::Retryable(format!("status {code}: {}", response.into_string().unwrap_or_default()))
        }
        ureq::Error::Status(code, response) => Failure::Fatal(Error::RemoteSchema(format!(
            "status {code}: {}",
            response.into_string().unwrap_or_default()
        ))),
        ureq::Error::Transport(t) => Failure::Retryable(t.to_string()),
    }
}

impl Backend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn detect(&self, image: &ImageRef, prompts: &[String]) -> Result<DetectResponse> {
        let body = DetectBody {
            image_path: &image.path,
            prompts,
        };
        let response: DetectResponse = self.with_retry(|b| {
            let reply = b
                .agent
                .post(&b.url("/v1/detect"))
                .send_json(&body)
                .map_err(classify)?;
            reply
                .into_json()
                .map_err(|e| Failure::Fatal(Error::RemoteSchema(e.to_string())))
        })?;
        response.validate(prompts.len())?;
        Ok(response)
    }
}
