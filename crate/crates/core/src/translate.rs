//! Re-targeting an axis set to a new object through a chat-completions LLM.
//!
//! The LLM receives the source axes as JSON and must answer with a complete
//! axis document for the new target. Answers are validated with the same
//! checks as an axis file; invalid answers are sent back with the errors
//! until the attempt limit is reached.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::axis::{AxisName, AxisSet};
use crate::error::{Error, Result};

pub const TEMPLATE_VERSION: &str = "axis-translate/v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.into(),
            content: content.into(),
        }
    }
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String>;
}

/// LLM connection settings as they appear in a pipeline config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LlmEndpoint {
    Stub {
        stub_file: PathBuf,
    },
    Http {
        url: String,
        model_name: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_attempts")]
        max_attempts: u32,
        #[serde(default)]
        temperature: f64,
    },
}

fn default_attempts() -> u32 {
    3
}

impl LlmEndpoint {
    pub fn max_attempts(&self) -> u32 {
        match self {
            LlmEndpoint::Stub { .. } => default_attempts(),
            LlmEndpoint::Http { max_attempts, .. } => *max_attempts,
        }
    }

    pub fn client(&self) -> Result<Box<dyn LlmClient>> {
        Ok(match self {
            LlmEndpoint::Stub { stub_file } => Box::new(StubLlm::from_path(stub_file)?),
            LlmEndpoint::Http {
                url,
                model_name,
                api_key_env,
                temperature,
                ..
            } => {
                let api_key = match api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        Error::Config(format!("environment variable {var} is not set"))
                    })?),
                    None => None,
                };
                Box::new(ChatCompletionsClient {
                    url: url.clone(),
                    model: model_name.clone(),
                    api_key,
                    temperature: *temperature,
                    agent: ureq::AgentBuilder::new()
                        .timeout(std::time::Duration::from_secs(300))
                        .build(),
                })
            }
        })
    }
}

/// Replays canned responses. A JSON array in the stub file is a sequence of
/// answers for successive attempts (the last one repeats); anything else is
/// returned verbatim on every attempt.
#[derive(Debug, Clone)]
pub struct StubLlm {
    responses: Vec<String>,
    calls: std::sync::Arc<std::sync::atomic::AtomicUsize>,
}

impl StubLlm {
    pub fn new(responses: Vec<String>) -> Self {
        Self {
            responses,
            calls: Default::default(),
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let responses = match serde_json::from_str::<serde_json::Value>(&text) {
            Ok(serde_json::Value::Array(items)) => items
                .into_iter()
                .map(|v| match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                })
                .collect(),
            _ => vec![text],
        };
        Ok(Self::new(responses))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl LlmClient for StubLlm {
    fn complete(&self, _messages: &[ChatMessage]) -> Result<String> {
        let n = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.responses
            .get(n)
            .or_else(|| self.responses.last())
            .cloned()
            .ok_or_else(|| Error::EndpointUnavailable("stub has no responses".into()))
    }
}

struct ChatCompletionsClient {
    url: String,
    model: String,
    api_key: Option<String>,
    temperature: f64,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

impl LlmClient for ChatCompletionsClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        let mut request = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
        });
        let reply: ChatReply = request
            .send_json(body)
            .map_err(|e| Error::EndpointUnavailable(e.to_string()))?
            .into_json()
            .map_err(|e| Error::EndpointUnavailable(format!("unreadable reply: {e}")))?;
        reply
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::EndpointUnavailable("reply has no choices".into()))
    }
}

#[derive(Debug, Clone)]
pub struct TranslationRequest {
    pub source: AxisSet,
    pub target_description: String,
    pub max_attempts: u32,
}

impl TranslationRequest {
    pub fn new(source: AxisSet, target_description: impl Into<String>, max_attempts: u32) -> Result<Self> {
        let target_description = target_description.into();
        if target_description.trim().is_empty() {
            return Err(Error::Config("translation target description is empty".into()));
        }
        Ok(Self {
            source,
            target_description,
            max_attempts: max_attempts.max(1),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationPrompt {
    pub version: &'static str,
    pub messages: Vec<ChatMessage>,
}

impl TranslationPrompt {
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .map(|m| format!("[{}]\n{}", m.role, m.content))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

const SYSTEM: &str = "You adapt prompt-engineering axis catalogues for zero-shot object detectors. \
You answer with a single JSON object and nothing else.";

pub fn build_translation_prompt(req: &TranslationRequest) -> TranslationPrompt {
    let names = AxisName::ALL.map(AxisName::as_str).join(", ");
    let user = format!(
        "Template version: {TEMPLATE_VERSION}\n\
Source target: {source_target}\n\
New target: {target}\n\n\
The catalogue below describes text prompts for detecting the source target. A prompt is \
assembled as [grammar] [size] [color] [taxonomy] [anatomy] [phenology], [negation] [emoji]. \
Each axis has a baseline level and alternative values.\n\n\
Rewrite every axis for the new target:\n\
- keep exactly these axes: {names};\n\
- keep roughly the same number of values per axis;\n\
- the taxonomy baseline must be the plain noun for the new target and may not be empty;\n\
- an empty string means the slot is left out; other baselines may be empty;\n\
- negation values list the structures most likely confused with the new target, \
written as clauses such as \"not a leaf, not a stem\";\n\
- emoji values are literal emoji characters related to the new target;\n\
- within an axis, the baseline and values must all be different strings.\n\n\
Answer with JSON of the form \
{{\"target\": string, \"axes\": {{axis name: {{\"baseline\": string, \"values\": [string, ...]}}}}}}.\n\n\
Source catalogue:\n{source}",
        source_target = req.source.target(),
        target = req.target_description.trim(),
        source = req.source.to_json_string(),
    );
    TranslationPrompt {
        version: TEMPLATE_VERSION,
        messages: vec![ChatMessage::new("system", SYSTEM), ChatMessage::new("user", user)],
    }
}

/// Pulls the outermost JSON object out of a reply that may carry prose or
/// code fences around it.
fn extract_json(reply: &str) -> Option<&str> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    (end > start).then(|| &reply[start..=end])
}

#[derive(Debug, Clone)]
pub struct Translation {
    pub axes: AxisSet,
    pub template_version: &'static str,
    pub attempts: u32,
}

pub fn translate_axes(req: &TranslationRequest, llm: &dyn LlmClient) -> Result<Translation> {
    let prompt = build_translation_prompt(req);
    let mut messages = prompt.messages.clone();
    let mut errors = Vec::new();
    for attempt in 1..=req.max_attempts {
        let reply = llm.complete(&messages)?;
        let outcome = match extract_json(&reply) {
            Some(json) => AxisSet::validate_json(json),
            None => Err(vec!["reply contains no JSON object".to_string()]),
        };
        match outcome {
            Ok(axes) => {
                return Ok(Translation {
                    axes,
                    template_version: prompt.version,
                    attempts: attempt,
                })
            }
            Err(errs) => {
                warn!("translation attempt {attempt} rejected: {}", errs.join("; "));
                messages.push(ChatMessage::new("assistant", reply));
                messages.push(ChatMessage::new(
                    "user",
                    format!(
                        "That answer is invalid:\n- {}\nReply again with the complete corrected JSON object.",
                        errs.join("\n- ")
                    ),
                ));
                errors = errs;
            }
        }
    }
    Err(Error::SchemaViolation {
        attempts: req.max_attempts,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pod_axes_json() -> String {
        include_str!("../fixtures/cowpea_pod_axes.json").to_string()
    }

    fn request() -> TranslationRequest {
        TranslationRequest::new(AxisSet::cowpea_flower(), "cowpea pods", 3).unwrap()
    }

    #[test]
    fn stub_round_trip() {
        let llm = StubLlm::new(vec![format!("```json\n{}\n```", pod_axes_json())]);
        let t = translate_axes(&request(), &llm).unwrap();
        assert_eq!(t.axes.axis(AxisName::Taxonomy).baseline, "pod");
        assert_eq!(t.attempts, 1);
        assert_eq!(t.template_version, TEMPLATE_VERSION);
    }

    #[test]
    fn missing_axis_is_schema_violation() {
        let mut doc: serde_json::Value = serde_json::from_str(&pod_axes_json()).unwrap();
        doc["axes"].as_object_mut().unwrap().remove("phenology");
        let llm = StubLlm::new(vec![doc.to_string()]);
        match translate_axes(&request(), &llm) {
            Err(Error::SchemaViolation { attempts, errors }) => {
                assert_eq!(attempts, 3);
                assert!(errors.iter().any(|e| e.contains("phenology")), "{errors:?}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(llm.calls(), 3);
    }

    #[test]
    fn retry_recovers_after_bad_answer() {
        let llm = StubLlm::new(vec!["no idea".into(), pod_axes_json()]);
        let t = translate_axes(&request(), &llm).unwrap();
        assert_eq!(t.attempts, 2);
    }

    #[test]
    fn prompt_is_deterministic_and_versioned() {
        let a = build_translation_prompt(&request());
        let b = build_translation_prompt(&request());
        assert_eq!(a.text(), b.text());
        assert_eq!(a.version, "axis-translate/v1");
        assert!(a.text().contains("New target: cowpea pods"));
        assert!(a.text().contains("\"taxonomy\""));
    }

    #[test]
    fn empty_target_rejected() {
        assert!(TranslationRequest::new(AxisSet::cowpea_flower(), "  ", 3).is_err());
    }

    #[test]
    fn endpoint_descriptor_parses_both_forms() {
        let stub: LlmEndpoint = serde_json::from_str(r#"{"stub_file": "x.json"}"#).unwrap();
        assert!(matches!(stub, LlmEndpoint::Stub { .. }));
        let http: LlmEndpoint = serde_json::from_str(
            r#"{"url": "http://localhost:1/v1/chat/completions", "model_name": "chat-model", "api_key_env": "KEY", "max_attempts": 2}"#,
        )
        .unwrap();
        assert_eq!(http.max_attempts(), 2);
    }
}
