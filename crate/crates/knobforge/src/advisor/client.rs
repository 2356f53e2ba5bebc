//! Chat-completion client contract and the HTTP implementation.

use serde::{Deserialize, Serialize};

use super::AdvisorError;

pub const LLM_KEY_ENV: &str = "KNOBFORGE_LLM_KEY";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// Decode settings for pruning and refinement: greedy.
    pub fn deterministic(model: &str, prompt: &str) -> Self {
        Self {
            model: model.into(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 4096,
        }
    }

    /// Decode settings for initialization sampling: nucleus sampling.
    pub fn sampling(model: &str, prompt: &str) -> Self {
        Self {
            model: model.into(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: 1.0,
            top_p: 0.98,
            max_tokens: 4096,
        }
    }
}

pub trait ChatClient {
    /// Sends one request and returns the first choice's message content.
    fn complete(&mut self, request: &ChatRequest) -> Result<String, AdvisorError>;
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

/// Blocking chat-completion client. Bearer token read from the
/// `KNOBFORGE_LLM_KEY` environment variable at request time.
pub struct HttpChatClient {
    base_url: String,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(base_url: impl Into<String>, timeout_seconds: u64) -> Result<Self, AdvisorError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(timeout_seconds))
            .build()
            .map_err(|e| AdvisorError::Transport(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into(),
            http,
        })
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, AdvisorError> {
        let mut req = self.http.post(&self.base_url).json(request);
        if let Ok(key) = std::env::var(LLM_KEY_ENV) {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| AdvisorError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(AdvisorError::Transport(format!(
                "chat endpoint returned {status}: {body}"
            )));
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| AdvisorError::Transport(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| AdvisorError::Transport("response had no choices".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_settings_match_the_task() {
        let d = ChatRequest::deterministic("m", "p");
        assert_eq!(d.temperature, 0.0);
        let s = ChatRequest::sampling("m", "p");
        assert_eq!(s.temperature, 1.0);
        assert_eq!(s.top_p, 0.98);
    }

    #[test]
    fn request_serializes_with_wire_field_names() {
        let r = ChatRequest::deterministic("gpt-x", "hello");
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["model"], "gpt-x");
        assert_eq!(v["messages"][0]["role"], "user");
        assert_eq!(v["messages"][0]["content"], "hello");
        assert!(v["temperature"].is_number());
        assert!(v["top_p"].is_number());
        assert!(v["max_tokens"].is_number());
    }
}
