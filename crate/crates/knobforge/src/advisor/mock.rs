//! Deterministic offline stand-ins for a chat-completion endpoint.

use std::collections::{BTreeMap, VecDeque};

use super::client::{ChatClient, ChatRequest};
use super::parse::extract_balanced_json;
use super::AdvisorError;

/// What the mock does with each prompt.
pub enum MockPolicy {
    /// Reads the current configuration and the `<knob>_pressure` metrics
    /// out of the rendered prompt and moves every knob whose pressure
    /// exceeds `threshold` a fraction of the way toward its known
    /// optimum. The fraction cycles 0.5 → 1.0 over ten calls, so the
    /// tenth sample lands exactly on the optimum and repeated sampling
    /// yields distinct configurations.
    HillClimb {
        optima: BTreeMap<String, f64>,
        threshold: f64,
    },
    /// Replies with the prompt's current configuration verbatim.
    Echo,
    /// Plays back canned replies, erroring once exhausted.
    Scripted(VecDeque<String>),
    /// Never produces balanced JSON.
    Malformed,
}

pub struct MockLlm {
    policy: MockPolicy,
    calls: u32,
}

impl MockLlm {
    pub fn hill_climb(optima: BTreeMap<String, f64>) -> Self {
        Self {
            policy: MockPolicy::HillClimb {
                optima,
                threshold: 0.1,
            },
            calls: 0,
        }
    }

    pub fn echo() -> Self {
        Self {
            policy: MockPolicy::Echo,
            calls: 0,
        }
    }

    pub fn scripted(replies: Vec<String>) -> Self {
        Self {
            policy: MockPolicy::Scripted(replies.into()),
            calls: 0,
        }
    }

    pub fn malformed() -> Self {
        Self {
            policy: MockPolicy::Malformed,
            calls: 0,
        }
    }

    pub fn calls(&self) -> u32 {
        self.calls
    }
}

/// Body of a `## name` section of a rendered prompt.
fn section_text<'a>(prompt: &'a str, name: &str) -> Option<&'a str> {
    let heading = format!("## {name}\n");
    let start = prompt.find(&heading)? + heading.len();
    let rest = &prompt[start..];
    let end = rest.find("\n## ").unwrap_or(rest.len());
    Some(&rest[..end])
}

fn current_config(prompt: &str) -> BTreeMap<String, serde_json::Value> {
    section_text(prompt, "Current Configuration")
        .and_then(extract_balanced_json)
        .and_then(|j| serde_json::from_str(j).ok())
        .unwrap_or_default()
}

fn pressures(prompt: &str) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    let Some(feedback) = section_text(prompt, "Database Feedback") else {
        return out;
    };
    for line in feedback.lines() {
        let Some((name, value)) = line.split_once(": ") else {
            continue;
        };
        let Some(knob) = name.strip_suffix("_pressure") else {
            continue;
        };
        if let Ok(v) = value.trim().parse::<f64>() {
            out.insert(knob.to_string(), v);
        }
    }
    out
}

impl ChatClient for MockLlm {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, AdvisorError> {
        let prompt = request
            .messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let call = self.calls;
        self.calls += 1;
        match &mut self.policy {
            MockPolicy::HillClimb { optima, threshold } => {
                let fraction = 0.5 + (call % 10) as f64 * (0.5 / 9.0);
                let current = current_config(prompt);
                let pressures = pressures(prompt);
                let mut moved = serde_json::Map::new();
                for (knob, &opt) in optima.iter() {
                    if pressures.get(knob).copied().unwrap_or(0.0) <= *threshold {
                        continue;
                    }
                    let Some(cur) = current.get(knob).and_then(|v| v.as_f64()) else {
                        continue;
                    };
                    let next = cur + fraction * (opt - cur);
                    moved.insert(knob.clone(), serde_json::Value::from(next));
                }
                Ok(serde_json::Value::Object(moved).to_string())
            }
            MockPolicy::Echo => Ok(section_text(prompt, "Current Configuration")
                .and_then(extract_balanced_json)
                .unwrap_or("{}")
                .to_string()),
            MockPolicy::Scripted(replies) => replies
                .pop_front()
                .ok_or_else(|| AdvisorError::Transport("scripted replies exhausted".into())),
            MockPolicy::Malformed => Ok(
                "Try raising the buffer { pool and also {\"size\": } maybe".into(),
            ),
        }
    }
}
