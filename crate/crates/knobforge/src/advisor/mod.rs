//! LLM-facing layer: prompt construction, the chat client contract,
//! reply parsing, and the high-level pruning / initialization /
//! refinement operations.

pub mod client;
pub mod mock;
pub mod parse;
pub mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knobspace::{Coercion, Configuration, ConfigurationSpace, PrunedSpace};
use crate::target::Feedback;

pub use client::{ChatClient, ChatMessage, ChatRequest, HttpChatClient, LLM_KEY_ENV};
pub use mock::{MockLlm, MockPolicy};
pub use parse::{
    extract_balanced_json, parse_config_response, parse_config_response_onto,
    parse_pruning_response,
};
pub use prompt::{build_pruning_prompt, build_recommendation_prompt, PromptBundle};

#[derive(Debug, Error)]
pub enum AdvisorError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("parse failure: {reason}")]
    ParseFailure { reason: String },
    #[error("knob pruning failed after {attempts} attempts: {reason}")]
    PruningFailed { attempts: u32, reason: String },
    #[error("refinement failed after {attempts} attempts: {reason}")]
    RefineFailed { attempts: u32, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum WorkloadType {
    Oltp,
    Olap,
}

/// Hardware, engine, and workload facts surfaced to the LLM.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvironmentInfo {
    pub engine_name: String,
    pub engine_version: String,
    pub cpu_count: u32,
    pub memory_bytes: u64,
    pub workload_type: WorkloadType,
    pub read_write_ratio: f64,
    pub data_size_bytes: u64,
    #[serde(default)]
    pub extra: String,
}

/// Default number of reply-parse attempts per LLM operation.
pub const DEFAULT_RETRIES: u32 = 3;

fn corrective_suffix(output_format: &str) -> String {
    format!(
        "\n\nYour previous reply could not be parsed. {output_format}"
    )
}

/// Knob selection: prompt, query, parse; re-asks with a corrective
/// suffix on parse failures, up to `retries` extra attempts.
pub fn llm_prune(
    client: &mut dyn ChatClient,
    space: &ConfigurationSpace,
    env: &EnvironmentInfo,
    k: usize,
    retries: u32,
    model: &str,
) -> Result<PrunedSpace, AdvisorError> {
    let bundle = build_pruning_prompt(space, env, k);
    let format_text = bundle.section("Output Format").unwrap_or_default().to_string();
    let mut last = String::new();
    for attempt in 0..=retries {
        let prompt = if attempt == 0 {
            bundle.rendered.clone()
        } else {
            format!("{}{}", bundle.rendered, corrective_suffix(&format_text))
        };
        let raw = client.complete(&ChatRequest::deterministic(model, &prompt))?;
        match parse_pruning_response(space, &raw, k) {
            Ok(pruned) => return Ok(pruned),
            Err(e) => last = e.to_string(),
        }
    }
    Err(AdvisorError::PruningFailed {
        attempts: retries + 1,
        reason: last,
    })
}

/// Result of initialization sampling; `exhausted` flags a run that hit
/// `max_attempts` before gathering the requested number of distinct
/// configurations.
#[derive(Debug, Clone)]
pub struct InitSamples {
    pub configs: Vec<Configuration>,
    pub attempts: u32,
    pub exhausted: bool,
}

/// Samples the initialization prompt until `u` distinct configurations
/// are gathered (distinctness is exact equality after coercion) or
/// `max_attempts` queries have been spent.
pub fn llm_sample_initial_configs(
    client: &mut dyn ChatClient,
    space: &ConfigurationSpace,
    env: &EnvironmentInfo,
    default_feedback: &Feedback,
    u: usize,
    max_attempts: u32,
    model: &str,
) -> Result<InitSamples, AdvisorError> {
    assert!(u >= 1);
    let bundle = build_recommendation_prompt(
        space,
        env,
        &space.default_configuration(),
        default_feedback,
        None,
    );
    let mut configs: Vec<Configuration> = Vec::new();
    let mut attempts = 0;
    while configs.len() < u && attempts < max_attempts {
        let raw = client.complete(&ChatRequest::sampling(model, &bundle.rendered))?;
        attempts += 1;
        if let Ok((config, _)) = parse_config_response(space, &raw) {
            if !configs.contains(&config) {
                configs.push(config);
            }
        }
    }
    let exhausted = configs.len() < u;
    Ok(InitSamples {
        configs,
        attempts,
        exhausted,
    })
}

/// One refinement round: query with the current configuration as the
/// anchor and return the adjusted configuration plus its coercion log.
pub fn llm_refine_step(
    client: &mut dyn ChatClient,
    space: &ConfigurationSpace,
    env: &EnvironmentInfo,
    current: &Configuration,
    feedback: &Feedback,
    retries: u32,
    model: &str,
) -> Result<(Configuration, Vec<Coercion>), AdvisorError> {
    let bundle = build_recommendation_prompt(space, env, current, feedback, None);
    let format_text = bundle.section("Output Format").unwrap_or_default().to_string();
    let mut last = String::new();
    for attempt in 0..=retries {
        let prompt = if attempt == 0 {
            bundle.rendered.clone()
        } else {
            format!("{}{}", bundle.rendered, corrective_suffix(&format_text))
        };
        let raw = client.complete(&ChatRequest::deterministic(model, &prompt))?;
        match parse_config_response_onto(space, current, &raw) {
            Ok(result) => return Ok(result),
            Err(e) => last = e.to_string(),
        }
    }
    Err(AdvisorError::RefineFailed {
        attempts: retries + 1,
        reason: last,
    })
}
