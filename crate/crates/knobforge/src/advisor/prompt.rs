//! Prompt construction for the three LLM subtasks.
//!
//! Section order is part of the contract: downstream parsers (and the
//! scripted mock) locate sections by their `## ` headings.

use crate::knobspace::{Configuration, ConfigurationSpace};
use crate::target::Feedback;

use super::EnvironmentInfo;

#[derive(Debug, Clone)]
pub struct PromptBundle {
    pub sections: Vec<(String, String)>,
    pub rendered: String,
}

impl PromptBundle {
    fn assemble(sections: Vec<(&str, String)>) -> Self {
        let rendered = sections
            .iter()
            .map(|(name, text)| format!("## {name}\n{text}"))
            .collect::<Vec<_>>()
            .join("\n\n");
        Self {
            sections: sections
                .into_iter()
                .map(|(n, t)| (n.to_string(), t))
                .collect(),
            rendered,
        }
    }

    /// Body text of a named section, if present.
    pub fn section(&self, name: &str) -> Option<&str> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.as_str())
    }
}

/// Fallback refinement demonstration used when the caller supplies none;
/// one worked example of anchoring on a configuration and adjusting a
/// single knob in response to feedback.
const DEFAULT_DEMONSTRATION: &str = "Current configuration {\"buffer_pool_bytes\": 134217728} \
measured throughput_tps: 210.5 with buffer_pool_bytes_pressure: 0.82. \
Because the buffer pool was under pressure, the refined configuration \
{\"buffer_pool_bytes\": 8589934592} raised throughput_tps to 452.3. \
Knobs that were already performing well were left unchanged.";

fn knob_catalog_lines(space: &ConfigurationSpace) -> String {
    space
        .knobs()
        .iter()
        .map(|k| {
            let unit = k
                .unit
                .as_deref()
                .map(|u| format!(" {u}"))
                .unwrap_or_default();
            format!(
                "- {} ({}, range {}{}, default {}): {}",
                k.name,
                k.domain.type_name(),
                k.range_text(),
                unit,
                serde_json::to_string(&k.domain.default_value()).unwrap(),
                k.description
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn environment_text(env: &EnvironmentInfo) -> String {
    let mut s = format!(
        "database engine: {} {}\ncpu_count: {}\nmemory_bytes: {}",
        env.engine_name, env.engine_version, env.cpu_count, env.memory_bytes
    );
    if !env.extra.is_empty() {
        s.push('\n');
        s.push_str(&env.extra);
    }
    s
}

fn workload_text(env: &EnvironmentInfo) -> String {
    format!(
        "workload_type: {:?}\nread_write_ratio: {}\ndata_size_bytes: {}",
        env.workload_type, env.read_write_ratio, env.data_size_bytes
    )
}

pub fn build_pruning_prompt(
    space: &ConfigurationSpace,
    env: &EnvironmentInfo,
    k: usize,
) -> PromptBundle {
    assert!(k >= 1 && k <= space.dimension());
    let task = format!(
        "You are an experienced database administrator. From the candidate \
knobs listed below, select the {k} knobs with the greatest impact on \
performance for the described workload, and for each selected knob give \
the value range (or choices) worth searching during tuning."
    );
    let output = format!(
        "Reply with only a JSON array containing exactly {k} objects, one per \
selected knob: {{\"name\": \"...\", \"min\": <number>, \"max\": <number>}} for \
numeric knobs, or {{\"name\": \"...\", \"choices\": [\"...\"]}} for enumeration \
and boolean knobs. Do not write anything outside the JSON array."
    );
    PromptBundle::assemble(vec![
        ("Task Description", task),
        ("Candidate Knobs", knob_catalog_lines(space)),
        (
            "Workload and Database Information",
            format!("{}\n{}", environment_text(env), workload_text(env)),
        ),
        ("Output Format", output),
    ])
}

pub fn build_recommendation_prompt(
    space: &ConfigurationSpace,
    env: &EnvironmentInfo,
    current: &Configuration,
    feedback: &Feedback,
    demonstration: Option<&str>,
) -> PromptBundle {
    let task = "You are an experienced database administrator tuning the \
configuration knobs listed below. Propose an improved configuration for \
this workload. The current configuration is your anchor point: adjust \
only the knobs that need modification; every knob you omit keeps its \
current value."
        .to_string();
    let output = "Reply with only one JSON object mapping knob names to \
their new values, for example {\"knob_a\": 123, \"knob_b\": \"ON\"}. Give \
final values directly, without explanation, and stay within each knob's \
allowed range."
        .to_string();

    let mut feedback_lines = format!(
        "{}: {}",
        feedback.objective_kind.label(),
        feedback.objective
    );
    for (name, value) in &feedback.internal_metrics {
        feedback_lines.push_str(&format!("\n{name}: {value}"));
    }

    PromptBundle::assemble(vec![
        ("Task Description", task),
        (
            "Demonstration for Knob Refinement",
            demonstration.unwrap_or(DEFAULT_DEMONSTRATION).to_string(),
        ),
        (
            "Environment",
            format!(
                "{}\n\nTunable knobs:\n{}",
                environment_text(env),
                knob_catalog_lines(space)
            ),
        ),
        ("Information about Current Workload", workload_text(env)),
        ("Output Format", output),
        (
            "Current Configuration",
            serde_json::to_string_pretty(&current.to_json()).unwrap(),
        ),
        ("Database Feedback", feedback_lines),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advisor::tests::{sample_env, wide_space};
    use crate::target::ObjectiveKind;
    use std::collections::BTreeMap;

    fn section_positions(bundle: &PromptBundle) -> Vec<usize> {
        bundle
            .sections
            .iter()
            .map(|(n, _)| {
                bundle
                    .rendered
                    .find(&format!("## {n}"))
                    .unwrap_or_else(|| panic!("section `{n}` missing from render"))
            })
            .collect()
    }

    #[test]
    fn pruning_sections_appear_in_pinned_order() {
        let space = wide_space(100);
        let bundle = build_pruning_prompt(&space, &sample_env(), 10);
        let names: Vec<&str> = bundle.sections.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            names,
            [
                "Task Description",
                "Candidate Knobs",
                "Workload and Database Information",
                "Output Format"
            ]
        );
        let pos = section_positions(&bundle);
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn pruning_prompt_lists_every_candidate_once_and_asks_for_k() {
        let space = wide_space(100);
        let bundle = build_pruning_prompt(&space, &sample_env(), 10);
        for knob in space.knobs() {
            let marker = format!("- {} (", knob.name);
            assert_eq!(
                bundle.rendered.matches(&marker).count(),
                1,
                "knob {} not listed exactly once",
                knob.name
            );
        }
        assert!(bundle.rendered.contains("exactly 10 objects"));
    }

    #[test]
    fn pruning_prompt_select_all_is_well_formed() {
        let space = wide_space(5);
        let bundle = build_pruning_prompt(&space, &sample_env(), 5);
        assert!(bundle.rendered.contains("select the 5 knobs"));
    }

    #[test]
    fn recommendation_sections_appear_in_pinned_order() {
        let space = wide_space(4);
        let feedback = Feedback {
            objective_kind: ObjectiveKind::ThroughputTps,
            objective: 154.73,
            internal_metrics: BTreeMap::from([("k000_pressure".into(), 0.5)]),
            eval_duration_seconds: 1.0,
        };
        let bundle = build_recommendation_prompt(
            &space,
            &sample_env(),
            &space.default_configuration(),
            &feedback,
            None,
        );
        let names: Vec<&str> = bundle.sections.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            names,
            [
                "Task Description",
                "Demonstration for Knob Refinement",
                "Environment",
                "Information about Current Workload",
                "Output Format",
                "Current Configuration",
                "Database Feedback"
            ]
        );
        let pos = section_positions(&bundle);
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert!(bundle.rendered.contains("throughput_tps: 154.73"));
        assert!(bundle.rendered.contains("k000_pressure: 0.5"));
    }

    #[test]
    fn empty_metrics_leave_only_the_objective_line() {
        let space = wide_space(2);
        let feedback = Feedback {
            objective_kind: ObjectiveKind::LatencySeconds,
            objective: 2.5,
            internal_metrics: BTreeMap::new(),
            eval_duration_seconds: 0.0,
        };
        let bundle = build_recommendation_prompt(
            &space,
            &sample_env(),
            &space.default_configuration(),
            &feedback,
            None,
        );
        assert_eq!(bundle.section("Database Feedback"), Some("latency_seconds: 2.5"));
    }

    #[test]
    fn exactly_one_demonstration_is_included() {
        let space = wide_space(2);
        let feedback = Feedback {
            objective_kind: ObjectiveKind::ThroughputTps,
            objective: 1.0,
            internal_metrics: BTreeMap::new(),
            eval_duration_seconds: 0.0,
        };
        let custom = "custom refinement example";
        let bundle = build_recommendation_prompt(
            &space,
            &sample_env(),
            &space.default_configuration(),
            &feedback,
            Some(custom),
        );
        assert_eq!(bundle.section("Demonstration for Knob Refinement"), Some(custom));
        assert_eq!(bundle.rendered.matches(custom).count(), 1);
        assert_eq!(
            bundle
                .rendered
                .matches("## Demonstration for Knob Refinement")
                .count(),
            1
        );
    }
}
