//! Extraction and validation of LLM replies.

use std::collections::BTreeMap;

use crate::knobspace::{
    coerce_onto, Coercion, CoercionPolicy, Configuration, ConfigurationSpace, KnobDomain,
    NarrowedDomain, PrunedSpace,
};

use super::AdvisorError;

/// First balanced JSON object or array embedded in `text`, if any.
///
/// Replies usually wrap the payload in prose; earlier brace groups that
/// do not parse as JSON are skipped.
pub fn extract_balanced_json(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(offset) = text[start..].find(['{', '[']) {
        let open = start + offset;
        if let Some(end) = balanced_end(bytes, open) {
            let candidate = &text[open..end];
            if serde_json::from_str::<serde_json::Value>(candidate).is_ok() {
                return Some(candidate);
            }
        }
        start = open + 1;
    }
    None
}

/// Index one past the close of the bracket group opening at `open`,
/// honoring strings and escapes; None when unbalanced.
fn balanced_end(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' | b'[' => depth += 1,
            b'}' | b']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_failure(reason: impl Into<String>) -> AdvisorError {
    AdvisorError::ParseFailure {
        reason: reason.into(),
    }
}

/// Extracts the config object from a reply and coerces it onto `base`
/// (knobs the reply omits keep their `base` values).
pub fn parse_config_response_onto(
    space: &ConfigurationSpace,
    base: &Configuration,
    raw_text: &str,
) -> Result<(Configuration, Vec<Coercion>), AdvisorError> {
    let json = extract_balanced_json(raw_text)
        .ok_or_else(|| parse_failure("no balanced JSON found in reply"))?;
    let map: BTreeMap<String, serde_json::Value> = serde_json::from_str(json)
        .map_err(|e| parse_failure(format!("reply JSON is not an object: {e}")))?;
    coerce_onto(space, base, &map, CoercionPolicy::ClampRound).map_err(|violations| {
        parse_failure(format!(
            "uncoercible values remain: {}",
            violations
                .iter()
                .map(|v| v.knob_name().to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ))
    })
}

/// As [`parse_config_response_onto`] with the space defaults as base.
pub fn parse_config_response(
    space: &ConfigurationSpace,
    raw_text: &str,
) -> Result<(Configuration, Vec<Coercion>), AdvisorError> {
    parse_config_response_onto(space, &space.default_configuration(), raw_text)
}

#[derive(serde::Deserialize)]
struct PruningEntry {
    name: String,
    #[serde(default)]
    min: Option<f64>,
    #[serde(default)]
    max: Option<f64>,
    #[serde(default)]
    choices: Option<Vec<String>>,
}

/// Parses a knob-selection reply into a [`PrunedSpace`].
///
/// Unknown knobs are dropped and duplicates keep their first entry;
/// ranges are intersected with the catalog ranges. Fails when fewer
/// than `k` valid selections remain.
pub fn parse_pruning_response(
    space: &ConfigurationSpace,
    raw_text: &str,
    k: usize,
) -> Result<PrunedSpace, AdvisorError> {
    let json = extract_balanced_json(raw_text)
        .ok_or_else(|| parse_failure("no balanced JSON found in reply"))?;
    let entries: Vec<PruningEntry> = serde_json::from_str(json)
        .map_err(|e| parse_failure(format!("reply JSON is not a selection array: {e}")))?;

    let mut selected = Vec::new();
    let mut narrowed_ranges = BTreeMap::new();
    for entry in entries {
        if selected.contains(&entry.name) {
            continue;
        }
        let Some(knob) = space.knob(&entry.name) else {
            continue;
        };
        match narrow(knob, &entry) {
            Narrow::Invalid => continue,
            Narrow::Full => selected.push(entry.name),
            Narrow::Domain(d) => {
                narrowed_ranges.insert(entry.name.clone(), d);
                selected.push(entry.name);
            }
        }
        if selected.len() == k {
            break;
        }
    }

    if selected.len() < k {
        return Err(parse_failure(format!(
            "only {} of {k} requested knobs were valid",
            selected.len()
        )));
    }
    let pruned = PrunedSpace {
        parent: space.clone(),
        selected,
        narrowed_ranges,
    };
    pruned
        .check()
        .map_err(|e| parse_failure(format!("inconsistent selection: {e}")))?;
    Ok(pruned)
}

enum Narrow {
    Invalid,
    /// keep the full catalog range
    Full,
    Domain(NarrowedDomain),
}

fn narrow(knob: &crate::knobspace::Knob, entry: &PruningEntry) -> Narrow {
    let numeric_parent = |pmin: f64, pmax: f64| -> Narrow {
        match (entry.min, entry.max) {
            (Some(lo), Some(hi)) => {
                let lo = lo.max(pmin);
                let hi = hi.min(pmax);
                if lo > hi {
                    Narrow::Invalid
                } else {
                    Narrow::Domain(NarrowedDomain::Range { min: lo, max: hi })
                }
            }
            (None, None) => Narrow::Full,
            _ => Narrow::Invalid,
        }
    };
    match &knob.domain {
        KnobDomain::Integer { min, max, .. } => numeric_parent(*min as f64, *max as f64),
        KnobDomain::Real { min, max, .. } => numeric_parent(*min, *max),
        KnobDomain::Enumeration { choices, .. } => match &entry.choices {
            Some(given) => {
                let kept: Vec<String> = choices
                    .iter()
                    .filter(|c| given.contains(c))
                    .cloned()
                    .collect();
                if kept.is_empty() {
                    Narrow::Invalid
                } else {
                    Narrow::Domain(NarrowedDomain::Choices { choices: kept })
                }
            }
            None => Narrow::Full,
        },
        KnobDomain::Boolean { .. } => Narrow::Full,
    }
}
