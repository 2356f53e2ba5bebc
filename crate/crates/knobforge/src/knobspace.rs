//! Knobs, configuration spaces and points inside them.
//!
//! A [`ConfigurationSpace`] is an ordered list of typed [`Knob`]s; a
//! [`Configuration`] assigns exactly one in-range value to every knob.
//! All types here are immutable after construction.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A value assigned to a single knob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KnobValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Enum(String),
}

impl fmt::Display for KnobValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KnobValue::Bool(b) => write!(f, "{b}"),
            KnobValue::Int(v) => write!(f, "{v}"),
            KnobValue::Real(v) => write!(f, "{v}"),
            KnobValue::Enum(s) => write!(f, "{s}"),
        }
    }
}

/// The typed domain of a knob, including its default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KnobDomain {
    Integer { min: i64, max: i64, default: i64 },
    Real { min: f64, max: f64, default: f64 },
    Enumeration { choices: Vec<String>, default: String },
    Boolean { default: bool },
}

impl KnobDomain {
    pub fn default_value(&self) -> KnobValue {
        match self {
            KnobDomain::Integer { default, .. } => KnobValue::Int(*default),
            KnobDomain::Real { default, .. } => KnobValue::Real(*default),
            KnobDomain::Enumeration { default, .. } => KnobValue::Enum(default.clone()),
            KnobDomain::Boolean { default } => KnobValue::Bool(*default),
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            KnobDomain::Integer { .. } => "integer",
            KnobDomain::Real { .. } => "real",
            KnobDomain::Enumeration { .. } => "enumeration",
            KnobDomain::Boolean { .. } => "boolean",
        }
    }
}

/// One tunable parameter of the target system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knob {
    pub name: String,
    #[serde(flatten)]
    pub domain: KnobDomain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub restart_required: bool,
}

impl Knob {
    /// Checks the per-knob invariants (strict min < max, default in range).
    fn check(&self) -> Result<(), SpaceError> {
        let bad = |why: &str| {
            Err(SpaceError::InvalidKnob {
                name: self.name.clone(),
                reason: why.to_string(),
            })
        };
        match &self.domain {
            KnobDomain::Integer { min, max, default } => {
                if min >= max {
                    return bad("min must be strictly below max");
                }
                if default < min || default > max {
                    return bad("default outside [min, max]");
                }
            }
            KnobDomain::Real { min, max, default } => {
                if !min.is_finite() || !max.is_finite() || !default.is_finite() {
                    return bad("non-finite bound or default");
                }
                if min >= max {
                    return bad("min must be strictly below max");
                }
                if default < min || default > max {
                    return bad("default outside [min, max]");
                }
            }
            KnobDomain::Enumeration { choices, default } => {
                if choices.is_empty() {
                    return bad("enumeration needs at least one choice");
                }
                if !choices.contains(default) {
                    return bad("default not among choices");
                }
            }
            KnobDomain::Boolean { .. } => {}
        }
        Ok(())
    }

    /// Human-readable range/choices summary used in prompts and reports.
    pub fn range_text(&self) -> String {
        match &self.domain {
            KnobDomain::Integer { min, max, .. } => format!("[{min}, {max}]"),
            KnobDomain::Real { min, max, .. } => format!("[{min}, {max}]"),
            KnobDomain::Enumeration { choices, .. } => format!("{{{}}}", choices.join(", ")),
            KnobDomain::Boolean { .. } => "{false, true}".to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("invalid knob `{name}`: {reason}")]
    InvalidKnob { name: String, reason: String },
    #[error("duplicate knob name `{0}`")]
    DuplicateName(String),
    #[error("configuration space must contain at least one knob")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid pruned space: {0}")]
    InvalidPruned(String),
    #[error("catalog io: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog parse: {0}")]
    Parse(#[from] serde_json::Error),
}

/// The space Θ: an ordered, duplicate-free list of knobs.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ConfigurationSpace {
    knobs: Vec<Knob>,
}

impl<'de> Deserialize<'de> for ConfigurationSpace {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let knobs = Vec::<Knob>::deserialize(de)?;
        ConfigurationSpace::new(knobs).map_err(serde::de::Error::custom)
    }
}

impl ConfigurationSpace {
    pub fn new(knobs: Vec<Knob>) -> Result<Self, SpaceError> {
        if knobs.is_empty() {
            return Err(SpaceError::Empty);
        }
        let mut seen = std::collections::BTreeSet::new();
        for k in &knobs {
            k.check()?;
            if !seen.insert(k.name.clone()) {
                return Err(SpaceError::DuplicateName(k.name.clone()));
            }
        }
        Ok(Self { knobs })
    }

    /// Loads a knob catalog from a JSON array file. Unknown keys are ignored.
    pub fn load_catalog(path: impl AsRef<Path>) -> Result<Self, SpaceError> {
        let text = std::fs::read_to_string(path)?;
        let knobs: Vec<Knob> = serde_json::from_str(&text)?;
        Self::new(knobs)
    }

    pub fn save_catalog(&self, path: impl AsRef<Path>) -> Result<(), SpaceError> {
        std::fs::write(path, serde_json::to_string_pretty(&self.knobs)?)?;
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.knobs.len()
    }

    pub fn knobs(&self) -> &[Knob] {
        &self.knobs
    }

    pub fn knob(&self, name: &str) -> Option<&Knob> {
        self.knobs.iter().find(|k| k.name == name)
    }

    /// Configuration with every knob at its catalog default.
    pub fn default_configuration(&self) -> Configuration {
        Configuration {
            values: self
                .knobs
                .iter()
                .map(|k| (k.name.clone(), k.domain.default_value()))
                .collect(),
        }
    }

    /// SHA-256 digest of the canonical catalog JSON, for history headers.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(&self.knobs).expect("space serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        hex_lower(&h.finalize())
    }
}

fn hex_lower(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A point θ ∈ Θ: one value per knob of the owning space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration {
    values: BTreeMap<String, KnobValue>,
}

impl Configuration {
    pub fn get(&self, name: &str) -> Option<&KnobValue> {
        self.values.get(name)
    }

    pub fn values(&self) -> &BTreeMap<String, KnobValue> {
        &self.values
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("configuration serializes")
    }
}

/// A single problem found while validating a raw candidate mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnknownKnob { name: String },
    MissingKnob { name: String },
    TypeMismatch { name: String, given: serde_json::Value },
    OutOfRange { name: String, given: serde_json::Value },
}

impl Violation {
    pub fn knob_name(&self) -> &str {
        match self {
            Violation::UnknownKnob { name }
            | Violation::MissingKnob { name }
            | Violation::TypeMismatch { name, .. }
            | Violation::OutOfRange { name, .. } => name,
        }
    }
}

/// One adjustment applied while coercing a candidate into the space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coercion {
    pub knob: String,
    pub action: CoercionAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum CoercionAction {
    Rounded { from: f64, to: i64 },
    Clamped { from: serde_json::Value, to: KnobValue },
    FilledFromBase { to: KnobValue },
    DroppedUnknown { given: serde_json::Value },
    ParsedString { from: String, to: KnobValue },
}

/// How to handle candidates that do not satisfy the space as-is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoercionPolicy {
    ClampRound,
    Reject,
}

/// Validates a raw name→value mapping against the space.
///
/// Never aborts; every problem comes back as a [`Violation`].
pub fn validate_configuration(
    space: &ConfigurationSpace,
    candidate: &BTreeMap<String, serde_json::Value>,
) -> Result<Configuration, Vec<Violation>> {
    let mut violations = Vec::new();
    let mut values = BTreeMap::new();

    for (name, raw) in candidate {
        let Some(knob) = space.knob(name) else {
            violations.push(Violation::UnknownKnob { name: name.clone() });
            continue;
        };
        match check_value(knob, raw) {
            Ok(v) => {
                values.insert(name.clone(), v);
            }
            Err(v) => violations.push(v),
        }
    }
    for knob in space.knobs() {
        if !candidate.contains_key(&knob.name) {
            violations.push(Violation::MissingKnob {
                name: knob.name.clone(),
            });
        }
    }

    if violations.is_empty() {
        Ok(Configuration { values })
    } else {
        Err(violations)
    }
}

fn check_value(knob: &Knob, raw: &serde_json::Value) -> Result<KnobValue, Violation> {
    let name = knob.name.clone();
    let mismatch = || Violation::TypeMismatch {
        name: name.clone(),
        given: raw.clone(),
    };
    let out_of_range = || Violation::OutOfRange {
        name: name.clone(),
        given: raw.clone(),
    };
    match &knob.domain {
        KnobDomain::Integer { min, max, .. } => {
            let v = raw.as_i64().ok_or_else(mismatch)?;
            if v < *min || v > *max {
                return Err(out_of_range());
            }
            Ok(KnobValue::Int(v))
        }
        KnobDomain::Real { min, max, .. } => {
            let v = raw.as_f64().ok_or_else(mismatch)?;
            if !v.is_finite() {
                return Err(mismatch());
            }
            if v < *min || v > *max {
                return Err(out_of_range());
            }
            Ok(KnobValue::Real(v))
        }
        KnobDomain::Enumeration { choices, .. } => {
            let s = raw.as_str().ok_or_else(mismatch)?;
            if !choices.iter().any(|c| c == s) {
                return Err(out_of_range());
            }
            Ok(KnobValue::Enum(s.to_string()))
        }
        KnobDomain::Boolean { .. } => {
            let b = raw.as_bool().ok_or_else(mismatch)?;
            Ok(KnobValue::Bool(b))
        }
    }
}

/// Coerces a raw candidate into the space, filling gaps from defaults.
pub fn coerce_configuration(
    space: &ConfigurationSpace,
    candidate: &BTreeMap<String, serde_json::Value>,
    policy: CoercionPolicy,
) -> Result<(Configuration, Vec<Coercion>), Vec<Violation>> {
    let base = space.default_configuration();
    coerce_onto(space, &base, candidate, policy)
}

/// Like [`coerce_configuration`], but gaps keep the values of `base`
/// (the anchor-point semantics of iterative refinement).
pub fn coerce_onto(
    space: &ConfigurationSpace,
    base: &Configuration,
    candidate: &BTreeMap<String, serde_json::Value>,
    policy: CoercionPolicy,
) -> Result<(Configuration, Vec<Coercion>), Vec<Violation>> {
    if policy == CoercionPolicy::Reject {
        return validate_configuration(space, candidate).map(|c| (c, Vec::new()));
    }

    let mut violations = Vec::new();
    let mut log = Vec::new();
    let mut values = BTreeMap::new();

    for (name, raw) in candidate {
        let Some(knob) = space.knob(name) else {
            log.push(Coercion {
                knob: name.clone(),
                action: CoercionAction::DroppedUnknown { given: raw.clone() },
            });
            continue;
        };
        match coerce_value(knob, raw, &mut log) {
            Ok(v) => {
                values.insert(name.clone(), v);
            }
            Err(v) => violations.push(v),
        }
    }
    for knob in space.knobs() {
        if !values.contains_key(&knob.name) {
            let v = base
                .get(&knob.name)
                .cloned()
                .unwrap_or_else(|| knob.domain.default_value());
            log.push(Coercion {
                knob: knob.name.clone(),
                action: CoercionAction::FilledFromBase { to: v.clone() },
            });
            values.insert(knob.name.clone(), v);
        }
    }

    if violations.is_empty() {
        Ok((Configuration { values }, log))
    } else {
        Err(violations)
    }
}

/// Rounds half away from zero, the "nearest legal value" convention.
fn round_half_away(v: f64) -> i64 {
    // f64::round already rounds half away from zero.
    v.round() as i64
}

fn coerce_value(
    knob: &Knob,
    raw: &serde_json::Value,
    log: &mut Vec<Coercion>,
) -> Result<KnobValue, Violation> {
    // LLM replies sometimes quote numbers; accept strings that parse.
    let numeric_of = |raw: &serde_json::Value| -> Option<(f64, bool)> {
        if let Some(v) = raw.as_f64() {
            return Some((v, false));
        }
        raw.as_str()
            .and_then(|s| s.trim().parse::<f64>().ok())
            .map(|v| (v, true))
    };
    let mismatch = || Violation::TypeMismatch {
        name: knob.name.clone(),
        given: raw.clone(),
    };

    match &knob.domain {
        KnobDomain::Integer { min, max, .. } => {
            let (v, from_str) = numeric_of(raw).ok_or_else(mismatch)?;
            if !v.is_finite() {
                return Err(mismatch());
            }
            if from_str {
                log.push(Coercion {
                    knob: knob.name.clone(),
                    action: CoercionAction::ParsedString {
                        from: raw.as_str().unwrap_or_default().to_string(),
                        to: KnobValue::Real(v),
                    },
                });
            }
            let rounded = round_half_away(v);
            if (rounded as f64 - v).abs() > 0.0 {
                log.push(Coercion {
                    knob: knob.name.clone(),
                    action: CoercionAction::Rounded {
                        from: v,
                        to: rounded,
                    },
                });
            }
            let clamped = rounded.clamp(*min, *max);
            if clamped != rounded {
                log.push(Coercion {
                    knob: knob.name.clone(),
                    action: CoercionAction::Clamped {
                        from: raw.clone(),
                        to: KnobValue::Int(clamped),
                    },
                });
            }
            Ok(KnobValue::Int(clamped))
        }
        KnobDomain::Real { min, max, .. } => {
            let (v, from_str) = numeric_of(raw).ok_or_else(mismatch)?;
            if !v.is_finite() {
                return Err(mismatch());
            }
            if from_str {
                log.push(Coercion {
                    knob: knob.name.clone(),
                    action: CoercionAction::ParsedString {
                        from: raw.as_str().unwrap_or_default().to_string(),
                        to: KnobValue::Real(v),
                    },
                });
            }
            let clamped = v.clamp(*min, *max);
            if clamped != v {
                log.push(Coercion {
                    knob: knob.name.clone(),
                    action: CoercionAction::Clamped {
                        from: raw.clone(),
                        to: KnobValue::Real(clamped),
                    },
                });
            }
            Ok(KnobValue::Real(clamped))
        }
        // An enumeration value outside its choices is never coerced.
        KnobDomain::Enumeration { choices, .. } => {
            let s = raw.as_str().ok_or_else(mismatch)?;
            if !choices.iter().any(|c| c == s) {
                return Err(Violation::OutOfRange {
                    name: knob.name.clone(),
                    given: raw.clone(),
                });
            }
            Ok(KnobValue::Enum(s.to_string()))
        }
        KnobDomain::Boolean { .. } => {
            if let Some(b) = raw.as_bool() {
                return Ok(KnobValue::Bool(b));
            }
            // accept common textual/numeric spellings
            let parsed = match raw {
                serde_json::Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
                    "on" | "true" | "1" | "yes" => Some(true),
                    "off" | "false" | "0" | "no" => Some(false),
                    _ => None,
                },
                serde_json::Value::Number(n) => n.as_i64().and_then(|v| match v {
                    0 => Some(false),
                    1 => Some(true),
                    _ => None,
                }),
                _ => None,
            };
            let b = parsed.ok_or_else(mismatch)?;
            log.push(Coercion {
                knob: knob.name.clone(),
                action: CoercionAction::ParsedString {
                    from: raw.to_string(),
                    to: KnobValue::Bool(b),
                },
            });
            Ok(KnobValue::Bool(b))
        }
    }
}

/// Maps a valid configuration onto the unit hypercube.
///
/// Numeric knobs map affinely, enumerations to `index / (|choices| - 1)`
/// (a single choice maps to 0), booleans to {0, 1}.
pub fn normalize(space: &ConfigurationSpace, config: &Configuration) -> Vec<f64> {
    space
        .knobs()
        .iter()
        .map(|knob| {
            let v = match config.get(&knob.name) {
                Some(v) => v.clone(),
                None => knob.domain.default_value(),
            };
            normalize_value(knob, &v)
        })
        .collect()
}

pub fn normalize_value(knob: &Knob, value: &KnobValue) -> f64 {
    match (&knob.domain, value) {
        (KnobDomain::Integer { min, max, .. }, KnobValue::Int(v)) => {
            (*v - *min) as f64 / (*max - *min) as f64
        }
        (KnobDomain::Real { min, max, .. }, KnobValue::Real(v)) => (v - min) / (max - min),
        (KnobDomain::Enumeration { choices, .. }, KnobValue::Enum(s)) => {
            if choices.len() <= 1 {
                0.0
            } else {
                let idx = choices.iter().position(|c| c == s).unwrap_or(0);
                idx as f64 / (choices.len() - 1) as f64
            }
        }
        (KnobDomain::Boolean { .. }, KnobValue::Bool(b)) => {
            if *b {
                1.0
            } else {
                0.0
            }
        }
        _ => 0.0, // type mismatch cannot occur for validated configurations
    }
}

/// Inverse of [`normalize`]; integer and enum coordinates round to the
/// nearest member.
pub fn denormalize(space: &ConfigurationSpace, vector: &[f64]) -> Result<Configuration, SpaceError> {
    if vector.len() != space.dimension() {
        return Err(SpaceError::DimensionMismatch {
            expected: space.dimension(),
            got: vector.len(),
        });
    }
    let values = space
        .knobs()
        .iter()
        .zip(vector)
        .map(|(knob, &x)| (knob.name.clone(), denormalize_value(knob, x)))
        .collect();
    Ok(Configuration { values })
}

pub fn denormalize_value(knob: &Knob, x: f64) -> KnobValue {
    let x = x.clamp(0.0, 1.0);
    match &knob.domain {
        KnobDomain::Integer { min, max, .. } => {
            let raw = *min as f64 + x * (*max - *min) as f64;
            KnobValue::Int(round_half_away(raw).clamp(*min, *max))
        }
        KnobDomain::Real { min, max, .. } => KnobValue::Real(min + x * (max - min)),
        KnobDomain::Enumeration { choices, .. } => {
            let idx = if choices.len() <= 1 {
                0
            } else {
                (x * (choices.len() - 1) as f64).round() as usize
            };
            KnobValue::Enum(choices[idx.min(choices.len() - 1)].clone())
        }
        KnobDomain::Boolean { .. } => KnobValue::Bool(x >= 0.5),
    }
}

/// A narrowed domain for one selected knob.
///
/// Numeric bounds are carried as f64 and converted to the knob's own
/// value type when the pruned space is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NarrowedDomain {
    Range { min: f64, max: f64 },
    Choices { choices: Vec<String> },
}

/// The output of knob pruning: a knob subset with narrowed ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedSpace {
    pub parent: ConfigurationSpace,
    pub selected: Vec<String>,
    #[serde(default)]
    pub narrowed_ranges: BTreeMap<String, NarrowedDomain>,
}

impl PrunedSpace {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SpaceError> {
        let text = std::fs::read_to_string(path)?;
        let p: PrunedSpace = serde_json::from_str(&text)?;
        p.check()?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SpaceError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn check(&self) -> Result<(), SpaceError> {
        let err = |m: String| Err(SpaceError::InvalidPruned(m));
        if self.selected.is_empty() {
            return err("no knobs selected".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &self.selected {
            if !seen.insert(name) {
                return err(format!("knob `{name}` selected twice"));
            }
            let Some(knob) = self.parent.knob(name) else {
                return err(format!("selected knob `{name}` not in parent space"));
            };
            if let Some(nd) = self.narrowed_ranges.get(name) {
                match (&knob.domain, nd) {
                    (
                        KnobDomain::Integer { min, max, .. },
                        NarrowedDomain::Range { min: lo, max: hi },
                    ) => {
                        if lo >= hi || *lo < *min as f64 || *hi > *max as f64 {
                            return err(format!("narrowed range of `{name}` not inside parent"));
                        }
                    }
                    (
                        KnobDomain::Real { min, max, .. },
                        NarrowedDomain::Range { min: lo, max: hi },
                    ) => {
                        if lo >= hi || lo < min || hi > max {
                            return err(format!("narrowed range of `{name}` not inside parent"));
                        }
                    }
                    (KnobDomain::Enumeration { choices, .. }, NarrowedDomain::Choices { choices: sub }) => {
                        if sub.is_empty() || sub.iter().any(|c| !choices.contains(c)) {
                            return err(format!("narrowed choices of `{name}` not inside parent"));
                        }
                    }
                    _ => return err(format!("narrowed range of `{name}` has wrong type")),
                }
            }
        }
        Ok(())
    }
}

/// Materializes a pruned space into a standalone [`ConfigurationSpace`].
///
/// Defaults falling outside a narrowed range are clamped to its nearest bound.
pub fn apply_pruned(pruned: &PrunedSpace) -> Result<ConfigurationSpace, SpaceError> {
    pruned.check()?;
    let mut knobs = Vec::new();
    // keep the parent's knob order
    for knob in pruned.parent.knobs() {
        if !pruned.selected.contains(&knob.name) {
            continue;
        }
        let mut k = knob.clone();
        if let Some(nd) = pruned.narrowed_ranges.get(&knob.name) {
            k.domain = match (&knob.domain, nd) {
                (
                    KnobDomain::Integer { default, .. },
                    NarrowedDomain::Range { min, max },
                ) => {
                    let (lo, hi) = (min.ceil() as i64, max.floor() as i64);
                    KnobDomain::Integer {
                        min: lo,
                        max: hi,
                        default: (*default).clamp(lo, hi),
                    }
                }
                (
                    KnobDomain::Real { default, .. },
                    NarrowedDomain::Range { min, max },
                ) => KnobDomain::Real {
                    min: *min,
                    max: *max,
                    default: (*default).clamp(*min, *max),
                },
                (
                    KnobDomain::Enumeration { default, .. },
                    NarrowedDomain::Choices { choices },
                ) => KnobDomain::Enumeration {
                    choices: choices.clone(),
                    default: if choices.contains(default) {
                        default.clone()
                    } else {
                        choices[0].clone()
                    },
                },
                _ => unreachable!("checked by PrunedSpace::check"),
            };
        }
        knobs.push(k);
    }
    ConfigurationSpace::new(knobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) fn toy_space() -> ConfigurationSpace {
        ConfigurationSpace::new(vec![
            Knob {
                name: "threshold_pct".into(),
                domain: KnobDomain::Integer {
                    min: 0,
                    max: 100,
                    default: 5,
                },
                unit: None,
                description: "compression failure threshold".into(),
                restart_required: false,
            },
            Knob {
                name: "spin_wait_delay".into(),
                domain: KnobDomain::Integer {
                    min: 0,
                    max: (1i64 << 32) - 1,
                    default: 6,
                },
                unit: Some("microseconds".into()),
                description: "spin wait delay".into(),
                restart_required: false,
            },
            Knob {
                name: "fill_factor".into(),
                domain: KnobDomain::Real {
                    min: 0.0,
                    max: 100.0,
                    default: 50.0,
                },
                unit: None,
                description: "".into(),
                restart_required: false,
            },
            Knob {
                name: "flush_mode".into(),
                domain: KnobDomain::Enumeration {
                    choices: vec!["ON".into(), "OFF".into()],
                    default: "ON".into(),
                },
                unit: None,
                description: "".into(),
                restart_required: true,
            },
            Knob {
                name: "adaptive_hash".into(),
                domain: KnobDomain::Boolean { default: true },
                unit: None,
                description: "".into(),
                restart_required: false,
            },
        ])
        .unwrap()
    }

    fn candidate_from(cfg: &Configuration) -> BTreeMap<String, serde_json::Value> {
        match cfg.to_json() {
            serde_json::Value::Object(m) => m.into_iter().collect(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn defaults_validate_clean() {
        let space = toy_space();
        let cand = candidate_from(&space.default_configuration());
        let cfg = validate_configuration(&space, &cand).unwrap();
        assert_eq!(cfg, space.default_configuration());
    }

    #[test]
    fn fractional_value_on_integer_knob_is_type_mismatch() {
        let space = toy_space();
        let mut cand = candidate_from(&space.default_configuration());
        cand.insert("threshold_pct".into(), json!(7.5));
        let violations = validate_configuration(&space, &cand).unwrap_err();
        assert_eq!(violations.len(), 1);
        assert!(matches!(&violations[0], Violation::TypeMismatch { name, .. } if name == "threshold_pct"));
    }

    #[test]
    fn negative_delay_is_out_of_range() {
        let space = toy_space();
        let mut cand = candidate_from(&space.default_configuration());
        cand.insert("spin_wait_delay".into(), json!(-3));
        let violations = validate_configuration(&space, &cand).unwrap_err();
        assert!(matches!(&violations[0], Violation::OutOfRange { name, .. } if name == "spin_wait_delay"));
    }

    #[test]
    fn clamp_round_rounds_half_away_then_clamps() {
        let space = toy_space();
        let mut cand = BTreeMap::new();
        cand.insert("threshold_pct".to_string(), json!(7.5));
        let (cfg, log) = coerce_configuration(&space, &cand, CoercionPolicy::ClampRound).unwrap();
        assert_eq!(cfg.get("threshold_pct"), Some(&KnobValue::Int(8)));
        assert!(log
            .iter()
            .any(|c| matches!(&c.action, CoercionAction::Rounded { from, to } if *from == 7.5 && *to == 8)));
        // missing knobs were filled from defaults
        assert_eq!(cfg.get("fill_factor"), Some(&KnobValue::Real(50.0)));
    }

    #[test]
    fn clamp_round_clamps_negatives_to_lower_bound() {
        let space = toy_space();
        let mut cand = BTreeMap::new();
        cand.insert("spin_wait_delay".to_string(), json!(-3));
        let (cfg, log) = coerce_configuration(&space, &cand, CoercionPolicy::ClampRound).unwrap();
        assert_eq!(cfg.get("spin_wait_delay"), Some(&KnobValue::Int(0)));
        assert!(log
            .iter()
            .any(|c| matches!(&c.action, CoercionAction::Clamped { .. }) && c.knob == "spin_wait_delay"));
    }

    #[test]
    fn enumeration_member_passes_nonmember_rejects() {
        let space = toy_space();
        let mut cand = BTreeMap::new();
        cand.insert("flush_mode".to_string(), json!("ON"));
        let (cfg, _) = coerce_configuration(&space, &cand, CoercionPolicy::ClampRound).unwrap();
        assert_eq!(cfg.get("flush_mode"), Some(&KnobValue::Enum("ON".into())));

        let mut bad = BTreeMap::new();
        bad.insert("flush_mode".to_string(), json!("MAYBE"));
        let violations = coerce_configuration(&space, &bad, CoercionPolicy::ClampRound).unwrap_err();
        assert!(matches!(&violations[0], Violation::OutOfRange { name, .. } if name == "flush_mode"));
    }

    #[test]
    fn unknown_knobs_dropped_under_clamp_round() {
        let space = toy_space();
        let mut cand = BTreeMap::new();
        cand.insert("no_such_knob".to_string(), json!(1));
        let (cfg, log) = coerce_configuration(&space, &cand, CoercionPolicy::ClampRound).unwrap();
        assert_eq!(cfg, space.default_configuration());
        assert!(log
            .iter()
            .any(|c| matches!(c.action, CoercionAction::DroppedUnknown { .. })));
    }

    #[test]
    fn normalize_midpoint_and_integer_rounding() {
        let knob = Knob {
            name: "k".into(),
            domain: KnobDomain::Integer {
                min: 1,
                max: 5,
                default: 1,
            },
            unit: None,
            description: "".into(),
            restart_required: false,
        };
        assert_eq!(normalize_value(&knob, &KnobValue::Int(2)), 0.25);
        assert_eq!(denormalize_value(&knob, 0.26), KnobValue::Int(2));

        let real = Knob {
            name: "r".into(),
            domain: KnobDomain::Real {
                min: 0.0,
                max: 100.0,
                default: 0.0,
            },
            unit: None,
            description: "".into(),
            restart_required: false,
        };
        assert_eq!(normalize_value(&real, &KnobValue::Real(50.0)), 0.5);
    }

    #[test]
    fn default_config_round_trips() {
        let space = toy_space();
        let d = space.default_configuration();
        let v = normalize(&space, &d);
        let back = denormalize(&space, &v).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn apply_pruned_selects_and_narrows() {
        let space = toy_space();
        let mut narrowed = BTreeMap::new();
        narrowed.insert(
            "spin_wait_delay".to_string(),
            NarrowedDomain::Range {
                min: (1u64 << 20) as f64,
                max: (1u64 << 30) as f64,
            },
        );
        let pruned = PrunedSpace {
            parent: space.clone(),
            selected: vec!["threshold_pct".into(), "spin_wait_delay".into()],
            narrowed_ranges: narrowed,
        };
        let sub = apply_pruned(&pruned).unwrap();
        assert_eq!(sub.dimension(), 2);
        let k = sub.knob("spin_wait_delay").unwrap();
        match &k.domain {
            KnobDomain::Integer { min, max, default } => {
                assert_eq!(*min, 1 << 20);
                assert_eq!(*max, 1 << 30);
                // parent default 6 was below the narrowed range
                assert_eq!(*default, 1 << 20);
            }
            _ => panic!("wrong domain"),
        }
    }

    #[test]
    fn apply_pruned_identity_when_everything_selected() {
        let space = toy_space();
        let pruned = PrunedSpace {
            parent: space.clone(),
            selected: space.knobs().iter().map(|k| k.name.clone()).collect(),
            narrowed_ranges: BTreeMap::new(),
        };
        assert_eq!(apply_pruned(&pruned).unwrap(), space);
    }

    #[test]
    fn pruned_space_rejects_widened_range() {
        let space = toy_space();
        let mut narrowed = BTreeMap::new();
        narrowed.insert(
            "threshold_pct".to_string(),
            NarrowedDomain::Range {
                min: -5.0,
                max: 200.0,
            },
        );
        let pruned = PrunedSpace {
            parent: space,
            selected: vec!["threshold_pct".into()],
            narrowed_ranges: narrowed,
        };
        assert!(pruned.check().is_err());
    }

    #[test]
    fn catalog_round_trips_through_json() {
        let space = toy_space();
        let dir = std::env::temp_dir().join(format!("knobforge-cat-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("catalog.json");
        space.save_catalog(&path).unwrap();
        let loaded = ConfigurationSpace::load_catalog(&path).unwrap();
        assert_eq!(loaded, space);
        std::fs::remove_dir_all(&dir).ok();
    }
}
