//! Tuning-efficiency metrics (IR, ODP, TES, PE, Speedup), run histories
//! and their JSONL persistence, and comparison reports.
//!
//! Iteration convention: the default configuration is iteration 0; the
//! first suggested configuration is iteration 1; TES counts from 1.
//! Failed observations keep their iteration index but are excluded from
//! ODP/TES/IR.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::target::{Feedback, Observation, ObservationStatus, ObjectiveKind};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("history has no successful observations")]
    EmptyHistory,
    #[error("history has no successful observation at iteration 1")]
    MissingFirstRefinement,
    #[error("base ODP must be positive")]
    NonPositiveBase,
    #[error("base TES must be at least 1")]
    InvalidBaseTes,
    #[error("histories mix objective kinds")]
    MixedObjectiveKinds,
    #[error("persistence: {0}")]
    Persistence(String),
}

/// All observations of one tuning session, in iteration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub session_id: String,
    pub method_label: String,
    pub objective_kind: ObjectiveKind,
    pub space_digest: String,
    pub observations: Vec<Observation>,
}

impl RunHistory {
    pub fn new(
        session_id: impl Into<String>,
        method_label: impl Into<String>,
        objective_kind: ObjectiveKind,
        space_digest: impl Into<String>,
    ) -> Self {
        Self {
            session_id: session_id.into(),
            method_label: method_label.into(),
            objective_kind,
            space_digest: space_digest.into(),
            observations: Vec::new(),
        }
    }

    pub fn push(&mut self, obs: Observation) {
        debug_assert!(self
            .observations
            .last()
            .map(|prev| obs.iteration > prev.iteration)
            .unwrap_or(true));
        self.observations.push(obs);
    }

    fn successes(&self) -> impl Iterator<Item = &Observation> {
        self.observations.iter().filter(|o| o.feedback().is_some())
    }

    /// Best objective seen so far at each successful observation.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = None::<f64>;
        let mut out = Vec::new();
        for o in self.successes() {
            let v = o.objective().unwrap();
            best = Some(match best {
                Some(b) if !self.objective_kind.better(v, b) => b,
                _ => v,
            });
            out.push(best.unwrap());
        }
        out
    }

    /// Serializes as JSON Lines: a header line then one line per
    /// observation.
    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        let mut out = String::new();
        let header = serde_json::json!({
            "session_id": self.session_id,
            "method_label": self.method_label,
            "objective_kind": self.objective_kind,
            "space_digest": self.space_digest,
        });
        out.push_str(&canonical_line(&header));
        out.push('\n');
        for obs in &self.observations {
            out.push_str(&canonical_line(&observation_record(self.objective_kind, obs)));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| MetricsError::Persistence(e.to_string()))
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| MetricsError::Persistence(e.to_string()))?;
        let mut lines = text.lines().enumerate();
        let (_, header_line) = lines
            .next()
            .ok_or_else(|| MetricsError::Persistence("empty history file".into()))?;
        let header: serde_json::Value = serde_json::from_str(header_line)
            .map_err(|e| MetricsError::Persistence(format!("line 1: {e}")))?;
        let field = |name: &str| -> Result<String, MetricsError> {
            header
                .get(name)
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .ok_or_else(|| MetricsError::Persistence(format!("line 1: missing `{name}`")))
        };
        let objective_kind: ObjectiveKind =
            serde_json::from_value(header.get("objective_kind").cloned().unwrap_or_default())
                .map_err(|e| MetricsError::Persistence(format!("line 1: {e}")))?;
        let mut history = RunHistory::new(
            field("session_id")?,
            field("method_label")?,
            objective_kind,
            field("space_digest")?,
        );
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let obs = parse_observation_record(line)
                .map_err(|e| MetricsError::Persistence(format!("line {}: {e}", idx + 1)))?;
            history.observations.push(obs);
        }
        Ok(history)
    }
}

/// One JSONL observation line with a fixed key set.
fn observation_record(kind: ObjectiveKind, obs: &Observation) -> serde_json::Value {
    let (status, objective, internal_metrics) = match &obs.status {
        ObservationStatus::Ok { feedback } => (
            serde_json::json!("ok"),
            serde_json::json!(feedback.objective),
            serde_json::to_value(&feedback.internal_metrics).unwrap(),
        ),
        ObservationStatus::Failed { error } => (
            serde_json::json!(format!("failed: {error}")),
            serde_json::Value::Null,
            serde_json::json!({}),
        ),
    };
    serde_json::json!({
        "iteration": obs.iteration,
        "config": obs.config.to_json(),
        "objective_kind": kind,
        "objective": objective,
        "internal_metrics": internal_metrics,
        "status": status,
        "timestamp": obs.timestamp,
    })
}

fn parse_observation_record(line: &str) -> Result<Observation, String> {
    let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let iteration = v
        .get("iteration")
        .and_then(|x| x.as_u64())
        .ok_or("missing `iteration`")? as u32;
    let config = serde_json::from_value(v.get("config").cloned().ok_or("missing `config`")?)
        .map_err(|e| e.to_string())?;
    let timestamp = v.get("timestamp").and_then(|x| x.as_f64()).unwrap_or(0.0);
    let status_text = v
        .get("status")
        .and_then(|x| x.as_str())
        .ok_or("missing `status`")?;
    let status = if status_text == "ok" {
        let objective_kind: ObjectiveKind = serde_json::from_value(
            v.get("objective_kind").cloned().ok_or("missing `objective_kind`")?,
        )
        .map_err(|e| e.to_string())?;
        let objective = v
            .get("objective")
            .and_then(|x| x.as_f64())
            .ok_or("missing `objective`")?;
        let internal_metrics: BTreeMap<String, f64> =
            serde_json::from_value(v.get("internal_metrics").cloned().unwrap_or_default())
                .map_err(|e| e.to_string())?;
        ObservationStatus::Ok {
            feedback: Feedback {
                objective_kind,
                objective,
                internal_metrics,
                eval_duration_seconds: 0.0,
            },
        }
    } else {
        ObservationStatus::Failed {
            error: status_text
                .strip_prefix("failed: ")
                .unwrap_or(status_text)
                .to_string(),
        }
    };
    Ok(Observation {
        iteration,
        config,
        status,
        timestamp,
    })
}

/// serde_json sorts object keys, so this is byte-stable per value.
fn canonical_line(v: &serde_json::Value) -> String {
    serde_json::to_string(v).expect("json serializes")
}

/// Optimal database performance: best objective over all observations,
/// including the default at iteration 0. Max for TPS, min for latency
/// (the ODP_AP reading).
pub fn compute_odp(history: &RunHistory) -> Result<f64, MetricsError> {
    history
        .successes()
        .map(|o| o.objective().unwrap())
        .reduce(|a, b| {
            if history.objective_kind.better(b, a) {
                b
            } else {
                a
            }
        })
        .ok_or(MetricsError::EmptyHistory)
}

/// Tuning efficiency score: the smallest iteration index >= 1 whose
/// objective first attains the ODP.
pub fn compute_tes(history: &RunHistory) -> Result<u32, MetricsError> {
    let odp = compute_odp(history)?;
    history
        .successes()
        .filter(|o| o.iteration >= 1)
        .find(|o| o.objective().unwrap() == odp)
        .map(|o| o.iteration)
        .ok_or(MetricsError::EmptyHistory)
}

/// Initial refinement: the objective at iteration 1.
pub fn compute_ir(history: &RunHistory) -> Result<f64, MetricsError> {
    history
        .successes()
        .find(|o| o.iteration == 1)
        .and_then(|o| o.objective())
        .ok_or(MetricsError::MissingFirstRefinement)
}

/// Performance enhancement of an initialized run against its own base
/// method's run: (ODP_init - ODP_orig) / ODP_orig.
pub fn compute_pe<F: Float>(odp_orig: F, odp_init: F) -> Result<F, MetricsError> {
    if odp_orig <= F::zero() {
        return Err(MetricsError::NonPositiveBase);
    }
    Ok((odp_init - odp_orig) / odp_orig)
}

/// Speedup of an initialized run: (TES_orig - TES_init) / TES_orig.
pub fn compute_speedup<F: Float>(tes_orig: F, tes_init: F) -> Result<F, MetricsError> {
    if tes_orig < F::one() {
        return Err(MetricsError::InvalidBaseTes);
    }
    Ok((tes_orig - tes_init) / tes_orig)
}

/// Metrics of one run, with PE/Speedup when a base pairing is declared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method_label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ir: Option<f64>,
    pub odp: f64,
    pub tes: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
}

impl MetricsReport {
    pub fn from_history(history: &RunHistory) -> Result<Self, MetricsError> {
        Ok(Self {
            method_label: history.method_label.clone(),
            ir: compute_ir(history).ok(),
            odp: compute_odp(history)?,
            tes: compute_tes(history)?,
            pe: None,
            speedup: None,
        })
    }

    pub fn with_base(mut self, base: &MetricsReport) -> Result<Self, MetricsError> {
        self.pe = Some(compute_pe(base.odp, self.odp)?);
        self.speedup = Some(compute_speedup(base.tes as f64, self.tes as f64)?);
        Ok(self)
    }
}

/// Table-style comparison over several histories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub objective_kind: ObjectiveKind,
    /// "ODP" for throughput sessions, "ODP_AP" for latency sessions
    pub odp_label: String,
    pub rows: Vec<MetricsReport>,
}

pub fn comparison_report(
    histories: &[RunHistory],
    base: Option<&RunHistory>,
) -> Result<ComparisonReport, MetricsError> {
    let first_kind = base
        .map(|h| h.objective_kind)
        .or_else(|| histories.first().map(|h| h.objective_kind))
        .ok_or(MetricsError::EmptyHistory)?;
    if histories.iter().any(|h| h.objective_kind != first_kind) {
        return Err(MetricsError::MixedObjectiveKinds);
    }
    let base_report = base.map(MetricsReport::from_history).transpose()?;
    let mut rows = Vec::new();
    if let Some(b) = &base_report {
        rows.push(b.clone());
    }
    for h in histories {
        let mut r = MetricsReport::from_history(h)?;
        if let Some(b) = &base_report {
            r = r.with_base(b)?;
        }
        rows.push(r);
    }
    Ok(ComparisonReport {
        objective_kind: first_kind,
        odp_label: match first_kind {
            ObjectiveKind::ThroughputTps => "ODP".to_string(),
            ObjectiveKind::LatencySeconds => "ODP_AP".to_string(),
        },
        rows,
    })
}

impl ComparisonReport {
    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let has_pairing = self.rows.iter().any(|r| r.pe.is_some());
        let mut head = vec![
            "Method".to_string(),
            "IR".to_string(),
            self.odp_label.clone(),
            "TES".to_string(),
        ];
        if has_pairing {
            head.push("PE".to_string());
            head.push("Speedup".to_string());
        }
        let mut table: Vec<Vec<String>> = vec![head];
        for r in &self.rows {
            let mut row = vec![
                r.method_label.clone(),
                r.ir.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
                format!("{:.2}", r.odp),
                r.tes.to_string(),
            ];
            if has_pairing {
                row.push(
                    r.pe.map(|v| format!("{:.2}%", v * 100.0))
                        .unwrap_or_else(|| "-".into()),
                );
                row.push(
                    r.speedup
                        .map(|v| format!("{:.2}%", v * 100.0))
                        .unwrap_or_else(|| "-".into()),
                );
            }
            table.push(row);
        }
        let cols = table[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &table {
            for (c, cell) in row.iter().enumerate() {
                let _ = write!(out, "{cell:<width$}  ", width = widths[c]);
            }
            out.truncate(out.trim_end().len());
            out.push('\n');
        }
        out
    }
}
