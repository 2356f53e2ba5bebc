//! Tuning targets: the evaluation contract, a deterministic simulated
//! DBMS for desk-scale runs, and an external-command adapter for real
//! engines.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knobspace::{normalize, Configuration, ConfigurationSpace};

/// Which kind of objective a tuning session optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    ThroughputTps,
    LatencySeconds,
}

impl ObjectiveKind {
    /// true when `a` is strictly better than `b` under this objective.
    pub fn better(&self, a: f64, b: f64) -> bool {
        match self {
            ObjectiveKind::ThroughputTps => a > b,
            ObjectiveKind::LatencySeconds => a < b,
        }
    }

    /// Sign flip so optimizers can always maximize internally.
    pub fn to_maximize(&self, v: f64) -> f64 {
        match self {
            ObjectiveKind::ThroughputTps => v,
            ObjectiveKind::LatencySeconds => -v,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ObjectiveKind::ThroughputTps => "throughput_tps",
            ObjectiveKind::LatencySeconds => "latency_seconds",
        }
    }
}

/// What a target reports back after one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub objective_kind: ObjectiveKind,
    pub objective: f64,
    #[serde(default)]
    pub internal_metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub eval_duration_seconds: f64,
}

#[derive(Debug, Clone, Error)]
pub enum TargetError {
    #[error("target unavailable: {0}")]
    Unavailable(String),
    #[error("evaluation timed out: {0}")]
    Timeout(String),
    #[error("evaluation failed: {0}")]
    EvaluationFailed(String),
}

/// Outcome carried by an [`Observation`]; failures stay in the history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ObservationStatus {
    Ok { feedback: Feedback },
    Failed { error: String },
}

/// One (configuration, feedback) record of a tuning session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub iteration: u32,
    pub config: Configuration,
    #[serde(flatten)]
    pub status: ObservationStatus,
    /// seconds since the session epoch; logical for simulated targets
    pub timestamp: f64,
}

impl Observation {
    pub fn ok(iteration: u32, config: Configuration, feedback: Feedback, timestamp: f64) -> Self {
        Self {
            iteration,
            config,
            status: ObservationStatus::Ok { feedback },
            timestamp,
        }
    }

    pub fn failed(iteration: u32, config: Configuration, error: String, timestamp: f64) -> Self {
        Self {
            iteration,
            config,
            status: ObservationStatus::Failed { error },
            timestamp,
        }
    }

    pub fn feedback(&self) -> Option<&Feedback> {
        match &self.status {
            ObservationStatus::Ok { feedback } => Some(feedback),
            ObservationStatus::Failed { .. } => None,
        }
    }

    pub fn objective(&self) -> Option<f64> {
        self.feedback().map(|f| f.objective)
    }
}

/// The contract every tuning target implements: apply a configuration,
/// run the workload, return feedback. Callers serialize evaluations.
pub trait TuningTarget {
    fn objective_kind(&self) -> ObjectiveKind;
    fn evaluate(&mut self, config: &Configuration) -> Result<Feedback, TargetError>;
}

/// Per-knob response shape of the synthetic surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseShape {
    Quadratic,
    Saturating,
    Step,
}

impl ResponseShape {
    /// Shape value in [0, 1] at normalized coordinate `x` with optimum `opt`.
    pub fn value(&self, x: f64, opt: f64) -> f64 {
        match self {
            ResponseShape::Quadratic => (1.0 - 4.0 * (x - opt) * (x - opt)).max(0.0),
            ResponseShape::Saturating => {
                if opt <= 0.0 {
                    1.0
                } else {
                    (x / opt).min(1.0)
                }
            }
            ResponseShape::Step => {
                if x >= opt {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportantKnob {
    pub name: String,
    pub weight: f64,
    /// optimum position in normalized [0, 1] coordinates
    pub optimum: f64,
    pub shape: ResponseShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionPair {
    pub a: String,
    pub b: String,
    pub weight: f64,
}

/// Construction recipe for the simulated DBMS response surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSurfaceSpec {
    pub seed: u64,
    pub base_objective: f64,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub important_knobs: Vec<ImportantKnob>,
    #[serde(default)]
    pub interaction_pairs: Vec<InteractionPair>,
    #[serde(default = "default_objective_kind")]
    pub objective_kind: ObjectiveKind,
}

fn default_objective_kind() -> ObjectiveKind {
    ObjectiveKind::ThroughputTps
}

impl SynthSurfaceSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TargetError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TargetError::Unavailable(format!("surface spec: {e}")))?;
        serde_json::from_str(&text)
            .map_err(|e| TargetError::Unavailable(format!("surface spec parse: {e}")))
    }

    pub fn check(&self, space: &ConfigurationSpace) -> Result<(), TargetError> {
        if self.base_objective <= 0.0 {
            return Err(TargetError::Unavailable(
                "base_objective must be positive".into(),
            ));
        }
        if self.noise_sd < 0.0 {
            return Err(TargetError::Unavailable("noise_sd must be >= 0".into()));
        }
        let mut weight_sum = 0.0;
        for ik in &self.important_knobs {
            if space.knob(&ik.name).is_none() {
                return Err(TargetError::Unavailable(format!(
                    "important knob `{}` not in space",
                    ik.name
                )));
            }
            if ik.weight < 0.0 {
                return Err(TargetError::Unavailable("weights must be >= 0".into()));
            }
            weight_sum += ik.weight;
        }
        if !self.important_knobs.is_empty() && weight_sum <= 0.0 {
            return Err(TargetError::Unavailable(
                "important knob weights must sum above zero".into(),
            ));
        }
        for p in &self.interaction_pairs {
            if space.knob(&p.a).is_none() || space.knob(&p.b).is_none() {
                return Err(TargetError::Unavailable(format!(
                    "interaction pair ({}, {}) not in space",
                    p.a, p.b
                )));
            }
        }
        Ok(())
    }
}

/// Noise-free surface value at `config`. Knobs the spec does not
/// mention contribute nothing.
pub fn synth_objective(
    spec: &SynthSurfaceSpec,
    space: &ConfigurationSpace,
    config: &Configuration,
) -> f64 {
    let coords = coord_map(space, config);
    let mut v = spec.base_objective;
    for ik in &spec.important_knobs {
        let x = coords.get(ik.name.as_str()).copied().unwrap_or(0.0);
        v += ik.weight * ik.shape.value(x, ik.optimum);
    }
    for p in &spec.interaction_pairs {
        let xa = coords.get(p.a.as_str()).copied().unwrap_or(0.0);
        let xb = coords.get(p.b.as_str()).copied().unwrap_or(0.0);
        v += p.weight * xa * xb;
    }
    v
}

/// Deterministic pseudo internal metrics: one pressure gauge per
/// important knob (1 - shape; high means badly set) plus the objective
/// echoed back.
pub fn synth_internal_metrics(
    spec: &SynthSurfaceSpec,
    space: &ConfigurationSpace,
    config: &Configuration,
    objective: f64,
) -> BTreeMap<String, f64> {
    let coords = coord_map(space, config);
    let mut metrics = BTreeMap::new();
    for ik in &spec.important_knobs {
        let x = coords.get(ik.name.as_str()).copied().unwrap_or(0.0);
        metrics.insert(
            format!("{}_pressure", ik.name),
            1.0 - ik.shape.value(x, ik.optimum),
        );
    }
    metrics.insert("objective_echo".to_string(), objective);
    metrics
}

fn coord_map<'a>(
    space: &'a ConfigurationSpace,
    config: &Configuration,
) -> BTreeMap<&'a str, f64> {
    let coords = normalize(space, config);
    space
        .knobs()
        .iter()
        .map(|k| k.name.as_str())
        .zip(coords)
        .collect()
}

/// The deterministic simulated DBMS.
pub struct Simulator {
    spec: SynthSurfaceSpec,
    space: ConfigurationSpace,
    rng: ChaCha8Rng,
}

impl Simulator {
    pub fn new(spec: SynthSurfaceSpec, space: ConfigurationSpace) -> Result<Self, TargetError> {
        spec.check(&space)?;
        let rng = ChaCha8Rng::seed_from_u64(spec.seed);
        Ok(Self { spec, space, rng })
    }

    pub fn spec(&self) -> &SynthSurfaceSpec {
        &self.spec
    }

    pub fn space(&self) -> &ConfigurationSpace {
        &self.space
    }

    /// The config whose normalized coordinates sit at the optimum
    /// positions; the argmax by construction for quadratic/saturating
    /// surfaces without interactions.
    pub fn oracle_optimum_config(&self) -> Configuration {
        let coords: Vec<f64> = self
            .space
            .knobs()
            .iter()
            .map(|k| {
                self.spec
                    .important_knobs
                    .iter()
                    .find(|ik| ik.name == k.name)
                    .map(|ik| ik.optimum)
                    .unwrap_or(0.0)
            })
            .collect();
        crate::knobspace::denormalize(&self.space, &coords).expect("matching dimensions")
    }

    /// Noise-free objective at the constructed optimum.
    pub fn oracle_optimum_value(&self) -> f64 {
        synth_objective(&self.spec, &self.space, &self.oracle_optimum_config())
    }

    pub fn objective_noise_free(&self, config: &Configuration) -> f64 {
        synth_objective(&self.spec, &self.space, config)
    }
}

impl TuningTarget for Simulator {
    fn objective_kind(&self) -> ObjectiveKind {
        self.spec.objective_kind
    }

    fn evaluate(&mut self, config: &Configuration) -> Result<Feedback, TargetError> {
        let mut objective = synth_objective(&self.spec, &self.space, config);
        if self.spec.noise_sd > 0.0 {
            let normal = Normal::new(0.0, self.spec.noise_sd)
                .map_err(|e| TargetError::EvaluationFailed(e.to_string()))?;
            objective += normal.sample(&mut self.rng);
        }
        let internal_metrics = synth_internal_metrics(&self.spec, &self.space, config, objective);
        Ok(Feedback {
            objective_kind: self.spec.objective_kind,
            objective,
            internal_metrics,
            eval_duration_seconds: 0.0,
        })
    }
}

/// External command hooks; declared in the session config file.
///
/// Substitution variables: `{config_file}` in the apply hook, or
/// `{knob_name}`/`{knob_value}` to run the apply hook once per knob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HookCommands {
    #[serde(default)]
    pub apply: Option<String>,
    #[serde(default)]
    pub restart: Option<String>,
    pub benchmark: String,
    /// regex with one capture group yielding the objective value
    pub objective_pattern: String,
    #[serde(default)]
    pub metrics: Option<String>,
}

/// Bridges to a real engine by shelling out to the configured hooks.
pub struct ExternalTarget {
    hooks: HookCommands,
    objective_kind: ObjectiveKind,
    objective_re: Regex,
    work_dir: std::path::PathBuf,
}

impl ExternalTarget {
    pub fn new(
        hooks: HookCommands,
        objective_kind: ObjectiveKind,
        work_dir: impl Into<std::path::PathBuf>,
    ) -> Result<Self, TargetError> {
        let objective_re = Regex::new(&hooks.objective_pattern)
            .map_err(|e| TargetError::Unavailable(format!("objective_pattern: {e}")))?;
        Ok(Self {
            hooks,
            objective_kind,
            objective_re,
            work_dir: work_dir.into(),
        })
    }

    fn run_hook(&self, command: &str, label: &str) -> Result<String, TargetError> {
        let out = Command::new("sh")
            .arg("-c")
            .arg(command)
            .output()
            .map_err(|e| TargetError::Unavailable(format!("{label} hook spawn: {e}")))?;
        if !out.status.success() {
            return Err(TargetError::Unavailable(format!(
                "{label} hook exited with {}",
                out.status
            )));
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }

    fn apply(&self, config: &Configuration) -> Result<(), TargetError> {
        let Some(apply) = &self.hooks.apply else {
            return Ok(());
        };
        if apply.contains("{config_file}") {
            std::fs::create_dir_all(&self.work_dir)
                .map_err(|e| TargetError::Unavailable(e.to_string()))?;
            let path = self.work_dir.join("knobforge_apply.cnf");
            let mut f = std::fs::File::create(&path)
                .map_err(|e| TargetError::Unavailable(e.to_string()))?;
            for (name, value) in config.values() {
                writeln!(f, "{name} = {value}")
                    .map_err(|e| TargetError::Unavailable(e.to_string()))?;
            }
            let cmd = apply.replace("{config_file}", &path.to_string_lossy());
            self.run_hook(&cmd, "apply")?;
        } else {
            for (name, value) in config.values() {
                let cmd = apply
                    .replace("{knob_name}", name)
                    .replace("{knob_value}", &value.to_string());
                self.run_hook(&cmd, "apply")?;
            }
        }
        Ok(())
    }

    fn parse_metrics(stdout: &str) -> BTreeMap<String, f64> {
        let mut metrics = BTreeMap::new();
        for line in stdout.lines() {
            let Some((name, rest)) = line.split_once([':', '=']) else {
                continue;
            };
            if let Ok(v) = rest.trim().parse::<f64>() {
                metrics.insert(name.trim().to_string(), v);
            }
        }
        metrics
    }
}

impl TuningTarget for ExternalTarget {
    fn objective_kind(&self) -> ObjectiveKind {
        self.objective_kind
    }

    fn evaluate(&mut self, config: &Configuration) -> Result<Feedback, TargetError> {
        let started = std::time::Instant::now();
        self.apply(config)?;
        if let Some(restart) = &self.hooks.restart {
            self.run_hook(restart, "restart")?;
        }
        let stdout = self.run_hook(&self.hooks.benchmark, "benchmark")?;
        let objective = self
            .objective_re
            .captures(&stdout)
            .and_then(|c| c.get(1))
            .and_then(|m| m.as_str().parse::<f64>().ok())
            .ok_or_else(|| {
                TargetError::EvaluationFailed(format!(
                    "benchmark output did not match objective pattern `{}`",
                    self.hooks.objective_pattern
                ))
            })?;
        let internal_metrics = match &self.hooks.metrics {
            Some(cmd) => Self::parse_metrics(&self.run_hook(cmd, "metrics")?),
            None => BTreeMap::new(),
        };
        Ok(Feedback {
            objective_kind: self.objective_kind,
            objective,
            internal_metrics,
            eval_duration_seconds: started.elapsed().as_secs_f64(),
        })
    }
}
