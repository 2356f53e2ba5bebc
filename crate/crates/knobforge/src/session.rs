//! Session configuration: one JSON file describing the knob catalog,
//! the tuning target, the LLM endpoint (or mock), budgets, and output
//! location. `${VAR}` references interpolate from the environment so
//! secrets never live in the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advisor::EnvironmentInfo;
use crate::knobspace::ConfigurationSpace;
use crate::optimize::TunerBudget;
use crate::target::{
    ExternalTarget, HookCommands, ObjectiveKind, Simulator, SynthSurfaceSpec, TargetError,
    TuningTarget,
};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("cannot read session config: {0}")]
    Unreadable(String),
    #[error("session config parse error: {0}")]
    Parse(String),
    #[error("environment variable `{0}` referenced in the session config is not set")]
    MissingEnvVar(String),
    #[error("invalid session config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetConfig {
    /// path to a synthetic-surface spec file
    Simulator { surface_path: String },
    External { hooks: HookCommands },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmConfig {
    Http {
        base_url: String,
        model: String,
        #[serde(default = "default_timeout")]
        timeout_seconds: u64,
    },
    Mock { policy: MockPolicyConfig },
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockPolicyConfig {
    /// hill-climbing toward the simulator's constructed optimum;
    /// only valid with a simulator target
    HillClimbOracle,
    Echo,
    Malformed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Budgets {
    pub tune: TunerBudget,
    /// LHS observations for the data-driven pruning path
    #[serde(default = "default_prune_samples")]
    pub prune_samples: usize,
    /// distinct configurations requested by initialization sampling
    #[serde(default = "default_init_u")]
    pub init_u: usize,
}

fn default_prune_samples() -> usize {
    200
}

fn default_init_u() -> usize {
    10
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            tune: TunerBudget {
                max_iterations: 60,
                init_points: 10,
                rng_seed: 0,
            },
            prune_samples: default_prune_samples(),
            init_u: default_init_u(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionConfig {
    pub catalog_path: String,
    pub target: TargetConfig,
    pub objective_kind: ObjectiveKind,
    pub llm: LlmConfig,
    pub environment: EnvironmentInfo,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub seed: u64,
    /// directory the config file was loaded from; relative paths
    /// resolve against it
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> String {
    ".".into()
}

/// Replaces `${VAR}` references with environment values.
pub fn interpolate_env(text: &str) -> Result<String, SessionError> {
    let re = regex::Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap();
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for caps in re.captures_iter(text) {
        let m = caps.get(0).unwrap();
        let name = &caps[1];
        out.push_str(&text[last..m.start()]);
        out.push_str(
            &std::env::var(name).map_err(|_| SessionError::MissingEnvVar(name.to_string()))?,
        );
        last = m.end();
    }
    out.push_str(&text[last..]);
    Ok(out)
}

impl SessionConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| SessionError::Unreadable(format!("{}: {e}", path.display())))?;
        let interpolated = interpolate_env(&raw)?;
        let mut config: SessionConfig =
            serde_json::from_str(&interpolated).map_err(|e| SessionError::Parse(e.to_string()))?;
        config.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        config.check()?;
        Ok(config)
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn catalog_file(&self) -> PathBuf {
        self.resolve(&self.catalog_path)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    fn check(&self) -> Result<(), SessionError> {
        if !self.catalog_file().is_file() {
            return Err(SessionError::Invalid(format!(
                "catalog file `{}` does not exist",
                self.catalog_file().display()
            )));
        }
        if let TargetConfig::Simulator { surface_path } = &self.target {
            if !self.resolve(surface_path).is_file() {
                return Err(SessionError::Invalid(format!(
                    "surface spec `{}` does not exist",
                    self.resolve(surface_path).display()
                )));
            }
        }
        if matches!(
            (&self.llm, &self.target),
            (
                LlmConfig::Mock {
                    policy: MockPolicyConfig::HillClimbOracle
                },
                TargetConfig::External { .. }
            )
        ) {
            return Err(SessionError::Invalid(
                "the hill_climb_oracle mock needs a simulator target".into(),
            ));
        }
        std::fs::create_dir_all(self.output_dir())
            .map_err(|e| SessionError::Invalid(format!("output_dir: {e}")))?;
        Ok(())
    }

    pub fn load_space(&self) -> Result<ConfigurationSpace, crate::knobspace::SpaceError> {
        ConfigurationSpace::load_catalog(self.catalog_file())
    }

    pub fn build_target(
        &self,
        space: &ConfigurationSpace,
    ) -> Result<Box<dyn TuningTarget>, TargetError> {
        match &self.target {
            TargetConfig::Simulator { surface_path } => {
                let spec = SynthSurfaceSpec::load(self.resolve(surface_path))?;
                Ok(Box::new(Simulator::new(spec, space.clone())?))
            }
            TargetConfig::External { hooks } => Ok(Box::new(ExternalTarget::new(
                hooks.clone(),
                self.objective_kind,
                self.output_dir(),
            )?)),
        }
    }

    /// The simulator for oracle-aware mocks; None for external targets.
    pub fn build_simulator(
        &self,
        space: &ConfigurationSpace,
    ) -> Result<Option<Simulator>, TargetError> {
        match &self.target {
            TargetConfig::Simulator { surface_path } => {
                let spec = SynthSurfaceSpec::load(self.resolve(surface_path))?;
                Ok(Some(Simulator::new(spec, space.clone())?))
            }
            TargetConfig::External { .. } => Ok(None),
        }
    }

    pub fn model_name(&self) -> &str {
        match &self.llm {
            LlmConfig::Http { model, .. } => model,
            LlmConfig::Mock { .. } => "mock",
        }
    }
}
