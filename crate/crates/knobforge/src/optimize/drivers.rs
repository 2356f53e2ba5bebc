//! Tuning-loop drivers: surrogate-based Bayesian optimization (GP and
//! random-forest variants), workload-mapping initialization, and the
//! LLM refinement loop.
//!
//! All drivers share the iteration convention: the default
//! configuration is evaluated as iteration 0, the first suggestion is
//! iteration 1. Failed evaluations keep their iteration index in the
//! history but never train surrogates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::advisor::{llm_refine_step, AdvisorError, ChatClient, EnvironmentInfo};
use crate::knobspace::{
    coerce_configuration, denormalize, normalize, CoercionPolicy, Configuration,
    ConfigurationSpace, SpaceError,
};
use crate::metrics::RunHistory;
use crate::target::{Feedback, Observation, TargetError, TuningTarget};

use super::forest::{ForestModel, ForestSettings};
use super::gp::GpModel;
use super::lhs::lhs_unit;
use super::{expected_improvement, lhs_sample};

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("every initialization evaluation failed")]
    AllInitFailed,
    #[error("no usable history: {0}")]
    NoHistory(String),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Advisor(#[from] AdvisorError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TunerBudget {
    pub max_iterations: u32,
    pub init_points: u32,
    pub rng_seed: u64,
}

impl TunerBudget {
    pub fn check(&self) -> Result<(), OptimizeError> {
        if self.init_points < 1 {
            return Err(OptimizeError::InvalidBudget("init_points must be >= 1".into()));
        }
        if self.init_points > self.max_iterations {
            return Err(OptimizeError::InvalidBudget(format!(
                "init_points ({}) exceeds max_iterations ({})",
                self.init_points, self.max_iterations
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BoSettings {
    /// LHS candidates scored by the acquisition each iteration
    pub candidates: usize,
    /// extra candidates perturbed around the incumbent
    pub local_perturbations: usize,
    /// per-coordinate sd of those perturbations (normalized units)
    pub perturbation_sd: f64,
    /// forest variant only: every n-th suggestion is pure random
    pub random_interleave: u32,
    pub forest: ForestSettings,
}

impl Default for BoSettings {
    fn default() -> Self {
        Self {
            candidates: 2048,
            local_perturbations: 10,
            perturbation_sd: 0.05,
            random_interleave: 4,
            forest: ForestSettings::default(),
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum SurrogateKind {
    Gp,
    Forest,
}

/// GP-surrogate Bayesian optimization with EI acquisition.
pub fn vbo_run(
    target: &mut dyn TuningTarget,
    space: &ConfigurationSpace,
    budget: &TunerBudget,
    seeds: Option<&[Configuration]>,
    settings: &BoSettings,
    session_id: &str,
    method_label: &str,
) -> Result<RunHistory, OptimizeError> {
    surrogate_run(
        SurrogateKind::Gp,
        target,
        space,
        budget,
        seeds,
        settings,
        session_id,
        method_label,
    )
}

/// Random-forest-surrogate optimization with EI acquisition and
/// periodic random interleaving.
pub fn smac_run(
    target: &mut dyn TuningTarget,
    space: &ConfigurationSpace,
    budget: &TunerBudget,
    seeds: Option<&[Configuration]>,
    settings: &BoSettings,
    session_id: &str,
    method_label: &str,
) -> Result<RunHistory, OptimizeError> {
    surrogate_run(
        SurrogateKind::Forest,
        target,
        space,
        budget,
        seeds,
        settings,
        session_id,
        method_label,
    )
}

#[allow(clippy::too_many_arguments)]
fn surrogate_run(
    kind: SurrogateKind,
    target: &mut dyn TuningTarget,
    space: &ConfigurationSpace,
    budget: &TunerBudget,
    seeds: Option<&[Configuration]>,
    settings: &BoSettings,
    session_id: &str,
    method_label: &str,
) -> Result<RunHistory, OptimizeError> {
    budget.check()?;
    let seeds = seeds.unwrap_or(&[]);
    if seeds.len() > budget.init_points as usize {
        return Err(OptimizeError::InvalidBudget(format!(
            "{} seeds exceed init_points {}",
            seeds.len(),
            budget.init_points
        )));
    }

    let kind_obj = target.objective_kind();
    let mut history = RunHistory::new(session_id, method_label, kind_obj, space.digest());
    let mut rng = ChaCha8Rng::seed_from_u64(budget.rng_seed);
    let mut clock = 0.0;

    evaluate_record(target, &space.default_configuration(), 0, &mut clock, &mut history);

    // seeds first, LHS filling the remaining init slots
    let mut init: Vec<Configuration> = seeds.to_vec();
    let fill = budget.init_points as usize - seeds.len();
    if fill > 0 {
        init.extend(lhs_sample(space, fill, rng.gen()));
    }

    let mut bo_suggestions = 0u32;
    for iteration in 1..=budget.max_iterations {
        let config = if (iteration as usize) <= init.len() {
            init[iteration as usize - 1].clone()
        } else {
            bo_suggestions += 1;
            let x = suggest(kind, space, &history, settings, &mut rng, bo_suggestions);
            denormalize(space, &x)?
        };
        evaluate_record(target, &config, iteration, &mut clock, &mut history);

        if iteration == budget.init_points
            && history.observations.iter().skip(1).all(|o| o.feedback().is_none())
        {
            return Err(OptimizeError::AllInitFailed);
        }
    }
    Ok(history)
}

fn evaluate_record(
    target: &mut dyn TuningTarget,
    config: &Configuration,
    iteration: u32,
    clock: &mut f64,
    history: &mut RunHistory,
) -> bool {
    match target.evaluate(config) {
        Ok(feedback) => {
            *clock += feedback.eval_duration_seconds.max(0.0);
            history.push(Observation::ok(iteration, config.clone(), feedback, *clock));
            true
        }
        Err(e) => {
            history.push(Observation::failed(iteration, config.clone(), e.to_string(), *clock));
            false
        }
    }
}

/// Next point in normalized coordinates: fit the surrogate on all
/// successes and take the acquisition argmax over LHS candidates plus
/// local perturbations of the incumbent. Falls back to a random point
/// when there is not enough data or the fit fails.
fn suggest(
    kind: SurrogateKind,
    space: &ConfigurationSpace,
    history: &RunHistory,
    settings: &BoSettings,
    rng: &mut ChaCha8Rng,
    bo_suggestion_index: u32,
) -> Vec<f64> {
    let dim = space.dimension();
    let random_point =
        |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| rng.gen::<f64>()).collect() };

    if kind == SurrogateKind::Forest
        && settings.random_interleave > 0
        && bo_suggestion_index % settings.random_interleave == 0
    {
        return random_point(rng);
    }

    let objective_kind = history.objective_kind;
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for o in &history.observations {
        if let Some(v) = o.objective() {
            xs.push(normalize(space, &o.config));
            ys.push(objective_kind.to_maximize(v));
        }
    }
    if xs.len() < 2 {
        return random_point(rng);
    }

    enum Surrogate {
        Gp(GpModel<f64>),
        Forest(ForestModel),
    }
    let surrogate = match kind {
        SurrogateKind::Gp => match GpModel::fit(&xs, &ys) {
            Ok(m) => Surrogate::Gp(m),
            Err(_) => return random_point(rng),
        },
        SurrogateKind::Forest => {
            let fs = ForestSettings {
                seed: rng.gen(),
                ..settings.forest.clone()
            };
            match ForestModel::fit(&xs, &ys, &fs) {
                Ok(m) => Surrogate::Forest(m),
                Err(_) => return random_point(rng),
            }
        }
    };

    let incumbent_idx = ys
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let incumbent_best = ys[incumbent_idx];

    let mut candidates = lhs_unit(settings.candidates, dim, rng);
    let normal = Normal::new(0.0, settings.perturbation_sd).unwrap();
    for _ in 0..settings.local_perturbations {
        let perturbed: Vec<f64> = xs[incumbent_idx]
            .iter()
            .map(|&c| (c + normal.sample(rng)).clamp(0.0, 1.0))
            .collect();
        candidates.push(perturbed);
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for cand in candidates {
        let (mean, var) = match &surrogate {
            Surrogate::Gp(m) => m.predict(&cand).unwrap(),
            Surrogate::Forest(m) => m.predict_with_variance(&cand).unwrap(),
        };
        let ei = expected_improvement(mean, var, incumbent_best, true);
        if best.as_ref().map(|(b, _)| ei > *b).unwrap_or(true) {
            best = Some((ei, cand));
        }
    }
    best.unwrap().1
}

/// Seeds a new session from the most similar historical one.
///
/// Similarity is Euclidean distance over z-scored internal metrics of
/// the default-configuration (iteration 0) feedback, restricted to
/// metric names shared between the target and every stored session.
/// Returns the nearest session's `top_n` best observations with their
/// configurations coerced into the current space.
pub fn workload_mapping_init(
    history_store: &[RunHistory],
    space: &ConfigurationSpace,
    target_metrics: &Feedback,
    top_n: usize,
) -> Result<Vec<Observation>, OptimizeError> {
    let mut sessions: Vec<(&RunHistory, &Feedback)> = Vec::new();
    for h in history_store {
        if let Some(fb) = h
            .observations
            .iter()
            .find(|o| o.iteration == 0)
            .and_then(|o| o.feedback())
        {
            sessions.push((h, fb));
        }
    }
    if sessions.is_empty() {
        return Err(OptimizeError::NoHistory(
            "no stored session has default-configuration feedback".into(),
        ));
    }

    let shared: Vec<&String> = target_metrics
        .internal_metrics
        .keys()
        .filter(|name| sessions.iter().all(|(_, fb)| fb.internal_metrics.contains_key(*name)))
        .collect();
    if shared.is_empty() {
        return Err(OptimizeError::NoHistory(
            "no internal metrics shared with the stored sessions".into(),
        ));
    }

    // z-score each metric over the stored sessions plus the target
    let mut distances: Vec<f64> = vec![0.0; sessions.len()];
    for name in &shared {
        let mut pool: Vec<f64> = sessions
            .iter()
            .map(|(_, fb)| fb.internal_metrics[*name])
            .collect();
        pool.push(target_metrics.internal_metrics[*name]);
        let n = pool.len() as f64;
        let mean = pool.iter().sum::<f64>() / n;
        let sd = (pool.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd == 0.0 {
            continue;
        }
        let zt = (target_metrics.internal_metrics[*name] - mean) / sd;
        for (i, (_, fb)) in sessions.iter().enumerate() {
            let zs = (fb.internal_metrics[*name] - mean) / sd;
            distances[i] += (zs - zt) * (zs - zt);
        }
    }

    let nearest = distances
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let (session, _) = sessions[nearest];

    let mut best: Vec<&Observation> = session
        .observations
        .iter()
        .filter(|o| o.feedback().is_some())
        .collect();
    best.sort_by(|a, b| {
        let (va, vb) = (a.objective().unwrap(), b.objective().unwrap());
        if session.objective_kind.better(va, vb) {
            std::cmp::Ordering::Less
        } else if session.objective_kind.better(vb, va) {
            std::cmp::Ordering::Greater
        } else {
            a.iteration.cmp(&b.iteration)
        }
    });

    let mut out = Vec::new();
    for obs in best.into_iter().take(top_n) {
        let raw: std::collections::BTreeMap<String, serde_json::Value> = obs
            .config
            .values()
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::to_value(v).unwrap()))
            .collect();
        let (config, _) = coerce_configuration(space, &raw, CoercionPolicy::ClampRound)
            .map_err(|_| OptimizeError::NoHistory("stored observation is uncoercible".into()))?;
        let mut coerced = obs.clone();
        coerced.config = config;
        out.push(coerced);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LlmRunSettings {
    pub max_rounds: u32,
    pub retries: u32,
    pub max_consecutive_failures: u32,
    pub model: String,
}

impl Default for LlmRunSettings {
    fn default() -> Self {
        Self {
            max_rounds: 30,
            retries: crate::advisor::DEFAULT_RETRIES,
            max_consecutive_failures: 5,
            model: "gpt-4o".into(),
        }
    }
}

/// LLM iterative refinement: evaluate the default, then repeatedly ask
/// for an adjusted configuration and evaluate it, feeding the result
/// back into the next prompt. Stops at `max_rounds` or after
/// `max_consecutive_failures` refinement failures in a row.
pub fn llm_tuning_run(
    target: &mut dyn TuningTarget,
    space: &ConfigurationSpace,
    env: &EnvironmentInfo,
    client: &mut dyn ChatClient,
    settings: &LlmRunSettings,
    session_id: &str,
    method_label: &str,
) -> Result<RunHistory, OptimizeError> {
    let mut history = RunHistory::new(
        session_id,
        method_label,
        target.objective_kind(),
        space.digest(),
    );
    let mut clock = 0.0;

    let default = space.default_configuration();
    let default_feedback = target.evaluate(&default)?;
    clock += default_feedback.eval_duration_seconds.max(0.0);
    history.push(Observation::ok(0, default.clone(), default_feedback.clone(), clock));

    let mut current = default;
    let mut current_feedback = default_feedback;
    let mut consecutive_failures = 0u32;

    for round in 1..=settings.max_rounds {
        let next = match llm_refine_step(
            client,
            space,
            env,
            &current,
            &current_feedback,
            settings.retries,
            &settings.model,
        ) {
            Ok((config, _log)) => config,
            Err(AdvisorError::RefineFailed { .. }) => {
                consecutive_failures += 1;
                if consecutive_failures >= settings.max_consecutive_failures {
                    break;
                }
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        consecutive_failures = 0;
        if evaluate_record(target, &next, round, &mut clock, &mut history) {
            current_feedback = history
                .observations
                .last()
                .and_then(|o| o.feedback())
                .cloned()
                .unwrap();
            current = next;
        }
    }
    Ok(history)
}
