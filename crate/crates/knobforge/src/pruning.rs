//! Data-driven knob importance: sampled-permutation Shapley values over
//! a forest surrogate, observation collection, percentile-based range
//! narrowing, and selection-comparison reporting.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knobspace::{
    normalize, ConfigurationSpace, KnobDomain, KnobValue, NarrowedDomain,
    PrunedSpace,
};
use crate::optimize::{lhs_sample, ForestError, ForestModel, ForestSettings};
use crate::target::{Observation, TuningTarget};

#[derive(Debug, Error)]
pub enum PruningError {
    #[error("insufficient data: only {successes} successful observations, need {needed}")]
    InsufficientData { successes: usize, needed: usize },
    #[error("invalid k = {k}: ranking holds {len} knobs")]
    InvalidK { k: usize, len: usize },
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("serialization: {0}")]
    Io(String),
}

impl From<std::io::Error> for PruningError {
    fn from(e: std::io::Error) -> Self {
        PruningError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for PruningError {
    fn from(e: serde_json::Error) -> Self {
        PruningError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMethod {
    ShapleySurrogate,
    Llm,
}

/// Knobs ordered by estimated impact, most important first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub entries: Vec<(String, f64)>,
    pub method: ImportanceMethod,
}

impl ImportanceRanking {
    pub fn top_k(&self, k: usize) -> Result<Vec<String>, PruningError> {
        if k > self.entries.len() {
            return Err(PruningError::InvalidK {
                k,
                len: self.entries.len(),
            });
        }
        Ok(self.entries[..k].iter().map(|(n, _)| n.clone()).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PruningError> {
        Ok(std::fs::write(path, serde_json::to_string_pretty(self)?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PruningError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// LHS-samples `n` configurations and evaluates each; failed
/// evaluations are dropped and counted in `failures`.
#[derive(Debug)]
pub struct CollectedObservations {
    pub observations: Vec<Observation>,
    pub failures: usize,
}

pub fn collect_observations(
    target: &mut dyn TuningTarget,
    space: &ConfigurationSpace,
    n: usize,
    seed: u64,
) -> Result<CollectedObservations, PruningError> {
    assert!(n >= 2);
    let mut observations = Vec::new();
    let mut failures = 0;
    for (i, config) in lhs_sample(space, n, seed).into_iter().enumerate() {
        match target.evaluate(&config) {
            Ok(feedback) => {
                observations.push(Observation::ok(i as u32 + 1, config, feedback, 0.0))
            }
            Err(_) => failures += 1,
        }
    }
    if observations.len() < 2 {
        return Err(PruningError::InsufficientData {
            successes: observations.len(),
            needed: 2,
        });
    }
    Ok(CollectedObservations {
        observations,
        failures,
    })
}

/// Sampled-permutation Shapley importance over a forest surrogate.
///
/// For each sampled permutation, knobs flip one by one from the default
/// value to the value of one randomly chosen observation; a knob's
/// importance is its average absolute marginal change in the surrogate
/// prediction. Observations are canonicalized by sorting, so input
/// order never affects the result for a fixed seed.
pub fn shapley_importance(
    observations: &[Observation],
    space: &ConfigurationSpace,
    permutations_count: usize,
    seed: u64,
) -> Result<ImportanceRanking, PruningError> {
    let dim = space.dimension();
    let mut data: Vec<(Vec<f64>, f64)> = observations
        .iter()
        .filter_map(|o| {
            o.feedback().map(|fb| {
                (
                    normalize(space, &o.config),
                    fb.objective_kind.to_maximize(fb.objective),
                )
            })
        })
        .collect();
    if data.len() < 2 * dim {
        return Err(PruningError::InsufficientData {
            successes: data.len(),
            needed: 2 * dim,
        });
    }
    data.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(a.1.total_cmp(&b.1))
    });
    let xs: Vec<Vec<f64>> = data.iter().map(|(x, _)| x.clone()).collect();
    let ys: Vec<f64> = data.iter().map(|(_, y)| *y).collect();

    let settings = ForestSettings {
        seed,
        ..ForestSettings::default()
    };
    let model = ForestModel::fit(&xs, &ys, &settings)?;

    let defaults = normalize(space, &space.default_configuration());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut totals = vec![0.0; dim];
    let mut order: Vec<usize> = (0..dim).collect();
    for _ in 0..permutations_count {
        let source = &xs[rng.gen_range(0..xs.len())];
        order.shuffle(&mut rng);
        let mut point = defaults.clone();
        let mut prev = model.predict(&point).expect("dimension fixed");
        for &knob_idx in &order {
            point[knob_idx] = source[knob_idx];
            let cur = model.predict(&point).expect("dimension fixed");
            totals[knob_idx] += (cur - prev).abs();
            prev = cur;
        }
    }

    let mut entries: Vec<(String, f64)> = space
        .knobs()
        .iter()
        .zip(&totals)
        .map(|(k, &t)| (k.name.clone(), t / permutations_count as f64))
        .collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ImportanceRanking {
        entries,
        method: ImportanceMethod::ShapleySurrogate,
    })
}

fn numeric_of(value: &KnobValue) -> Option<f64> {
    match value {
        KnobValue::Int(v) => Some(*v as f64),
        KnobValue::Real(v) => Some(*v),
        _ => None,
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    // nearest-rank
    let idx = ((p / 100.0 * sorted.len() as f64).ceil() as usize).max(1) - 1;
    sorted[idx.min(sorted.len() - 1)]
}

/// Narrows the top-`k` ranked knobs to the [10th, 90th] percentile of
/// their values among the top-decile observations (by objective).
pub fn data_driven_pruned_space(
    space: &ConfigurationSpace,
    observations: &[Observation],
    ranking: &ImportanceRanking,
    k: usize,
) -> Result<PrunedSpace, PruningError> {
    let selected = ranking.top_k(k)?;
    let mut successes: Vec<&Observation> =
        observations.iter().filter(|o| o.feedback().is_some()).collect();
    if successes.len() < 2 {
        return Err(PruningError::InsufficientData {
            successes: successes.len(),
            needed: 2,
        });
    }
    let kind = successes[0].feedback().unwrap().objective_kind;
    successes.sort_by(|a, b| {
        let (va, vb) = (a.objective().unwrap(), b.objective().unwrap());
        if kind.better(va, vb) {
            std::cmp::Ordering::Less
        } else if kind.better(vb, va) {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        }
    });
    let decile = &successes[..successes.len().div_ceil(10)];

    let mut narrowed_ranges = std::collections::BTreeMap::new();
    for name in &selected {
        let knob = space.knob(name).expect("ranking over this space");
        match &knob.domain {
            KnobDomain::Integer { .. } | KnobDomain::Real { .. } => {
                let mut values: Vec<f64> = decile
                    .iter()
                    .filter_map(|o| o.config.get(name).and_then(numeric_of))
                    .collect();
                if values.is_empty() {
                    continue;
                }
                values.sort_by(f64::total_cmp);
                let lo = percentile(&values, 10.0);
                let hi = percentile(&values, 90.0);
                if lo < hi {
                    narrowed_ranges
                        .insert(name.clone(), NarrowedDomain::Range { min: lo, max: hi });
                }
            }
            KnobDomain::Enumeration { choices, .. } => {
                let observed: BTreeSet<String> = decile
                    .iter()
                    .filter_map(|o| match o.config.get(name) {
                        Some(KnobValue::Enum(s)) => Some(s.clone()),
                        _ => None,
                    })
                    .collect();
                if observed.is_empty() {
                    continue;
                }
                let kept: Vec<String> = choices
                    .iter()
                    .filter(|c| observed.contains(*c))
                    .cloned()
                    .collect();
                narrowed_ranges.insert(name.clone(), NarrowedDomain::Choices { choices: kept });
            }
            KnobDomain::Boolean { .. } => {}
        }
    }

    Ok(PrunedSpace {
        parent: space.clone(),
        selected,
        narrowed_ranges,
    })
}

/// Table-style comparison of knob selections against a reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningReport {
    pub k: usize,
    pub reference_top: Vec<String>,
    pub rows: Vec<PruningReportRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningReportRow {
    pub label: String,
    pub top: Vec<String>,
    pub overlap: usize,
    pub only_in_ranking: Vec<String>,
    pub only_in_reference: Vec<String>,
}

pub fn pruning_report(
    rankings: &[(&str, &ImportanceRanking)],
    reference: &ImportanceRanking,
    k: usize,
) -> Result<PruningReport, PruningError> {
    let reference_top = reference.top_k(k)?;
    let ref_set: BTreeSet<&String> = reference_top.iter().collect();
    let mut rows = Vec::new();
    for (label, ranking) in rankings {
        let top = ranking.top_k(k)?;
        let top_set: BTreeSet<&String> = top.iter().collect();
        let overlap = top_set.intersection(&ref_set).count();
        rows.push(PruningReportRow {
            label: label.to_string(),
            only_in_ranking: top
                .iter()
                .filter(|n| !ref_set.contains(n))
                .cloned()
                .collect(),
            only_in_reference: reference_top
                .iter()
                .filter(|n| !top_set.contains(n))
                .cloned()
                .collect(),
            top,
            overlap,
        });
    }
    Ok(PruningReport {
        k,
        reference_top,
        rows,
    })
}

impl PruningReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PruningError> {
        Ok(std::fs::write(path, serde_json::to_string_pretty(self)?)?)
    }

    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .chain(["method".len()])
            .max()
            .unwrap();
        let mut out = format!(
            "top-{} selection vs reference [{}]\n{:<width$}  overlap  differences\n",
            self.k,
            self.reference_top.join(", "),
            "method",
        );
        for row in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:>4}/{}  +[{}] -[{}]\n",
                row.label,
                row.overlap,
                self.k,
                row.only_in_ranking.join(", "),
                row.only_in_reference.join(", "),
            ));
        }
        out
    }
}
