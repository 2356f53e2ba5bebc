//! knobforge: a database knob-tuning workbench.
//!
//! The pipeline mirrors common practice: prune a large knob catalog to
//! the few knobs that matter, optionally warm-start the optimizer with
//! LLM-sampled or history-mapped configurations, then tune with a
//! surrogate-based optimizer or an LLM refinement loop, and report
//! IR / ODP / TES / PE / Speedup metrics over the run histories.
//!
//! Numeric cores (the GP surrogate, the acquisition, and the paired
//! PE/Speedup ratios) are generic over the float type via
//! `num_traits::Float`; the aliases below pin the f64 instantiations
//! used everywhere else.

pub mod advisor;
pub mod knobspace;
pub mod metrics;
pub mod optimize;
pub mod pruning;
pub mod session;
pub mod target;

/// f64 Gaussian-process surrogate.
pub type GpModel = optimize::GpModel<f64>;
/// f64 GP hyperparameters.
pub type GpParams = optimize::GpParams<f64>;

/// f64 expected improvement.
pub fn expected_improvement(mean: f64, variance: f64, incumbent_best: f64, maximize: bool) -> f64 {
    optimize::expected_improvement(mean, variance, incumbent_best, maximize)
}

/// f64 performance-enhancement ratio.
pub fn compute_pe(odp_orig: f64, odp_init: f64) -> Result<f64, metrics::MetricsError> {
    metrics::compute_pe(odp_orig, odp_init)
}

/// f64 speedup ratio.
pub fn compute_speedup(tes_orig: f64, tes_init: f64) -> Result<f64, metrics::MetricsError> {
    metrics::compute_speedup(tes_orig, tes_init)
}
