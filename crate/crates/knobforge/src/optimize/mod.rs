//! Classical optimizers and tuning-loop drivers.

pub mod drivers;
pub mod ei;
pub mod forest;
pub mod gp;
pub mod lhs;

pub use drivers::{
    llm_tuning_run, smac_run, vbo_run, workload_mapping_init, BoSettings, LlmRunSettings,
    OptimizeError, TunerBudget,
};
pub use ei::{expected_improvement, standard_normal_cdf, standard_normal_pdf};
pub use forest::{ForestError, ForestModel, ForestSettings};
pub use gp::{lml_and_grad, GpError, GpModel, GpParams};
pub use lhs::{lhs_sample, lhs_unit};
