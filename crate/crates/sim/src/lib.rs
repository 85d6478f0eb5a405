//! Simulation harness: four covariate-shift settings across three sites,
//! the four competing estimators, replicated runs and report rendering.

pub mod method;
pub mod report;
pub mod setting;
pub mod study;

pub use method::{run_method, HistogramTilt, MethodConfig, MethodOutput, MethodTag};
pub use setting::{generate_replicate, generate_site_data, SimSetting, SiteData};
pub use study::{run_replicates, run_study, summarize, sweep_grid_density, sweep_reference_size, MetricRow, StudyConfig};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Core(#[from] dtgmm::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
