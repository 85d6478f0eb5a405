//! Distributed GMM estimation of a regression model from sites that each
//! observe only a subset of the covariates.
//!
//! Each site fits a reduced model on its own covariates and summarizes its
//! covariate distribution (marginal CDFs on a grid plus a Clayton copula).
//! The lead site reweights every site's bridging moments by the estimated
//! density ratio and solves one stacked GMM problem.

pub mod copula;
pub mod data;
pub mod density;
pub mod error;
pub mod glm;
pub mod gmm;
pub mod linalg;
pub mod marginal;
pub mod moment;
pub mod protocol;
pub mod quadrature;
pub mod seed;

pub use copula::{clayton_cdf, clayton_density, fit_clayton, sample_clayton, ClaytonFit, ClaytonFitConfig, CopulaFamily};
pub use data::{StudySample, Table};
pub use density::{
    density_ratio, reconstruct_density, summarize_density, DensityModel, DensityOptions, DensitySummary, GridConfig, RatioPolicy,
    RatioStats,
};
pub use error::{Error, Result};
pub use glm::{fit_reduced_model, FitConfig, Family, ModelSpec, ReducedModelSpec, SiteFit};
pub use gmm::{confidence_intervals, solve, GmmConfig, GmmResult, WeightScheme};
pub use marginal::{Grid, GridScheme, MarginalSummary};
pub use moment::{bridge_s, MomentBlock, MomentConditions, MomentSystem};
pub use protocol::{
    decode_payload, decode_result, encode_payload, encode_result, lead_aggregate, run_federation, site_export, AggregateConfig,
    CopulaTilt, FederationTrace, LeadInput, NoTilt, SiteInput, SitePayload, TiltProvider,
};
pub use seed::child_seed;
