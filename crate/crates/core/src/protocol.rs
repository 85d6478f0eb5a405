//! One-shot federation: what a site exports, how it travels, and how the
//! lead site turns the collected payloads into an estimate.

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;

use crate::data::{StudySample, Table};
use crate::density::{self, DensityOptions, DensitySummary, GridConfig, RatioPolicy, RatioStats};
use crate::error::{Error, Result};
use crate::glm::{fit_reduced_model, FitConfig, ModelSpec, ReducedModelSpec, SiteFit};
use crate::gmm::{self, GmmConfig, GmmResult};
use crate::marginal::GridScheme;
use crate::moment::{MomentBlock, MomentSystem};

pub const SCHEMA_VERSION: u32 = 1;

/// Everything a site sends to the lead site. Sizes depend only on the
/// reduced model, the grids and the number of strata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SitePayload {
    pub schema_version: u32,
    pub site_id: String,
    pub reduced_spec: ReducedModelSpec,
    pub fit: SiteFit,
    pub density: DensitySummary,
    pub grid_scheme: GridScheme,
}

impl SitePayload {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: SCHEMA_VERSION,
                found: self.schema_version as u64,
            });
        }
        self.reduced_spec.validate()?;
        let d = self.reduced_spec.dim();
        if self.fit.theta_hat.len() != d || self.fit.sigma_hat.nrows() != d || self.fit.sigma_hat.ncols() != d {
            return Err(Error::Dimension(format!("site `{}`: fit does not match its reduced model", self.site_id)));
        }
        if self.fit.n_study == 0 {
            return Err(Error::Malformed(format!("site `{}`: empty study sample", self.site_id)));
        }
        self.density.validate()
    }
}

/// Fits the reduced model on the study sample and summarizes the reference
/// sample's covariate density.
pub fn site_export(
    site_id: &str,
    study: &StudySample,
    reference: &Table,
    reduced: &ReducedModelSpec,
    grid: &GridConfig,
    fit_config: &FitConfig,
) -> Result<SitePayload> {
    let study = StudySample::new(study.covariates.select(&reduced.covariates)?, study.y.clone())?;
    let fit = fit_reduced_model(&study, reduced, fit_config)?;
    let density = density::summarize_density(reference, grid)?;
    Ok(SitePayload {
        schema_version: SCHEMA_VERSION,
        site_id: site_id.to_string(),
        reduced_spec: reduced.clone(),
        fit,
        density,
        grid_scheme: grid.scheme,
    })
}

fn find_null(v: &Value, path: &mut String) -> bool {
    match v {
        Value::Null => true,
        Value::Array(a) => a.iter().enumerate().any(|(i, x)| {
            let len = path.len();
            path.push_str(&format!("[{i}]"));
            let hit = find_null(x, path);
            if !hit {
                path.truncate(len);
            }
            hit
        }),
        Value::Object(m) => m.iter().any(|(k, x)| {
            let len = path.len();
            path.push('.');
            path.push_str(k);
            let hit = find_null(x, path);
            if !hit {
                path.truncate(len);
            }
            hit
        }),
        _ => false,
    }
}

/// Canonical JSON: sorted keys, compact, shortest round-trip floats.
/// Non-finite numbers (which serde_json would turn into `null`) are rejected.
pub fn encode_canonical<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let v = serde_json::to_value(value).map_err(|e| Error::Malformed(e.to_string()))?;
    let mut path = String::from("$");
    if find_null(&v, &mut path) {
        return Err(Error::NonFinite(path));
    }
    serde_json::to_vec(&v).map_err(|e| Error::Malformed(e.to_string()))
}

fn decode_versioned<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| Error::Malformed(e.to_string()))?;
    let found = v
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Malformed("missing schema_version".into()))?;
    if found != SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersion {
            expected: SCHEMA_VERSION,
            found,
        });
    }
    serde_json::from_value(v).map_err(|e| Error::Malformed(e.to_string()))
}

pub fn encode_payload(payload: &SitePayload) -> Result<Vec<u8>> {
    encode_canonical(payload)
}

pub fn decode_payload(bytes: &[u8]) -> Result<SitePayload> {
    let p: SitePayload = decode_versioned(bytes)?;
    p.validate()?;
    Ok(p)
}

/// Number of numeric values a payload carries.
pub fn payload_value_count(payload: &SitePayload) -> usize {
    fn count(v: &Value) -> usize {
        match v {
            Value::Number(_) => 1,
            Value::Array(a) => a.iter().map(count).sum(),
            Value::Object(m) => m.values().map(count).sum(),
            _ => 0,
        }
    }
    serde_json::to_value(payload).map_or(0, |v| count(&v))
}

/// Envelope of a result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub schema_version: u32,
    pub method: String,
    pub sites: Vec<String>,
    pub result: GmmResult,
}

pub fn encode_result(method: &str, sites: &[String], result: &GmmResult) -> Result<Vec<u8>> {
    encode_canonical(&ResultFile {
        schema_version: SCHEMA_VERSION,
        method: method.to_string(),
        sites: sites.to_vec(),
        result: result.clone(),
    })
}

pub fn decode_result(bytes: &[u8]) -> Result<ResultFile> {
    decode_versioned(bytes)
}

/// Produces the density ratios `f_j / f_1` at the lead reference rows for
/// each external site (`None` leaves a block untilted).
pub trait TiltProvider: Sync {
    fn name(&self) -> &str;
    fn ratios(&self, lead_ref: &Table, externals: &[SitePayload]) -> Result<(Vec<Option<Vec<f64>>>, RatioStats)>;
}

/// Ratios of copula-reconstructed densities.
#[derive(Debug, Clone, Default)]
pub struct CopulaTilt {
    /// How the lead site summarizes its own reference sample.
    pub grid: GridConfig,
    pub options: DensityOptions,
    pub policy: RatioPolicy,
}

impl TiltProvider for CopulaTilt {
    fn name(&self) -> &str {
        "dist-GMM-C"
    }

    fn ratios(&self, lead_ref: &Table, externals: &[SitePayload]) -> Result<(Vec<Option<Vec<f64>>>, RatioStats)> {
        let (_, lead) = density::local_density(lead_ref, &self.grid, &self.options)?;
        let mut stats = RatioStats::default();
        let ratios = externals
            .iter()
            .map(|p| {
                let f = density::reconstruct_density(&p.density, lead_ref.names(), &self.options)?;
                let (r, s) = density::tilt_ratios(lead_ref, &f, &lead, &self.policy);
                stats.merge(&s);
                Ok(Some(r))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((ratios, stats))
    }
}

/// No tilting: every site's moments are averaged under the lead distribution.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoTilt;

impl TiltProvider for NoTilt {
    fn name(&self) -> &str {
        "GENMETA"
    }

    fn ratios(&self, _lead_ref: &Table, externals: &[SitePayload]) -> Result<(Vec<Option<Vec<f64>>>, RatioStats)> {
        Ok((vec![None; externals.len()], RatioStats::default()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub draws: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct AggregateConfig {
    pub lead_site_id: String,
    pub fit: FitConfig,
    pub gmm: GmmConfig,
    pub bootstrap: Option<BootstrapConfig>,
}

impl Default for AggregateConfig {
    fn default() -> Self {
        Self {
            lead_site_id: "site1".into(),
            fit: FitConfig::default(),
            gmm: GmmConfig::default(),
            bootstrap: None,
        }
    }
}

/// The lead site's private inputs.
#[derive(Debug, Clone, Copy)]
pub struct LeadInput<'a> {
    pub study: &'a StudySample,
    pub reference: &'a Table,
    pub reduced: &'a ReducedModelSpec,
}

/// Checks payload consistency and identifiability; returns the external
/// payloads sorted by site id.
pub fn check_payloads(lead_id: &str, lead_reduced: &ReducedModelSpec, payloads: &[SitePayload], main: &ModelSpec) -> Result<Vec<SitePayload>> {
    main.validate()?;
    let mut sorted = payloads.to_vec();
    sorted.sort_by(|a, b| a.site_id.cmp(&b.site_id));
    for (i, p) in sorted.iter().enumerate() {
        p.validate()?;
        if p.site_id == lead_id || (i > 0 && sorted[i - 1].site_id == p.site_id) {
            return Err(Error::Malformed(format!("duplicate site id `{}`", p.site_id)));
        }
    }
    let mut unresolved: Vec<String> = Vec::new();
    let specs = std::iter::once(lead_reduced).chain(sorted.iter().map(|p| &p.reduced_spec));
    for spec in specs.clone() {
        if let Err(Error::UnresolvedNames(v)) = spec.resolve(main) {
            unresolved.extend(v);
        }
    }
    for p in &sorted {
        for n in p.density.discrete.iter().chain(&p.density.continuous) {
            if !main.covariate_names.contains(n) {
                unresolved.push(n.clone());
            }
        }
    }
    if !unresolved.is_empty() {
        unresolved.sort();
        unresolved.dedup();
        return Err(Error::UnresolvedNames(unresolved));
    }
    let uncovered: Vec<&str> = main
        .covariate_names
        .iter()
        .filter(|c| !specs.clone().any(|s| s.covariates.contains(c)))
        .map(String::as_str)
        .collect();
    if !uncovered.is_empty() {
        return Err(Error::Unidentified(format!("no site observes {}", uncovered.join(", "))));
    }
    let q: usize = specs.map(ReducedModelSpec::dim).sum();
    if q < main.dim() {
        return Err(Error::Unidentified(format!("{q} moment conditions for {} coefficients", main.dim())));
    }
    Ok(sorted)
}

fn lead_fit(lead: &LeadInput, config: &AggregateConfig) -> Result<SiteFit> {
    let study = StudySample::new(lead.study.covariates.select(&lead.reduced.covariates)?, lead.study.y.clone())?;
    fit_reduced_model(&study, lead.reduced, &config.fit)
}

fn build_system(
    main: &ModelSpec,
    lead_ref: &Table,
    lead_id: &str,
    lead_reduced: &ReducedModelSpec,
    lead_theta: &[f64],
    externals: &[SitePayload],
    tilt: &dyn TiltProvider,
) -> Result<MomentSystem> {
    let (ratios, stats) = tilt.ratios(lead_ref, externals)?;
    if ratios.len() != externals.len() {
        return Err(Error::Dimension("tilt provider returned the wrong number of ratio vectors".into()));
    }
    let mut blocks = vec![MomentBlock {
        site_id: lead_id.to_string(),
        reduced: lead_reduced.clone(),
        theta: lead_theta.to_vec(),
        ratios: None,
    }];
    blocks.extend(externals.iter().zip(ratios).map(|(p, r)| MomentBlock {
        site_id: p.site_id.clone(),
        reduced: p.reduced_spec.clone(),
        theta: p.fit.theta_hat.clone(),
        ratios: r,
    }));
    Ok(MomentSystem::new(main.clone(), lead_ref, blocks)?.with_ratio_stats(stats))
}

/// Lead-site pipeline: local fit, tilting, moment assembly and GMM.
pub fn lead_aggregate(
    lead: &LeadInput,
    payloads: &[SitePayload],
    main: &ModelSpec,
    config: &AggregateConfig,
    tilt: &dyn TiltProvider,
) -> Result<GmmResult> {
    let externals = check_payloads(&config.lead_site_id, lead.reduced, payloads, main)?;
    let lead_ref = lead.reference.select(&main.covariate_names)?;
    let fit = lead_fit(lead, config)?;
    let mut fits = vec![fit.clone()];
    fits.extend(externals.iter().map(|p| p.fit.clone()));
    let system = build_system(main, &lead_ref, &config.lead_site_id, lead.reduced, &fit.theta_hat, &externals, tilt)?;
    let mut result = gmm::solve(&system, &fits, &config.gmm)?;
    if let Some(b) = config.bootstrap {
        let summary = gmm::bootstrap(lead_ref.nrows(), b.draws, b.seed, |idx| {
            let resampled = lead_ref.take_rows(idx);
            let sys = build_system(main, &resampled, &config.lead_site_id, lead.reduced, &fit.theta_hat, &externals, tilt)?;
            Ok(gmm::solve(&sys, &fits, &config.gmm)?.beta_hat)
        })?;
        result.bootstrap = Some(summary);
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub from: String,
    pub to: String,
    pub bytes: usize,
}

/// Record of every message crossing a site boundary.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FederationTrace {
    pub messages: Vec<Message>,
}

impl FederationTrace {
    pub fn record(&mut self, from: &str, to: &str, bytes: usize) {
        self.messages.push(Message {
            from: from.to_string(),
            to: to.to_string(),
            bytes,
        });
    }

    /// Exactly one message from each external site to the lead, none back.
    pub fn is_one_shot(&self, lead: &str, externals: &[String]) -> bool {
        self.messages.len() == externals.len()
            && externals
                .iter()
                .all(|e| self.messages.iter().filter(|m| &m.from == e && m.to == lead).count() == 1)
            && self.messages.iter().all(|m| m.from != lead)
    }
}

/// An external site's private inputs.
#[derive(Debug, Clone)]
pub struct SiteInput<'a> {
    pub site_id: String,
    pub study: &'a StudySample,
    pub reference: &'a Table,
    pub reduced: ReducedModelSpec,
}

/// Runs the whole protocol in one process, passing encoded payloads.
pub fn run_federation(
    lead: &LeadInput,
    sites: &[SiteInput],
    main: &ModelSpec,
    grid: &GridConfig,
    config: &AggregateConfig,
    tilt: &dyn TiltProvider,
) -> Result<(GmmResult, FederationTrace)> {
    let mut trace = FederationTrace::default();
    let payloads = sites
        .iter()
        .map(|s| {
            let bytes = encode_payload(&site_export(&s.site_id, s.study, s.reference, &s.reduced, grid, &config.fit)?)?;
            trace.record(&s.site_id, &config.lead_site_id, bytes.len());
            decode_payload(&bytes)
        })
        .collect::<Result<Vec<_>>>()?;
    let result = lead_aggregate(lead, &payloads, main, config, tilt)?;
    Ok((result, trace))
}
