//! The four estimators compared in the simulation study.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use dtgmm::density::{DensityOptions, RatioPolicy, RatioStats};
use dtgmm::gmm::{normal_quantile, GmmDiagnostics};
use dtgmm::protocol::{run_federation, AggregateConfig, CopulaTilt, LeadInput, NoTilt, SiteInput, TiltProvider};
use dtgmm::{child_seed, reconstruct_density, fit_reduced_model, FitConfig, GmmConfig, GridConfig, Result, SitePayload, StudySample, Table};

use crate::setting::{main_spec, reduced_spec, SiteData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodTag {
    #[serde(rename = "GENMETA")]
    Genmeta,
    #[serde(rename = "dist-GMM-C")]
    DistGmmC,
    #[serde(rename = "dist-GMM-S")]
    DistGmmS,
    #[serde(rename = "Local")]
    Local,
}

impl MethodTag {
    pub const ALL: [MethodTag; 4] = [MethodTag::Genmeta, MethodTag::DistGmmC, MethodTag::DistGmmS, MethodTag::Local];

    pub fn name(self) -> &'static str {
        match self {
            MethodTag::Genmeta => "GENMETA",
            MethodTag::DistGmmC => "dist-GMM-C",
            MethodTag::DistGmmS => "dist-GMM-S",
            MethodTag::Local => "Local",
        }
    }
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        MethodTag::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown method `{s}` (expected one of GENMETA, dist-GMM-C, dist-GMM-S, Local)"))
    }
}

/// Knobs shared by all methods.
#[derive(Debug, Clone)]
pub struct MethodConfig {
    pub grid: GridConfig,
    pub fit: FitConfig,
    pub gmm: GmmConfig,
    pub options: DensityOptions,
    pub policy: RatioPolicy,
    /// Bins per continuous covariate for the synthetic-sample histogram.
    pub histogram_bins: usize,
    /// Synthetic sample size per site; `None` uses the site's reference size.
    pub synthetic_size: Option<usize>,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default().with_discrete(&["X1"]),
            fit: FitConfig::default(),
            gmm: GmmConfig::default(),
            options: DensityOptions::default(),
            policy: RatioPolicy::default(),
            histogram_bins: 20,
            synthetic_size: None,
        }
    }
}

/// Estimates for the coefficients of `X1..X3`; `None` where the method
/// cannot estimate a coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutput {
    pub estimates: Vec<Option<f64>>,
    pub std_errors: Vec<Option<f64>>,
    pub intervals: Vec<Option<(f64, f64)>>,
    pub diagnostics: Option<GmmDiagnostics>,
}

/// Density ratios from synthetic samples: each external site's reconstructed
/// density is sampled at the lead site, and ratios are histogram frequency
/// ratios on a per-stratum equal-width partition shared by both samples.
#[derive(Debug, Clone)]
pub struct HistogramTilt {
    pub bins: usize,
    pub synthetic_size: Option<usize>,
    pub seed: u64,
    pub options: DensityOptions,
    pub policy: RatioPolicy,
}

impl TiltProvider for HistogramTilt {
    fn name(&self) -> &str {
        "dist-GMM-S"
    }

    fn ratios(&self, lead_ref: &Table, externals: &[SitePayload]) -> Result<(Vec<Option<Vec<f64>>>, RatioStats)> {
        let mut stats = RatioStats::default();
        let mut out = Vec::with_capacity(externals.len());
        for (k, p) in externals.iter().enumerate() {
            let model = reconstruct_density(&p.density, lead_ref.names(), &self.options)?;
            let n = self.synthetic_size.unwrap_or(p.density.n_ref);
            let synthetic = model.sample_synthetic(n, child_seed(self.seed, &[k as u64]));
            let discrete = lead_ref.resolve(&p.density.discrete)?;
            let continuous = lead_ref.resolve(&p.density.continuous)?;
            out.push(Some(histogram_ratios(lead_ref, &synthetic, &discrete, &continuous, self.bins, &self.policy, &mut stats)));
        }
        Ok((out, stats))
    }
}

/// `(count_syn / n_syn) / (count_lead / n_lead)` in the cell holding each
/// lead row; cells are per stratum of the `discrete` columns.
pub fn histogram_ratios(
    lead: &Table,
    synthetic: &Table,
    discrete: &[usize],
    continuous: &[usize],
    bins: usize,
    policy: &RatioPolicy,
    stats: &mut RatioStats,
) -> Vec<f64> {
    let key = |r: &[f64]| -> Vec<u64> { discrete.iter().map(|&k| r[k].to_bits()).collect() };
    let mut ranges: BTreeMap<Vec<u64>, Vec<(f64, f64)>> = BTreeMap::new();
    for r in lead.rows().chain(synthetic.rows()) {
        let e = ranges
            .entry(key(r))
            .or_insert_with(|| vec![(f64::INFINITY, f64::NEG_INFINITY); continuous.len()]);
        for (b, &k) in e.iter_mut().zip(continuous) {
            b.0 = b.0.min(r[k]);
            b.1 = b.1.max(r[k]);
        }
    }
    let cell = |r: &[f64]| -> (Vec<u64>, Vec<usize>) {
        let k = key(r);
        let bounds = &ranges[&k];
        let idx = continuous
            .iter()
            .zip(bounds)
            .map(|(&c, &(lo, hi))| {
                if hi > lo {
                    (((r[c] - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
                } else {
                    0
                }
            })
            .collect();
        (k, idx)
    };
    let count = |t: &Table| {
        let mut m: BTreeMap<(Vec<u64>, Vec<usize>), usize> = BTreeMap::new();
        for r in t.rows() {
            *m.entry(cell(r)).or_default() += 1;
        }
        m
    };
    let lead_counts = count(lead);
    let syn_counts = count(synthetic);
    let (n1, nj) = (lead.nrows() as f64, synthetic.nrows().max(1) as f64);
    lead.rows()
        .map(|r| {
            let c = cell(r);
            let num = syn_counts.get(&c).copied().unwrap_or(0) as f64 / nj;
            let den = lead_counts[&c] as f64 / n1;
            stats.evaluations += 1;
            let ratio = num / den;
            if ratio > policy.ratio_cap {
                stats.capped += 1;
                policy.ratio_cap
            } else {
                ratio
            }
        })
        .collect()
}

fn aggregate_config(cfg: &MethodConfig) -> AggregateConfig {
    AggregateConfig {
        lead_site_id: "site1".into(),
        fit: cfg.fit.clone(),
        gmm: cfg.gmm.clone(),
        bootstrap: None,
    }
}

/// Runs `method` on the three sites of one replicate; `sites[0]` is the lead.
pub fn run_method(method: MethodTag, sites: &[SiteData], cfg: &MethodConfig, seed: u64) -> Result<MethodOutput> {
    let main = main_spec();
    let coefs = &main.covariate_names;
    let lead_reduced = reduced_spec(0);
    if method == MethodTag::Local {
        return local_fit(&sites[0].study, cfg, coefs);
    }
    let lead = LeadInput {
        study: &sites[0].study,
        reference: &sites[0].reference,
        reduced: &lead_reduced,
    };
    let externals: Vec<SiteInput> = sites[1..]
        .iter()
        .enumerate()
        .map(|(k, s)| SiteInput {
            site_id: s.site_id.clone(),
            study: &s.study,
            reference: &s.reference,
            reduced: reduced_spec(k + 1),
        })
        .collect();
    let copula = CopulaTilt {
        grid: cfg.grid.clone(),
        options: cfg.options.clone(),
        policy: cfg.policy,
    };
    let histogram = HistogramTilt {
        bins: cfg.histogram_bins,
        synthetic_size: cfg.synthetic_size,
        seed,
        options: cfg.options.clone(),
        policy: cfg.policy,
    };
    let tilt: &dyn TiltProvider = match method {
        MethodTag::Genmeta => &NoTilt,
        MethodTag::DistGmmC => &copula,
        _ => &histogram,
    };
    let (res, _) = run_federation(&lead, &externals, &main, &cfg.grid, &aggregate_config(cfg), tilt)?;
    let names = res.coefficient_names.clone();
    let pick = |c: &String| names.iter().position(|n| n == c);
    Ok(MethodOutput {
        estimates: coefs.iter().map(|c| pick(c).map(|k| res.beta_hat[k])).collect(),
        std_errors: coefs.iter().map(|c| pick(c).map(|k| res.std_errors[k])).collect(),
        intervals: coefs.iter().map(|c| pick(c).map(|k| res.intervals[k])).collect(),
        diagnostics: Some(res.diagnostics),
    })
}

fn local_fit(study: &StudySample, cfg: &MethodConfig, coefs: &[String]) -> Result<MethodOutput> {
    let spec = reduced_spec(0);
    let sample = StudySample::new(study.covariates.select(&spec.covariates)?, study.y.clone())?;
    let fit = fit_reduced_model(&sample, &spec, &cfg.fit)?;
    let names = spec.coefficient_names();
    let z = normal_quantile(0.5 + cfg.gmm.level / 2.0);
    let mut out = MethodOutput {
        estimates: Vec::new(),
        std_errors: Vec::new(),
        intervals: Vec::new(),
        diagnostics: None,
    };
    for c in coefs {
        let k = names.iter().position(|n| n == c);
        let est = k.map(|k| fit.theta_hat[k]);
        let se = k.map(|k| (fit.sigma_hat[(k, k)] / fit.n_study as f64).sqrt());
        out.estimates.push(est);
        out.std_errors.push(se);
        out.intervals.push(est.zip(se).map(|(e, s)| (e - z * s, e + z * s)));
    }
    Ok(out)
}
