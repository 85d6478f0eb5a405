//! Copula-summarized covariate densities.
//!
//! A site condenses its reference sample into, per level-combination of the
//! discrete covariates, the stratum probability, grid-valued marginal CDFs of
//! the continuous covariates and a Clayton dependence parameter. The lead
//! site rebuilds an evaluable density from that summary alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::copula::{self, ClaytonFitConfig, CopulaFamily};
use crate::data::Table;
use crate::error::{Error, Result};
use crate::marginal::{self, Grid, GridScheme, InterpolatedCdf, MarginalSummary, DENSITY_FLOOR};

/// How a site summarizes its reference sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    /// Grid points per continuous covariate.
    pub m: usize,
    pub scheme: GridScheme,
    /// Covariates treated as discrete (stratifying) variables.
    pub discrete: Vec<String>,
    pub min_stratum_n: usize,
    pub clayton: ClaytonFitConfig,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            m: 100,
            scheme: GridScheme::Quantile,
            discrete: Vec::new(),
            min_stratum_n: 20,
            clayton: ClaytonFitConfig::default(),
        }
    }
}

impl GridConfig {
    pub fn with_discrete(mut self, names: &[&str]) -> Self {
        self.discrete = names.iter().map(|s| s.to_string()).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    /// Values of the discrete covariates identifying this stratum.
    pub levels: Vec<f64>,
    pub probability: f64,
    pub n_obs: usize,
    pub marginals: MarginalSummary,
    pub alpha_hat: f64,
    pub alpha_at_floor: bool,
}

/// Wire form of a site's covariate density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub copula: CopulaFamily,
    pub discrete: Vec<String>,
    pub continuous: Vec<String>,
    pub strata: Vec<StratumSummary>,
    pub n_ref: usize,
}

fn stratum_label(names: &[String], levels: &[f64]) -> String {
    if names.is_empty() {
        return "(all)".to_string();
    }
    names
        .iter()
        .zip(levels)
        .map(|(n, v)| format!("{n}={v}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Builds the density summary of a reference sample.
pub fn summarize_density(reference: &Table, config: &GridConfig) -> Result<DensitySummary> {
    if reference.is_empty() {
        return Err(Error::EmptySample);
    }
    let discrete_idx = reference.resolve(&config.discrete)?;
    let continuous: Vec<String> = reference
        .names()
        .iter()
        .filter(|n| !config.discrete.contains(n))
        .cloned()
        .collect();
    let continuous_idx = reference.resolve(&continuous)?;

    let mut keys: Vec<Vec<f64>> = reference
        .rows()
        .map(|r| discrete_idx.iter().map(|&k| r[k]).collect())
        .collect();
    keys.sort_by(|a: &Vec<f64>, b| cmp_levels(a, b));
    keys.dedup();

    let n = reference.nrows();
    let strata = keys
        .into_iter()
        .map(|levels| {
            let rows: Vec<&[f64]> = reference
                .rows()
                .filter(|r| discrete_idx.iter().zip(&levels).all(|(&k, &v)| r[k] == v))
                .collect();
            if rows.len() < config.min_stratum_n {
                return Err(Error::SmallStratum {
                    stratum: stratum_label(&config.discrete, &levels),
                    count: rows.len(),
                    min: config.min_stratum_n,
                });
            }
            let columns: Vec<Vec<f64>> = continuous_idx
                .iter()
                .map(|&k| rows.iter().map(|r| r[k]).collect())
                .collect();
            let grid = Grid::from_sample(&columns, &continuous, config.m, config.scheme)?;
            let marginals = marginal::empirical_marginals(&columns, &continuous, grid)?;
            let (alpha_hat, alpha_at_floor) = if columns.len() >= 2 {
                let fit = copula::fit_clayton(&copula::pseudo_observations(&columns), &config.clayton)?;
                (fit.alpha, fit.at_floor)
            } else {
                (config.clayton.floor, true)
            };
            Ok(StratumSummary {
                probability: rows.len() as f64 / n as f64,
                n_obs: rows.len(),
                levels,
                marginals,
                alpha_hat,
                alpha_at_floor,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(DensitySummary {
        copula: CopulaFamily::Clayton,
        discrete: config.discrete.clone(),
        continuous,
        strata,
        n_ref: n,
    })
}

fn cmp_levels(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

impl DensitySummary {
    pub fn validate(&self) -> Result<()> {
        if self.strata.is_empty() {
            return Err(Error::Malformed("density summary has no strata".into()));
        }
        let total: f64 = self.strata.iter().map(|s| s.probability).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Malformed(format!("stratum probabilities sum to {total}")));
        }
        for s in &self.strata {
            if s.levels.len() != self.discrete.len() {
                return Err(Error::Dimension("stratum levels do not match discrete covariates".into()));
            }
            if s.marginals.dim() != self.continuous.len() {
                return Err(Error::Dimension("stratum marginals do not match continuous covariates".into()));
            }
            if !(s.probability >= 0.0) || !(s.alpha_hat > 0.0) {
                return Err(Error::Malformed("stratum probability or alpha out of range".into()));
            }
            if !self.continuous.is_empty() {
                s.marginals.validate()?;
            }
        }
        Ok(())
    }

    /// Number of transmitted marginal CDF values.
    pub fn cdf_value_count(&self) -> usize {
        self.strata
            .iter()
            .map(|s| s.marginals.cdf_values.iter().map(Vec::len).sum::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityOptions {
    pub density_floor: f64,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self {
            density_floor: DENSITY_FLOOR,
        }
    }
}

#[derive(Debug, Clone)]
struct StratumModel {
    levels: Vec<f64>,
    probability: f64,
    marginals: Vec<InterpolatedCdf>,
    alpha: f64,
    u_lo: f64,
    u_hi: f64,
}

/// Evaluable covariate density over the full covariate vector.
#[derive(Debug, Clone)]
pub struct DensityModel {
    names: Vec<String>,
    discrete_idx: Vec<usize>,
    continuous_idx: Vec<usize>,
    strata: Vec<StratumModel>,
    density_floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityEval {
    pub value: f64,
    pub stratum_found: bool,
}

/// Rebuilds `f_j` from its summary; `covariate_names` fixes the order of
/// the vectors passed to [`DensityModel::density`].
pub fn reconstruct_density(summary: &DensitySummary, covariate_names: &[String], options: &DensityOptions) -> Result<DensityModel> {
    summary.validate()?;
    let position = |n: &String| covariate_names.iter().position(|c| c == n);
    let mut missing = Vec::new();
    let mut resolve = |names: &[String]| -> Vec<usize> {
        names
            .iter()
            .filter_map(|n| {
                let p = position(n);
                if p.is_none() {
                    missing.push(n.clone());
                }
                p
            })
            .collect()
    };
    let discrete_idx = resolve(&summary.discrete);
    let continuous_idx = resolve(&summary.continuous);
    if !missing.is_empty() {
        return Err(Error::UnresolvedNames(missing));
    }
    let strata = summary
        .strata
        .iter()
        .map(|s| {
            let margin = 0.5 / (s.n_obs as f64 + 1.0);
            StratumModel {
                levels: s.levels.clone(),
                probability: s.probability,
                marginals: (0..s.marginals.dim())
                    .map(|k| marginal::interpolate_cdf(&s.marginals, k, options.density_floor))
                    .collect(),
                alpha: s.alpha_hat,
                u_lo: margin,
                u_hi: 1.0 - margin,
            }
        })
        .collect();
    Ok(DensityModel {
        names: covariate_names.to_vec(),
        discrete_idx,
        continuous_idx,
        strata,
        density_floor: options.density_floor,
    })
}

impl DensityModel {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn density_floor(&self) -> f64 {
        self.density_floor
    }

    fn stratum(&self, x: &[f64]) -> Option<&StratumModel> {
        self.strata
            .iter()
            .find(|s| self.discrete_idx.iter().zip(&s.levels).all(|(&k, &v)| x[k] == v))
    }

    /// Density at `x`; a stratum absent from the summary yields the floor.
    pub fn evaluate(&self, x: &[f64]) -> DensityEval {
        let Some(s) = self.stratum(x) else {
            return DensityEval {
                value: self.density_floor,
                stratum_found: false,
            };
        };
        let mut log_f = s.probability.ln();
        let mut u = Vec::with_capacity(self.continuous_idx.len());
        for (cdf, &k) in s.marginals.iter().zip(&self.continuous_idx) {
            let pdf = cdf.pdf(x[k]);
            if pdf == 0.0 {
                return DensityEval {
                    value: 0.0,
                    stratum_found: true,
                };
            }
            log_f += pdf.ln();
            u.push(cdf.cdf(x[k]).clamp(s.u_lo, s.u_hi));
        }
        if u.len() >= 2 {
            log_f += copula::clayton_log_density(&u, s.alpha);
        }
        DensityEval {
            value: log_f.exp(),
            stratum_found: true,
        }
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.evaluate(x).value
    }

    /// Draws `n` synthetic covariate vectors: stratum from its probability,
    /// continuous part from the fitted Clayton copula pushed through the
    /// inverse interpolated marginals.
    pub fn sample_synthetic(&self, n: usize, seed: u64) -> Table {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = self.names.len();
        let mut data = Vec::with_capacity(n * p);
        let cum: Vec<f64> = self
            .strata
            .iter()
            .scan(0.0, |acc, s| {
                *acc += s.probability;
                Some(*acc)
            })
            .collect();
        for _ in 0..n {
            let r: f64 = rng.random();
            let si = cum.iter().position(|&c| r < c).unwrap_or(self.strata.len() - 1);
            let s = &self.strata[si];
            let mut row = vec![0.0; p];
            for (&k, &v) in self.discrete_idx.iter().zip(&s.levels) {
                row[k] = v;
            }
            let d = self.continuous_idx.len();
            let u: Vec<f64> = if d >= 2 {
                copula::sample_clayton(d, s.alpha, 1, &mut rng).pop().unwrap_or_default()
            } else {
                (0..d).map(|_| rng.random()).collect()
            };
            for ((&k, cdf), &uk) in self.continuous_idx.iter().zip(&s.marginals).zip(&u) {
                row[k] = cdf.quantile(uk);
            }
            data.extend(row);
        }
        Table::from_row_major(self.names.clone(), data).expect("synthetic table shape")
    }
}

/// Builds a summary and reconstructs it in one step (the lead site's own density).
pub fn local_density(reference: &Table, config: &GridConfig, options: &DensityOptions) -> Result<(DensitySummary, DensityModel)> {
    let summary = summarize_density(reference, config)?;
    let model = reconstruct_density(&summary, reference.names(), options)?;
    Ok((summary, model))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioPolicy {
    pub density_floor: f64,
    pub ratio_cap: f64,
}

impl Default for RatioPolicy {
    fn default() -> Self {
        Self {
            density_floor: DENSITY_FLOOR,
            ratio_cap: 1e4,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatioStats {
    pub evaluations: usize,
    pub capped: usize,
    pub floored_denominator: usize,
    pub missing_stratum: usize,
}

impl RatioStats {
    pub fn merge(&mut self, other: &RatioStats) {
        self.evaluations += other.evaluations;
        self.capped += other.capped;
        self.floored_denominator += other.floored_denominator;
        self.missing_stratum += other.missing_stratum;
    }
}

/// `f_num(x) / f_den(x)` with both densities floored and the ratio capped.
pub fn density_ratio(x: &[f64], f_num: &DensityModel, f_den: &DensityModel, policy: &RatioPolicy, stats: &mut RatioStats) -> f64 {
    let num = f_num.evaluate(x);
    let den = f_den.evaluate(x);
    stats.evaluations += 1;
    if !num.stratum_found || !den.stratum_found {
        stats.missing_stratum += 1;
    }
    if den.value < policy.density_floor {
        stats.floored_denominator += 1;
    }
    let r = num.value.max(policy.density_floor) / den.value.max(policy.density_floor);
    if r > policy.ratio_cap {
        stats.capped += 1;
        policy.ratio_cap
    } else {
        r
    }
}

/// Tilting weights `f_site / f_lead` at every row of the lead reference sample.
pub fn tilt_ratios(lead_ref: &Table, f_site: &DensityModel, f_lead: &DensityModel, policy: &RatioPolicy) -> (Vec<f64>, RatioStats) {
    let mut stats = RatioStats::default();
    let ratios = lead_ref
        .rows()
        .map(|x| density_ratio(x, f_site, f_lead, policy, &mut stats))
        .collect();
    (ratios, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn uniform_table(n: usize, seed: u64) -> Table {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![(i % 2) as f64, rng.random(), rng.random()])
            .collect();
        Table::new(names(&["b", "u", "v"]), &rows).unwrap()
    }

    #[test]
    fn uniform_independent_density_is_stratum_probability() {
        // Exact uniform marginals on [0,1] and alpha at the floor.
        let grid = Grid {
            scheme: GridScheme::EqualSpaced,
            points: vec![vec![0.25, 0.5, 0.75], vec![0.25, 0.5, 0.75]],
        };
        let stratum = |level: f64, prob: f64| StratumSummary {
            levels: vec![level],
            probability: prob,
            n_obs: 1000,
            marginals: MarginalSummary {
                grid: grid.clone(),
                cdf_values: vec![vec![0.25, 0.5, 0.75]; 2],
                support_bounds: vec![(0.0, 1.0); 2],
            },
            alpha_hat: 1e-6,
            alpha_at_floor: true,
        };
        let summary = DensitySummary {
            copula: CopulaFamily::Clayton,
            discrete: names(&["b"]),
            continuous: names(&["u", "v"]),
            strata: vec![stratum(0.0, 0.3), stratum(1.0, 0.7)],
            n_ref: 2000,
        };
        let model = reconstruct_density(&summary, &names(&["b", "u", "v"]), &DensityOptions::default()).unwrap();
        for &(u, v) in &[(0.1, 0.2), (0.5, 0.9), (0.77, 0.33)] {
            assert!((model.density(&[0.0, u, v]) - 0.3).abs() < 1e-4);
            assert!((model.density(&[1.0, u, v]) - 0.7).abs() < 1e-4);
        }
        let e = model.evaluate(&[2.0, 0.5, 0.5]);
        assert!(!e.stratum_found);
        assert_eq!(e.value, DENSITY_FLOOR);
    }

    #[test]
    fn small_stratum_is_rejected() {
        let t = uniform_table(30, 1);
        let cfg = GridConfig {
            m: 5,
            ..GridConfig::default()
        }
        .with_discrete(&["b"]);
        match summarize_density(&t, &cfg) {
            Err(Error::SmallStratum { stratum, count, .. }) => {
                assert_eq!(stratum, "b=0");
                assert_eq!(count, 15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ratio_of_model_with_itself_is_one() {
        let t = uniform_table(400, 2);
        let cfg = GridConfig {
            m: 20,
            ..GridConfig::default()
        }
        .with_discrete(&["b"]);
        let (_, model) = local_density(&t, &cfg, &DensityOptions::default()).unwrap();
        let policy = RatioPolicy::default();
        let mut stats = RatioStats::default();
        for x in [[0.0, 0.3, 0.2], [1.0, 1.5, 0.2], [7.0, 0.5, 0.5]] {
            assert_eq!(density_ratio(&x, &model, &model, &policy, &mut stats), 1.0);
        }
        assert_eq!(stats.missing_stratum, 1);
    }

    #[test]
    fn floored_denominator_hits_cap() {
        let t = uniform_table(400, 3);
        let cfg = GridConfig {
            m: 20,
            ..GridConfig::default()
        }
        .with_discrete(&["b"]);
        let (_, model) = local_density(&t, &cfg, &DensityOptions::default()).unwrap();
        let shifted: Vec<Vec<f64>> = t.rows().map(|r| vec![r[0], r[1] + 5.0, r[2]]).collect();
        let shifted = Table::new(names(&["b", "u", "v"]), &shifted).unwrap();
        let (_, other) = local_density(&shifted, &cfg, &DensityOptions::default()).unwrap();
        let mut stats = RatioStats::default();
        let r = density_ratio(&[0.0, 0.5, 0.5], &model, &other, &RatioPolicy::default(), &mut stats);
        assert_eq!(r, 1e4);
        assert_eq!(stats.capped, 1);
        assert_eq!(stats.floored_denominator, 1);
    }

    #[test]
    fn synthetic_sampling_is_deterministic() {
        let t = uniform_table(400, 4);
        let cfg = GridConfig {
            m: 20,
            ..GridConfig::default()
        }
        .with_discrete(&["b"]);
        let (_, model) = local_density(&t, &cfg, &DensityOptions::default()).unwrap();
        assert_eq!(model.sample_synthetic(100, 5), model.sample_synthetic(100, 5));
        assert_ne!(model.sample_synthetic(100, 5), model.sample_synthetic(100, 6));
    }
}
