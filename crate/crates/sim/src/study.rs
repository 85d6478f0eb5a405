//! Replicated simulation runs and their summary metrics.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use dtgmm::{child_seed, GmmConfig, GridConfig};

use crate::method::{run_method, MethodConfig, MethodTag};
use crate::setting::{generate_replicate, SimSetting, BETA_STAR};
use crate::SimError;

fn default_settings() -> Vec<u8> {
    vec![1, 2, 3, 4]
}
fn default_methods() -> Vec<MethodTag> {
    MethodTag::ALL.to_vec()
}
fn default_reps() -> usize {
    100
}
fn default_n_study() -> usize {
    1000
}
fn default_n_ref() -> usize {
    500
}
fn default_m() -> usize {
    100
}
fn default_min_stratum() -> usize {
    20
}
fn default_bins() -> usize {
    20
}
fn default_true() -> bool {
    true
}
fn default_level() -> f64 {
    0.95
}

/// Declarative description of a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_settings")]
    pub settings: Vec<u8>,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodTag>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default = "default_n_study")]
    pub n_study: usize,
    #[serde(default = "default_n_ref")]
    pub n_ref: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_min_stratum")]
    pub min_stratum_n: usize,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_size: Option<usize>,
    #[serde(default = "default_true")]
    pub include_gamma: bool,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Worker threads; `None` uses the global pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            settings: default_settings(),
            methods: default_methods(),
            reps: default_reps(),
            root_seed: 0,
            n_study: default_n_study(),
            n_ref: default_n_ref(),
            m: default_m(),
            min_stratum_n: default_min_stratum(),
            histogram_bins: default_bins(),
            synthetic_size: None,
            include_gamma: true,
            level: default_level(),
            jobs: None,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.reps == 0 {
            return Err(SimError::Config("reps must be at least 1".into()));
        }
        if self.settings.is_empty() || self.settings.iter().any(|s| !(1..=4).contains(s)) {
            return Err(SimError::Config(format!("settings must be drawn from 1..=4, got {:?}", self.settings)));
        }
        if self.methods.is_empty() {
            return Err(SimError::Config("no methods selected".into()));
        }
        if self.m == 0 || self.n_ref == 0 || self.n_study == 0 || self.histogram_bins == 0 {
            return Err(SimError::Config("m, n_ref, n_study and histogram_bins must be positive".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(SimError::Config(format!("level {} outside (0, 1)", self.level)));
        }
        Ok(())
    }

    pub fn method_config(&self) -> MethodConfig {
        let grid = GridConfig {
            m: self.m,
            min_stratum_n: self.min_stratum_n,
            ..GridConfig::default()
        }
        .with_discrete(&["X1"]);
        MethodConfig {
            grid,
            gmm: GmmConfig {
                include_gamma: self.include_gamma,
                level: self.level,
                ..GmmConfig::default()
            },
            histogram_bins: self.histogram_bins,
            synthetic_size: self.synthetic_size,
            ..MethodConfig::default()
        }
    }

    fn run_in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T, SimError> {
        match self.jobs {
            Some(j) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(j.max(1))
                    .build()
                    .map_err(|e| SimError::Config(e.to_string()))?;
                Ok(pool.install(f))
            }
            None => Ok(f()),
        }
    }
}

/// One method on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub setting: u8,
    pub method: MethodTag,
    pub rep: usize,
    pub seed: u64,
    pub estimates: Vec<Option<f64>>,
    pub std_errors: Vec<Option<f64>>,
    /// Whether each interval covers the true coefficient.
    pub covered: Vec<Option<bool>>,
    pub error: Option<String>,
    /// Relative gap between the sandwich at the optimal weight and its
    /// closed form; absent for methods without a GMM solve.
    pub sandwich_gap: Option<f64>,
    pub elapsed_ms: f64,
}

/// Summary of one coefficient for one (setting, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub setting: u8,
    pub method: MethodTag,
    pub coefficient: String,
    pub bias: Option<f64>,
    pub sd: Option<f64>,
    pub esd: Option<f64>,
    pub ci: Option<f64>,
    pub n_fail: usize,
}

pub fn coefficient_label(k: usize) -> String {
    format!("beta{}", k + 1)
}

fn replicate_seed(root: u64, setting: u8, rep: usize) -> u64 {
    child_seed(root, &[setting as u64, rep as u64])
}

/// Runs every method of `config` on the same generated data per replicate.
pub fn run_replicates(config: &StudyConfig) -> Result<Vec<ReplicateRecord>, SimError> {
    config.validate()?;
    let cfg = config.method_config();
    let tasks: Vec<(u8, usize)> = config
        .settings
        .iter()
        .flat_map(|&s| (0..config.reps).map(move |r| (s, r)))
        .collect();
    let run = || -> Vec<ReplicateRecord> {
        tasks
            .par_iter()
            .flat_map_iter(|&(s, r)| {
                let setting = SimSetting::standard(s, config.n_study, config.n_ref).expect("validated setting id");
                let seed = replicate_seed(config.root_seed, s, r);
                let data = generate_replicate(&setting, seed);
                config
                    .methods
                    .iter()
                    .map(|&m| {
                        let start = Instant::now();
                        let out = run_method(m, &data, &cfg, child_seed(seed, &[99]));
                        let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
                        let mut sandwich_gap = None;
                        let (estimates, std_errors, covered, error) = match out {
                            Ok(o) => {
                                let covered = o
                                    .intervals
                                    .iter()
                                    .zip(&setting.beta_star[1..])
                                    .map(|(iv, b)| iv.map(|(lo, hi)| lo <= *b && *b <= hi))
                                    .collect();
                                sandwich_gap = o.diagnostics.as_ref().map(|d| d.sandwich_identity_gap);
                                (o.estimates, o.std_errors, covered, None)
                            }
                            Err(e) => (vec![None; 3], vec![None; 3], vec![None; 3], Some(e.to_string())),
                        };
                        ReplicateRecord {
                            setting: s,
                            method: m,
                            rep: r,
                            seed,
                            estimates,
                            std_errors,
                            covered,
                            error,
                            sandwich_gap,
                            elapsed_ms,
                        }
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    let mut records = config.run_in_pool(run)?;
    records.sort_by_key(|r| (r.setting, r.method, r.rep));
    Ok(records)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v)?;
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

/// Bias, SD, ESD and coverage per (setting, method, coefficient); failed
/// replicates are excluded and counted.
pub fn summarize(records: &[ReplicateRecord]) -> Vec<MetricRow> {
    let mut keys: Vec<(u8, MethodTag)> = records.iter().map(|r| (r.setting, r.method)).collect();
    keys.sort();
    keys.dedup();
    let mut rows = Vec::new();
    for (s, m) in keys {
        let group: Vec<&ReplicateRecord> = records.iter().filter(|r| r.setting == s && r.method == m).collect();
        let ok: Vec<&&ReplicateRecord> = group.iter().filter(|r| r.error.is_none()).collect();
        let n_fail = group.len() - ok.len();
        for k in 0..3 {
            let est: Vec<f64> = ok.iter().filter_map(|r| r.estimates[k]).collect();
            let se: Vec<f64> = ok.iter().filter_map(|r| r.std_errors[k]).collect();
            let hits: Vec<f64> = ok.iter().filter_map(|r| r.covered[k]).map(|c| f64::from(u8::from(c))).collect();
            rows.push(MetricRow {
                setting: s,
                method: m,
                coefficient: coefficient_label(k),
                bias: mean(&est).map(|v| v - BETA_STAR[k + 1]),
                sd: sample_sd(&est),
                esd: mean(&se),
                ci: mean(&hits),
                n_fail,
            });
        }
    }
    rows
}

pub fn run_study(config: &StudyConfig) -> Result<Vec<MetricRow>, SimError> {
    Ok(summarize(&run_replicates(config)?))
}

/// Root mean squared error over replicates, for the coefficient vector and each coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub setting: u8,
    pub method: MethodTag,
    pub n: usize,
    pub rmse: Option<f64>,
    pub rmse_coef: Vec<Option<f64>>,
    pub n_fail: usize,
}

pub fn rmse(records: &[ReplicateRecord], n: usize) -> Vec<RmseRow> {
    let mut keys: Vec<(u8, MethodTag)> = records.iter().map(|r| (r.setting, r.method)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(s, m)| {
            let group: Vec<&ReplicateRecord> = records.iter().filter(|r| r.setting == s && r.method == m).collect();
            let ok: Vec<&&ReplicateRecord> = group.iter().filter(|r| r.error.is_none()).collect();
            let sq = |k: usize| -> Vec<f64> {
                ok.iter()
                    .filter_map(|r| r.estimates[k])
                    .map(|e| (e - BETA_STAR[k + 1]).powi(2))
                    .collect()
            };
            let rmse_coef: Vec<Option<f64>> = (0..3).map(|k| mean(&sq(k)).map(f64::sqrt)).collect();
            let rmse = rmse_coef
                .iter()
                .try_fold(0.0, |acc, c| c.map(|v| acc + v * v))
                .map(f64::sqrt);
            RmseRow {
                setting: s,
                method: m,
                n,
                rmse,
                rmse_coef,
                n_fail: group.len() - ok.len(),
            }
        })
        .collect()
}

/// RMSE curves over reference sample sizes.
pub fn sweep_reference_size(base: &StudyConfig, sizes: &[usize]) -> Result<Vec<RmseRow>, SimError> {
    let mut out = Vec::new();
    for &n in sizes {
        let cfg = StudyConfig { n_ref: n, ..base.clone() };
        out.extend(rmse(&run_replicates(&cfg)?, n));
    }
    Ok(out)
}

/// dist-GMM-C metrics for each grid size `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSweepRow {
    pub m: usize,
    pub metrics: MetricRow,
}

pub fn sweep_grid_density(base: &StudyConfig, ms: &[usize]) -> Result<Vec<GridSweepRow>, SimError> {
    let mut out = Vec::new();
    for &m in ms {
        let cfg = StudyConfig {
            m,
            methods: vec![MethodTag::DistGmmC],
            ..base.clone()
        };
        out.extend(run_study(&cfg)?.into_iter().map(|metrics| GridSweepRow { m, metrics }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_from_empty_json() {
        let c: StudyConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, StudyConfig::default());
        assert!(serde_json::from_str::<StudyConfig>(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn single_replicate_has_no_sd() {
        let rec = ReplicateRecord {
            setting: 1,
            method: MethodTag::Local,
            rep: 0,
            seed: 0,
            estimates: vec![Some(1.5), Some(0.5), None],
            std_errors: vec![Some(0.1), Some(0.2), None],
            covered: vec![Some(false), Some(true), None],
            error: None,
            sandwich_gap: None,
            elapsed_ms: 0.0,
        };
        let rows = summarize(&[rec]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].bias, Some(0.5));
        assert_eq!(rows[0].sd, None);
        assert_eq!(rows[1].ci, Some(1.0));
        assert_eq!(rows[2].bias, None);
    }
}
