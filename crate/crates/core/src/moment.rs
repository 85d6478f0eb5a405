//! Bridging estimating functions and the tilted stacked moment system.
//!
//! Site `j` fits a reduced model on its covariate subset `x^(j)`. Its score,
//! integrated against the main model's outcome distribution, gives
//! `s_j(x; beta, theta_j)`, which has mean zero at the true parameters under
//! site `j`'s covariate distribution. Weighting by `f_j / f_1` moves every
//! expectation onto the lead site's reference sample.

use nalgebra::{DMatrix, DVector};

use crate::data::Table;
use crate::density::RatioStats;
use crate::error::{Error, Result};
use crate::glm::{self, design_row, Family, ModelSpec, ReducedModelSpec};
use crate::quadrature::GaussLegendre;

/// Anything GMM can minimize: a mean moment vector and its Jacobian.
pub trait MomentConditions {
    /// Length of `beta`.
    fn dim(&self) -> usize;
    /// Number of moment conditions.
    fn q(&self) -> usize;
    fn g_bar(&self, beta: &[f64]) -> DVector<f64>;
    fn jacobian(&self, beta: &[f64]) -> DMatrix<f64>;
}

fn check_dims(x: &[f64], beta: &[f64], theta: &[f64], reduced: &ReducedModelSpec, main: &ModelSpec) -> Result<Vec<usize>> {
    if x.len() != main.p() || beta.len() != main.dim() || theta.len() != reduced.dim() {
        return Err(Error::Dimension(format!(
            "x/beta/theta have {}/{}/{} entries, expected {}/{}/{}",
            x.len(),
            beta.len(),
            theta.len(),
            main.p(),
            main.dim(),
            reduced.dim()
        )));
    }
    reduced.resolve(main)
}

fn reduced_design(x: &[f64], mask: &[usize], intercept: bool) -> Vec<f64> {
    let sub: Vec<f64> = mask.iter().map(|&k| x[k]).collect();
    let mut z = Vec::with_capacity(sub.len() + 1);
    design_row(&sub, intercept, &mut z);
    z
}

/// `s_j(x; beta, theta)`. The reduced score is linear in `y`, so integrating it
/// against the main model reduces to `x^(j) (E[Y | x; beta] - mu_j(theta' x^(j)))`.
pub fn bridge_s(x: &[f64], beta: &[f64], theta: &[f64], reduced: &ReducedModelSpec, main: &ModelSpec) -> Result<Vec<f64>> {
    let mask = check_dims(x, beta, theta, reduced, main)?;
    let z = reduced_design(x, &mask, reduced.includes_intercept);
    let mu = glm::mean_function(main.family, main.linear_predictor(x, beta));
    let mu_j = glm::mean_function(reduced.family, dot(&z, theta));
    Ok(z.iter().map(|v| v * (mu - mu_j)).collect())
}

/// `s_j` by integrating the reduced score against the outcome density: an
/// exact two-term sum for a binary outcome, composite Gauss–Legendre over
/// `mean ± 12 sd` for a gaussian one (16 vs 32 nodes per panel must agree to `1e-8`).
pub fn bridge_s_quadrature(x: &[f64], beta: &[f64], theta: &[f64], reduced: &ReducedModelSpec, main: &ModelSpec) -> Result<Vec<f64>> {
    let mask = check_dims(x, beta, theta, reduced, main)?;
    let sub: Vec<f64> = mask.iter().map(|&k| x[k]).collect();
    let qj = reduced.dim();
    match main.family {
        Family::Logistic => {
            let mut s = vec![0.0; qj];
            for y in [0.0, 1.0] {
                let w = glm::outcome_density(y, x, beta, main)?;
                let psi = glm::reduced_score(y, &sub, theta, reduced)?;
                for (a, b) in s.iter_mut().zip(psi) {
                    *a += w * b;
                }
            }
            Ok(s)
        }
        Family::Gaussian => {
            let mean = main.linear_predictor(x, beta);
            let sd = main.dispersion.sqrt();
            let run = |n: usize| -> Result<Vec<f64>> {
                let rule = GaussLegendre::new(n);
                let mut s = vec![0.0; qj];
                for panel in 0..PANELS {
                    let lo = mean + sd * (-12.0 + 24.0 * panel as f64 / PANELS as f64);
                    let hi = mean + sd * (-12.0 + 24.0 * (panel + 1) as f64 / PANELS as f64);
                    for (y, w) in rule.mapped(lo, hi) {
                        let dens = glm::normal_pdf(y, mean, main.dispersion);
                        let psi = glm::reduced_score(y, &sub, theta, reduced)?;
                        for (a, b) in s.iter_mut().zip(psi) {
                            *a += w * dens * b;
                        }
                    }
                }
                Ok(s)
            };
            let coarse = run(16)?;
            let fine = run(32)?;
            let change = coarse
                .iter()
                .zip(&fine)
                .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
                .fold(0.0, f64::max);
            if change > 1e-8 {
                return Err(Error::Quadrature { tol: 1e-8, change });
            }
            Ok(fine)
        }
    }
}

/// `d s_j / d beta` (`q_j x dim(beta)`) at one covariate vector.
pub fn bridge_s_jacobian(x: &[f64], beta: &[f64], theta: &[f64], reduced: &ReducedModelSpec, main: &ModelSpec) -> Result<DMatrix<f64>> {
    let mask = check_dims(x, beta, theta, reduced, main)?;
    let z = reduced_design(x, &mask, reduced.includes_intercept);
    let mut xd = Vec::new();
    design_row(x, main.includes_intercept, &mut xd);
    let d = glm::mean_derivative(main.family, main.linear_predictor(x, beta));
    Ok(DMatrix::from_fn(z.len(), xd.len(), |a, b| z[a] * d * xd[b]))
}

const PANELS: usize = 8;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// One site's contribution to the stacked moment vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentBlock {
    pub site_id: String,
    pub reduced: ReducedModelSpec,
    pub theta: Vec<f64>,
    /// Density ratio `f_j / f_1` at each lead reference row; `None` means 1.
    pub ratios: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    offset: usize,
    qj: usize,
    /// Reduced design rows, `n x q_j` row-major.
    z: Vec<f64>,
    mu_j: Vec<f64>,
    dmu_j: Vec<f64>,
    ratios: Vec<f64>,
}

/// Stacked moment system over the lead site's reference sample.
#[derive(Debug, Clone)]
pub struct MomentSystem {
    main: ModelSpec,
    blocks: Vec<MomentBlock>,
    lead_ref: Table,
    n: usize,
    /// Main design rows, `n x dim` row-major.
    xd: Vec<f64>,
    cache: Vec<BlockCache>,
    q: usize,
    ratio_stats: RatioStats,
}

impl MomentSystem {
    /// `lead_ref` columns must carry every main-model covariate; they are
    /// reordered to the model's order. The first block is the lead site and
    /// must be untilted.
    pub fn new(main: ModelSpec, lead_ref: &Table, blocks: Vec<MomentBlock>) -> Result<Self> {
        main.validate()?;
        if lead_ref.is_empty() {
            return Err(Error::EmptySample);
        }
        if blocks.is_empty() {
            return Err(Error::InvalidInput("moment system needs at least one site".into()));
        }
        if blocks[0].ratios.is_some() {
            return Err(Error::InvalidInput("the lead site's block cannot be tilted".into()));
        }
        let lead_ref = lead_ref.select(&main.covariate_names)?;
        let n = lead_ref.nrows();
        let d = main.dim();
        let mut xd = Vec::with_capacity(n * d);
        let mut row = Vec::with_capacity(d);
        for x in lead_ref.rows() {
            design_row(x, main.includes_intercept, &mut row);
            xd.extend_from_slice(&row);
        }
        let mut cache = Vec::with_capacity(blocks.len());
        let mut offset = 0;
        for b in &blocks {
            b.reduced.validate()?;
            let mask = b.reduced.resolve(&main)?;
            let qj = b.reduced.dim();
            if b.theta.len() != qj {
                return Err(Error::Dimension(format!("site `{}`: theta has {} entries, expected {qj}", b.site_id, b.theta.len())));
            }
            let ratios = match &b.ratios {
                Some(r) if r.len() != n => {
                    return Err(Error::Dimension(format!("site `{}`: {} ratios for {n} reference rows", b.site_id, r.len())));
                }
                Some(r) => r.clone(),
                None => vec![1.0; n],
            };
            let mut z = Vec::with_capacity(n * qj);
            let mut mu_j = Vec::with_capacity(n);
            let mut dmu_j = Vec::with_capacity(n);
            for x in lead_ref.rows() {
                let zi = reduced_design(x, &mask, b.reduced.includes_intercept);
                let eta = dot(&zi, &b.theta);
                mu_j.push(glm::mean_function(b.reduced.family, eta));
                dmu_j.push(glm::mean_derivative(b.reduced.family, eta));
                z.extend(zi);
            }
            cache.push(BlockCache {
                offset,
                qj,
                z,
                mu_j,
                dmu_j,
                ratios,
            });
            offset += qj;
        }
        Ok(Self {
            main,
            blocks,
            lead_ref,
            n,
            xd,
            cache,
            q: offset,
            ratio_stats: RatioStats::default(),
        })
    }

    pub fn with_ratio_stats(mut self, stats: RatioStats) -> Self {
        self.ratio_stats = stats;
        self
    }

    pub fn ratio_stats(&self) -> RatioStats {
        self.ratio_stats
    }

    pub fn main(&self) -> &ModelSpec {
        &self.main
    }

    pub fn blocks(&self) -> &[MomentBlock] {
        &self.blocks
    }

    pub fn lead_ref(&self) -> &Table {
        &self.lead_ref
    }

    pub fn n_ref(&self) -> usize {
        self.n
    }

    /// Row range of block `j` inside the stacked vector.
    pub fn block_range(&self, j: usize) -> std::ops::Range<usize> {
        let c = &self.cache[j];
        c.offset..c.offset + c.qj
    }

    fn x_row(&self, i: usize) -> &[f64] {
        let d = self.main.dim();
        &self.xd[i * d..(i + 1) * d]
    }

    fn mean_at(&self, i: usize, beta: &[f64]) -> (f64, f64) {
        let eta = dot(self.x_row(i), beta);
        (glm::mean_function(self.main.family, eta), glm::mean_derivative(self.main.family, eta))
    }

    fn write_g(&self, i: usize, mu: f64, out: &mut [f64]) {
        for c in &self.cache {
            let z = &c.z[i * c.qj..(i + 1) * c.qj];
            let w = c.ratios[i] * (mu - c.mu_j[i]);
            for (k, zk) in z.iter().enumerate() {
                out[c.offset + k] = zk * w;
            }
        }
    }

    /// Stacked, tilted moment vector at reference row `i`.
    pub fn stacked_g(&self, i: usize, beta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.q];
        self.write_g(i, self.mean_at(i, beta).0, &mut g);
        g
    }

    /// All stacked moment vectors, `n x q`.
    pub fn g_rows(&self, beta: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.q);
        let mut g = vec![0.0; self.q];
        for i in 0..self.n {
            self.write_g(i, self.mean_at(i, beta).0, &mut g);
            for (k, v) in g.iter().enumerate() {
                out[(i, k)] = *v;
            }
        }
        out
    }

    /// `dim(theta_j) x dim(theta_j)` tilted mean of `d s_j / d theta_j`.
    pub fn theta_jacobian(&self, j: usize) -> DMatrix<f64> {
        let c = &self.cache[j];
        let mut b = DMatrix::zeros(c.qj, c.qj);
        for i in 0..self.n {
            let z = &c.z[i * c.qj..(i + 1) * c.qj];
            let w = -c.ratios[i] * c.dmu_j[i];
            for a in 0..c.qj {
                for e in 0..c.qj {
                    b[(a, e)] += w * z[a] * z[e];
                }
            }
        }
        b / self.n as f64
    }
}

impl MomentConditions for MomentSystem {
    fn dim(&self) -> usize {
        self.main.dim()
    }

    fn q(&self) -> usize {
        self.q
    }

    fn g_bar(&self, beta: &[f64]) -> DVector<f64> {
        let mut sum = vec![0.0; self.q];
        let mut g = vec![0.0; self.q];
        for i in 0..self.n {
            self.write_g(i, self.mean_at(i, beta).0, &mut g);
            for (s, v) in sum.iter_mut().zip(&g) {
                *s += v;
            }
        }
        DVector::from_iterator(self.q, sum.into_iter().map(|s| s / self.n as f64))
    }

    fn jacobian(&self, beta: &[f64]) -> DMatrix<f64> {
        let d = self.main.dim();
        let mut a = DMatrix::zeros(self.q, d);
        for i in 0..self.n {
            let (_, dmu) = self.mean_at(i, beta);
            let x = self.x_row(i);
            for c in &self.cache {
                let z = &c.z[i * c.qj..(i + 1) * c.qj];
                let w = c.ratios[i] * dmu;
                for (k, zk) in z.iter().enumerate() {
                    let f = zk * w;
                    for (l, xl) in x.iter().enumerate() {
                        a[(c.offset + k, l)] += f * xl;
                    }
                }
            }
        }
        a / self.n as f64
    }
}

/// Starting value for `beta`: the lead site's reduced coefficients placed on
/// the matching main-model coordinates, zeros elsewhere.
pub fn initial_beta(main: &ModelSpec, reduced: &ReducedModelSpec, theta: &[f64]) -> Vec<f64> {
    let main_names = main.coefficient_names();
    let mut beta = vec![0.0; main.dim()];
    for (name, t) in reduced.coefficient_names().iter().zip(theta) {
        if let Some(k) = main_names.iter().position(|n| n == name) {
            beta[k] = *t;
        }
    }
    beta
}
