//! Main and reduced generalized linear models: outcome densities, scores,
//! Newton-Raphson fitting and robust sandwich covariances.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::StudySample;
use crate::error::{Error, Result};
use crate::linalg::{self, serde_matrix};

/// Outcome family shared by the main and reduced models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "binary-logistic")]
    Logistic,
    #[serde(rename = "gaussian-linear")]
    Gaussian,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Logistic => "binary-logistic",
            Family::Gaussian => "gaussian-linear",
        }
    }

    fn check_outcome(self, y: f64) -> Result<()> {
        let ok = match self {
            Family::Logistic => y == 0.0 || y == 1.0,
            Family::Gaussian => y.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidOutcome {
                value: y,
                family: self.name(),
            })
        }
    }
}

/// Numerically stable logistic function.
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))` without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

pub const INTERCEPT: &str = "(intercept)";

/// The shared main model `Y | X ~ f(y | x; beta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub covariate_names: Vec<String>,
    pub includes_intercept: bool,
    /// Outcome variance of the gaussian family; ignored for logistic.
    #[serde(default = "unit")]
    pub dispersion: f64,
}

fn unit() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn new(family: Family, covariate_names: Vec<String>, includes_intercept: bool) -> Result<Self> {
        let spec = Self {
            family,
            covariate_names,
            includes_intercept,
            dispersion: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariate_names.is_empty() {
            return Err(Error::InvalidInput("model needs at least one covariate".into()));
        }
        check_unique(&self.covariate_names)?;
        if !(self.dispersion > 0.0 && self.dispersion.is_finite()) {
            return Err(Error::InvalidInput("dispersion must be positive".into()));
        }
        Ok(())
    }

    /// Number of substantive covariates `p`.
    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    /// Length of `beta` (covariates plus intercept).
    pub fn dim(&self) -> usize {
        self.p() + usize::from(self.includes_intercept)
    }

    pub fn coefficient_names(&self) -> Vec<String> {
        coefficient_names(&self.covariate_names, self.includes_intercept)
    }

    pub fn linear_predictor(&self, x: &[f64], beta: &[f64]) -> f64 {
        linear_predictor(x, beta, self.includes_intercept)
    }
}

/// Working model `Y | X^(j) ~ h_j(y | x^(j); theta_j)` fitted at one site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReducedModelSpec {
    pub family: Family,
    /// Observed covariates by name, in design-column order.
    pub covariates: Vec<String>,
    pub includes_intercept: bool,
}

impl ReducedModelSpec {
    pub fn new(family: Family, covariates: Vec<String>, includes_intercept: bool) -> Result<Self> {
        let spec = Self {
            family,
            covariates,
            includes_intercept,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::InvalidInput("reduced model needs at least one coefficient".into()));
        }
        check_unique(&self.covariates)
    }

    pub fn dim(&self) -> usize {
        self.covariates.len() + usize::from(self.includes_intercept)
    }

    pub fn coefficient_names(&self) -> Vec<String> {
        coefficient_names(&self.covariates, self.includes_intercept)
    }

    /// Positions of the mask inside the main model's covariate list.
    pub fn resolve(&self, main: &ModelSpec) -> Result<Vec<usize>> {
        let mut missing = Vec::new();
        let idx = self
            .covariates
            .iter()
            .filter_map(|c| {
                let i = main.covariate_names.iter().position(|n| n == c);
                if i.is_none() {
                    missing.push(c.clone());
                }
                i
            })
            .collect();
        if missing.is_empty() {
            Ok(idx)
        } else {
            Err(Error::UnresolvedNames(missing))
        }
    }
}

fn check_unique(names: &[String]) -> Result<()> {
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::InvalidInput(format!("duplicate covariate `{n}`")));
        }
    }
    Ok(())
}

fn coefficient_names(covariates: &[String], intercept: bool) -> Vec<String> {
    let mut out = Vec::with_capacity(covariates.len() + 1);
    if intercept {
        out.push(INTERCEPT.to_string());
    }
    out.extend(covariates.iter().cloned());
    out
}

fn linear_predictor(x: &[f64], coef: &[f64], intercept: bool) -> f64 {
    if intercept {
        coef[0] + x.iter().zip(&coef[1..]).map(|(a, b)| a * b).sum::<f64>()
    } else {
        x.iter().zip(coef).map(|(a, b)| a * b).sum()
    }
}

/// Writes the design row (leading 1 when `intercept`) into `out`.
pub fn design_row(x: &[f64], intercept: bool, out: &mut Vec<f64>) {
    out.clear();
    if intercept {
        out.push(1.0);
    }
    out.extend_from_slice(x);
}

/// Reduced-model fit shipped to the lead site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteFit {
    pub theta_hat: Vec<f64>,
    /// Sandwich covariance of `sqrt(N) (theta_hat - theta*)`.
    #[serde(with = "serde_matrix")]
    pub sigma_hat: DMatrix<f64>,
    pub n_study: usize,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Max-norm tolerance on the mean score.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// A correctly classified point with |eta| beyond this signals separation.
    pub separation_eta: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            max_halvings: 40,
            separation_eta: 30.0,
        }
    }
}

/// Density or mass of `y` under the main model at full covariates `x`.
pub fn outcome_density(y: f64, x: &[f64], beta: &[f64], spec: &ModelSpec) -> Result<f64> {
    if beta.len() != spec.dim() || x.len() != spec.p() {
        return Err(Error::Dimension(format!(
            "beta has {} entries and x has {}, model expects {} and {}",
            beta.len(),
            x.len(),
            spec.dim(),
            spec.p()
        )));
    }
    spec.family.check_outcome(y)?;
    let eta = spec.linear_predictor(x, beta);
    Ok(match spec.family {
        Family::Logistic => {
            let mu = expit(eta);
            if y == 1.0 {
                mu
            } else {
                1.0 - mu
            }
        }
        Family::Gaussian => normal_pdf(y, eta, spec.dispersion),
    })
}

pub(crate) fn normal_pdf(y: f64, mean: f64, var: f64) -> f64 {
    let z = y - mean;
    (-0.5 * z * z / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Score of the reduced model at one observation; `x_sub` holds the masked
/// covariates without the intercept column.
pub fn reduced_score(y: f64, x_sub: &[f64], theta: &[f64], spec: &ReducedModelSpec) -> Result<Vec<f64>> {
    if x_sub.len() != spec.covariates.len() || theta.len() != spec.dim() {
        return Err(Error::Dimension(format!(
            "x_sub has {} entries and theta {}, reduced model expects {} and {}",
            x_sub.len(),
            theta.len(),
            spec.covariates.len(),
            spec.dim()
        )));
    }
    let eta = linear_predictor(x_sub, theta, spec.includes_intercept);
    let resid = y - mean_function(spec.family, eta);
    let mut row = Vec::with_capacity(spec.dim());
    design_row(x_sub, spec.includes_intercept, &mut row);
    Ok(row.into_iter().map(|v| v * resid).collect())
}

pub(crate) fn mean_function(family: Family, eta: f64) -> f64 {
    match family {
        Family::Logistic => expit(eta),
        Family::Gaussian => eta,
    }
}

/// Derivative of the mean function with respect to the linear predictor.
pub(crate) fn mean_derivative(family: Family, eta: f64) -> f64 {
    match family {
        Family::Logistic => {
            let mu = expit(eta);
            mu * (1.0 - mu)
        }
        Family::Gaussian => 1.0,
    }
}

/// Fits the reduced model by Newton-Raphson (logistic, with step halving) or
/// least squares (gaussian), returning the estimate and its sandwich covariance.
pub fn fit_reduced_model(data: &StudySample, spec: &ReducedModelSpec, config: &FitConfig) -> Result<SiteFit> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::EmptySample);
    }
    let x = design_matrix(data, spec)?;
    let (n, d) = x.shape();
    if n <= d {
        return Err(Error::InvalidInput(format!(
            "{n} observations cannot identify {d} reduced-model coefficients"
        )));
    }
    for &y in &data.y {
        spec.family.check_outcome(y)?;
    }
    check_full_rank(&x, &spec.coefficient_names())?;
    let y = DVector::from_column_slice(&data.y);

    let (theta, iterations) = match spec.family {
        Family::Gaussian => (least_squares(&x, &y)?, 1),
        Family::Logistic => newton_logistic(&x, &y, config)?,
    };
    let sigma_hat = sandwich(&x, &y, &theta, spec.family)?;
    Ok(SiteFit {
        theta_hat: theta.iter().copied().collect(),
        sigma_hat,
        n_study: n,
        converged: true,
        iterations,
    })
}

fn design_matrix(data: &StudySample, spec: &ReducedModelSpec) -> Result<DMatrix<f64>> {
    let idx = data.covariates.resolve(&spec.covariates)?;
    let n = data.len();
    let d = spec.dim();
    let off = usize::from(spec.includes_intercept);
    let mut x = DMatrix::zeros(n, d);
    for (i, row) in data.covariates.rows().enumerate() {
        if spec.includes_intercept {
            x[(i, 0)] = 1.0;
        }
        for (c, &k) in idx.iter().enumerate() {
            x[(i, c + off)] = row[k];
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("design matrix contains non-finite values".into()));
    }
    Ok(x)
}

/// Modified Gram-Schmidt; a column whose residual is tiny relative to its
/// norm is collinear with the columns before it.
fn check_full_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut collinear = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        let mut r = col;
        for q in &basis {
            let proj = q.dot(&r);
            r -= q * proj;
        }
        let rn = r.norm();
        if norm == 0.0 || rn <= 1e-9 * norm {
            collinear.push(name.clone());
        } else {
            basis.push(r / rn);
        }
    }
    if collinear.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficient { columns: collinear })
    }
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::RankDeficient { columns: vec![] })?;
    Ok(chol.solve(&xty))
}

fn logistic_loglik(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>) -> f64 {
    let eta = x * theta;
    eta.iter().zip(y.iter()).map(|(&e, &yi)| yi * e - softplus(e)).sum()
}

fn newton_logistic(x: &DMatrix<f64>, y: &DVector<f64>, config: &FitConfig) -> Result<(DVector<f64>, usize)> {
    let (n, d) = x.shape();
    let nf = n as f64;
    let mut theta = DVector::zeros(d);
    let mut ll = logistic_loglik(x, y, &theta);
    let mut score_norm = f64::INFINITY;

    for iter in 0..=config.max_iter {
        let eta = x * &theta;
        let mut score = DVector::zeros(d);
        let mut info = DMatrix::zeros(d, d);
        let mut max_sep: f64 = 0.0;
        for i in 0..n {
            let mu = expit(eta[i]);
            let row = x.row(i);
            score += row.transpose() * (y[i] - mu);
            info.ger(mu * (1.0 - mu), &row.transpose(), &row.transpose(), 1.0);
            if (eta[i] > 0.0) == (y[i] == 1.0) {
                max_sep = max_sep.max(eta[i].abs());
            }
        }
        if max_sep > config.separation_eta {
            return Err(Error::Separation {
                iterations: iter,
                max_eta: max_sep,
            });
        }
        score /= nf;
        info /= nf;
        score_norm = score.amax();
        if score_norm < config.tol {
            return Ok((theta, iter));
        }
        if iter == config.max_iter {
            break;
        }
        let delta = info
            .cholesky()
            .map(|c| c.solve(&score))
            .ok_or_else(|| Error::RankDeficient { columns: vec![] })?;

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=config.max_halvings {
            let cand = &theta + &delta * t;
            let ll_c = logistic_loglik(x, y, &cand);
            if ll_c.is_finite() && ll_c >= ll - 1e-12 * ll.abs() {
                theta = cand;
                ll = ll_c;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(Error::NonConvergence {
        iterations: config.max_iter,
        score_norm,
        last: theta.iter().copied().collect(),
    })
}

/// `B^{-1} M B^{-T}` with `B` the mean negative Hessian and `M` the mean
/// outer product of scores, symmetrized.
fn sandwich(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>, family: Family) -> Result<DMatrix<f64>> {
    let (n, d) = x.shape();
    let eta = x * theta;
    let mut bread = DMatrix::zeros(d, d);
    let mut meat = DMatrix::zeros(d, d);
    for i in 0..n {
        let row = x.row(i).transpose();
        let w = mean_derivative(family, eta[i]);
        let r = y[i] - mean_function(family, eta[i]);
        bread.ger(w, &row, &row, 1.0);
        meat.ger(r * r, &row, &row, 1.0);
    }
    bread /= n as f64;
    meat /= n as f64;
    let binv = linalg::sym_inverse(&bread).ok_or_else(|| Error::RankDeficient { columns: vec![] })?;
    Ok(linalg::symmetrize(&(&binv * meat * &binv)))
}
