//! GMM estimation over a moment system: Gauss–Newton minimization,
//! weight iteration, plug-in covariance and confidence intervals.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::density::RatioStats;
use crate::error::{Error, Result};
use crate::glm::SiteFit;
use crate::linalg::{self, serde_matrix};
use crate::moment::{initial_beta, MomentConditions, MomentSystem};
use crate::seed::child_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "scheme")]
pub enum WeightScheme {
    Identity,
    TwoStep,
    Iterated { max_updates: usize, tol: f64 },
}

impl Default for WeightScheme {
    fn default() -> Self {
        WeightScheme::Iterated {
            max_updates: 10,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmConfig {
    pub weight_scheme: WeightScheme,
    /// Add the first-stage term `Gamma` to `Omega` before inverting.
    pub include_gamma: bool,
    pub ridge: f64,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iter: usize,
    pub level: f64,
    /// Replaces `c_j = n_ref / N_j` per site when set.
    pub gamma_scale: Option<Vec<f64>>,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            weight_scheme: WeightScheme::default(),
            include_gamma: true,
            ridge: 1e-8,
            grad_tol: 1e-8,
            step_tol: 1e-12,
            max_iter: 200,
            level: 0.95,
            gamma_scale: None,
        }
    }
}

impl GmmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.ridge >= 0.0, self.grad_tol > 0.0, self.step_tol > 0.0, self.max_iter > 0];
        if positive.contains(&false) {
            return Err(Error::InvalidInput("GMM tolerances must be positive".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidInput(format!("confidence level {} outside (0, 1)", self.level)));
        }
        if let WeightScheme::Iterated { tol, .. } = self.weight_scheme {
            if !(tol > 0.0) {
                return Err(Error::InvalidInput("weight iteration tolerance must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimized {
    pub beta: Vec<f64>,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Iterations where the Gauss–Newton system was singular.
    pub gradient_steps: usize,
}

fn objective<M: MomentConditions + ?Sized>(m: &M, w: &DMatrix<f64>, beta: &[f64]) -> f64 {
    let g = m.g_bar(beta);
    (g.transpose() * w * &g)[(0, 0)]
}

/// Solves `H d = rhs`; `None` when `H` is numerically singular.
fn gauss_newton_direction(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let ch = h.clone().cholesky()?;
    let diag = ch.l_dirty().diagonal();
    if diag.min() <= 1e-7 * diag.max() {
        return None;
    }
    let d = ch.solve(rhs);
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// Minimizes `Q(beta) = g_bar' W g_bar` by Gauss–Newton with Armijo backtracking.
pub fn minimize<M: MomentConditions + ?Sized>(m: &M, weight: &DMatrix<f64>, beta_init: &[f64], config: &GmmConfig) -> Result<Minimized> {
    let p = m.dim();
    if beta_init.len() != p || weight.nrows() != m.q() || weight.ncols() != m.q() {
        return Err(Error::Dimension(format!(
            "beta_init has {} entries and W is {}x{}, expected {p} and {q}x{q}",
            beta_init.len(),
            weight.nrows(),
            weight.ncols(),
            q = m.q()
        )));
    }
    let mut beta = beta_init.to_vec();
    let mut g = m.g_bar(&beta);
    let mut q_val = (g.transpose() * weight * &g)[(0, 0)];
    let mut trace = vec![q_val];
    let mut gradient_steps = 0;
    for iter in 0..config.max_iter {
        let a = m.jacobian(&beta);
        let atw = a.transpose() * weight;
        let grad: DVector<f64> = &atw * &g * 2.0;
        let gnorm = grad.amax();
        if gnorm < config.grad_tol {
            return Ok(Minimized {
                beta,
                trace,
                iterations: iter,
                gradient_norm: gnorm,
                gradient_steps,
            });
        }
        let h = &atw * &a;
        let rhs = -(&atw * &g);
        let dir = match gauss_newton_direction(&h, &rhs) {
            Some(d) => d,
            None => {
                gradient_steps += 1;
                -&grad
            }
        };
        let slope = grad.dot(&dir);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = beta.iter().zip(dir.iter()).map(|(b, d)| b + t * d).collect();
            let q_new = objective(m, weight, &cand);
            if q_new.is_finite() && q_new <= q_val + 1e-4 * t * slope.min(0.0) {
                accepted = Some((cand, q_new));
                break;
            }
            t *= 0.5;
        }
        let step = t * dir.amax();
        match accepted {
            Some((cand, q_new)) if q_new <= q_val => {
                beta = cand;
                q_val = q_new;
                g = m.g_bar(&beta);
                trace.push(q_val);
            }
            _ => {
                return Ok(Minimized {
                    beta,
                    trace,
                    iterations: iter,
                    gradient_norm: gnorm,
                    gradient_steps,
                });
            }
        }
        if step < config.step_tol {
            let a = m.jacobian(&beta);
            let gnorm = (a.transpose() * weight * &g * 2.0).amax();
            return Ok(Minimized {
                beta,
                trace,
                iterations: iter + 1,
                gradient_norm: gnorm,
                gradient_steps,
            });
        }
    }
    Err(Error::GmmMaxIterations {
        iterations: config.max_iter,
        objective: q_val,
        best: beta,
    })
}

/// Mean outer product of the stacked moments over the reference sample.
pub fn estimate_omega(system: &MomentSystem, beta: &[f64]) -> DMatrix<f64> {
    let g = system.g_rows(beta);
    linalg::symmetrize(&(g.transpose() * &g / system.n_ref() as f64))
}

/// Block-diagonal first-stage term: `c_j B_j Sigma_j B_j'` per site.
pub fn estimate_gamma(system: &MomentSystem, fits: &[SiteFit], scale: Option<&[f64]>) -> Result<DMatrix<f64>> {
    let k = system.blocks().len();
    if fits.len() != k {
        return Err(Error::Dimension(format!("{} site fits for {k} moment blocks", fits.len())));
    }
    if let Some(c) = scale {
        if c.len() != k {
            return Err(Error::Dimension(format!("{} gamma scales for {k} moment blocks", c.len())));
        }
    }
    let blocks = (0..k)
        .map(|j| {
            let fit = &fits[j];
            let c = scale.map_or(system.n_ref() as f64 / fit.n_study as f64, |c| c[j]);
            let b = system.theta_jacobian(j);
            if fit.sigma_hat.nrows() != b.ncols() || fit.sigma_hat.ncols() != b.ncols() {
                return Err(Error::Dimension(format!("site {j}: Sigma does not match theta")));
            }
            Ok(linalg::symmetrize(&(&b * &fit.sigma_hat * b.transpose() * c)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(linalg::block_diag(&blocks))
}

/// Symmetric normal-quantile intervals.
pub fn confidence_intervals(beta: &[f64], covariance: &DMatrix<f64>, level: f64) -> Vec<(f64, f64)> {
    let z = normal_quantile(0.5 + level / 2.0);
    beta.iter()
        .enumerate()
        .map(|(k, b)| {
            let half = z * covariance[(k, k)].max(0.0).sqrt();
            (b - half, b + half)
        })
        .collect()
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmDiagnostics {
    pub weight_updates: usize,
    pub weight_converged: bool,
    pub minimize_iterations: usize,
    pub gradient_steps: usize,
    pub final_gradient_norm: f64,
    pub a_rank: usize,
    pub condition_number: f64,
    pub ridge: f64,
    /// Max relative gap between the sandwich at `W = S^-1` and `(A' S^-1 A)^-1`.
    pub sandwich_identity_gap: f64,
    pub ratio_stats: RatioStats,
    pub n_ref: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub draws: usize,
    pub failures: usize,
    #[serde(with = "serde_matrix")]
    pub covariance: DMatrix<f64>,
    pub std_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmResult {
    pub coefficient_names: Vec<String>,
    pub beta_hat: Vec<f64>,
    /// Covariance of `beta_hat` (already divided by `n_ref`).
    #[serde(with = "serde_matrix")]
    pub covariance: DMatrix<f64>,
    pub std_errors: Vec<f64>,
    pub level: f64,
    pub intervals: Vec<(f64, f64)>,
    #[serde(with = "serde_matrix")]
    pub weight: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub a_hat: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub omega_hat: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub gamma_hat: DMatrix<f64>,
    /// Objective values of every `minimize` call in order; each call's
    /// segment is nonincreasing, but the weight changes between segments.
    pub objective_trace: Vec<f64>,
    pub diagnostics: GmmDiagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapSummary>,
}

fn max_abs_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Full two-stage estimate: identity-weighted start, then weight updates.
pub fn solve(system: &MomentSystem, fits: &[SiteFit], config: &GmmConfig) -> Result<GmmResult> {
    config.validate()?;
    let q = system.q();
    let p = system.dim();
    if q < p {
        return Err(Error::Unidentified(format!("{q} moment conditions for {p} coefficients")));
    }
    let lead = &system.blocks()[0];
    let beta0 = initial_beta(system.main(), &lead.reduced, &lead.theta);

    let s_matrix = |beta: &[f64]| -> Result<DMatrix<f64>> {
        let mut s = estimate_omega(system, beta);
        if config.include_gamma {
            s += estimate_gamma(system, fits, config.gamma_scale.as_deref())?;
        }
        Ok(s + DMatrix::identity(q, q) * config.ridge)
    };
    let optimal_weight = |s: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        linalg::sym_inverse(s).ok_or_else(|| Error::InvalidInput("moment covariance is singular even after the ridge".into()))
    };

    let identity = DMatrix::identity(q, q);
    let mut fit = minimize(system, &identity, &beta0, config)?;
    let mut trace = fit.trace.clone();
    let mut iterations = fit.iterations;
    let mut gradient_steps = fit.gradient_steps;
    let (max_updates, tol) = match config.weight_scheme {
        WeightScheme::Identity => (0, f64::INFINITY),
        WeightScheme::TwoStep => (1, f64::INFINITY),
        WeightScheme::Iterated { max_updates, tol } => (max_updates, tol),
    };
    let mut updates = 0;
    let mut weight_converged = max_updates == 0;
    while updates < max_updates {
        let w = optimal_weight(&s_matrix(&fit.beta)?)?;
        let next = minimize(system, &w, &fit.beta, config)?;
        updates += 1;
        iterations += next.iterations;
        gradient_steps += next.gradient_steps;
        trace.extend_from_slice(&next.trace);
        let change = max_abs_change(&next.beta, &fit.beta);
        fit = next;
        if change < tol {
            weight_converged = true;
            break;
        }
    }
    if matches!(config.weight_scheme, WeightScheme::TwoStep) {
        weight_converged = true;
    }

    let beta = fit.beta.clone();
    let a = system.jacobian(&beta);
    let a_rank = linalg::rank(&a, 1e-10);
    if a_rank < p {
        return Err(Error::JacobianRank { rank: a_rank, p });
    }
    let omega = estimate_omega(system, &beta);
    let gamma = if config.include_gamma {
        estimate_gamma(system, fits, config.gamma_scale.as_deref())?
    } else {
        DMatrix::zeros(q, q)
    };
    let s = &omega + &gamma + DMatrix::identity(q, q) * config.ridge;
    let w_opt = optimal_weight(&s)?;
    let n = system.n_ref() as f64;
    let sandwich = |w: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let atw = a.transpose() * w;
        let bread = linalg::sym_inverse(&(&atw * &a)).ok_or(Error::JacobianRank { rank: a_rank, p })?;
        Ok(linalg::symmetrize(&(&bread * &atw * &s * atw.transpose() * &bread / n)))
    };
    let efficient = linalg::sym_inverse(&(a.transpose() * &w_opt * &a))
        .ok_or(Error::JacobianRank { rank: a_rank, p })?
        / n;
    let at_opt = sandwich(&w_opt)?;
    let sandwich_identity_gap = linalg::max_rel_diff(&at_opt, &efficient);
    let (weight, covariance) = match config.weight_scheme {
        WeightScheme::Identity => (identity.clone(), sandwich(&identity)?),
        _ => (w_opt, at_opt),
    };
    let std_errors: Vec<f64> = (0..p).map(|k| covariance[(k, k)].max(0.0).sqrt()).collect();
    let intervals = confidence_intervals(&beta, &covariance, config.level);
    let g = system.g_bar(&beta);
    let final_gradient_norm = (a.transpose() * &weight * &g * 2.0).amax();

    Ok(GmmResult {
        coefficient_names: system.main().coefficient_names(),
        beta_hat: beta,
        covariance,
        std_errors,
        level: config.level,
        intervals,
        weight,
        a_hat: a,
        omega_hat: omega,
        gamma_hat: gamma,
        objective_trace: trace,
        diagnostics: GmmDiagnostics {
            weight_updates: updates,
            weight_converged,
            minimize_iterations: iterations,
            gradient_steps,
            final_gradient_norm,
            a_rank,
            condition_number: linalg::condition_number(&s),
            ridge: config.ridge,
            sandwich_identity_gap,
            ratio_stats: system.ratio_stats(),
            n_ref: system.n_ref(),
        },
        bootstrap: None,
    })
}

/// Nonparametric bootstrap over the `n` reference rows: `estimate` receives
/// resampled row indices and returns a coefficient vector. Draws run in
/// parallel with seeds derived from `seed`; failed draws are counted and skipped.
pub fn bootstrap<F>(n: usize, draws: usize, seed: u64, estimate: F) -> Result<BootstrapSummary>
where
    F: Fn(&[usize]) -> Result<Vec<f64>> + Sync,
{
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let results: Vec<Option<Vec<f64>>> = (0..draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, &[b as u64]));
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            estimate(&idx).ok()
        })
        .collect();
    let ok: Vec<&Vec<f64>> = results.iter().flatten().collect();
    let failures = draws - ok.len();
    if ok.len() < 2 {
        return Err(Error::InvalidInput(format!("bootstrap produced {} usable draws", ok.len())));
    }
    let p = ok[0].len();
    let m = ok.len() as f64;
    let mean: Vec<f64> = (0..p).map(|k| ok.iter().map(|b| b[k]).sum::<f64>() / m).collect();
    let covariance = DMatrix::from_fn(p, p, |a, c| {
        ok.iter().map(|b| (b[a] - mean[a]) * (b[c] - mean[c])).sum::<f64>() / (m - 1.0)
    });
    let std_errors = (0..p).map(|k| covariance[(k, k)].sqrt()).collect();
    Ok(BootstrapSummary {
        draws: ok.len(),
        failures,
        covariance,
        std_errors,
    })
}
