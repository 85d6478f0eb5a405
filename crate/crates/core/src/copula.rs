//! Exchangeable Clayton copula: distribution, density, maximum-likelihood
//! fitting on pseudo-observations and gamma-frailty sampling.
//!
//! With `s = sum_k (u_k^-alpha - 1)` the copula is `C(u) = (1 + s)^(-1/alpha)`
//! and its density is
//! `prod_{k<d} (1 + k alpha) * prod_k u_k^(-alpha-1) * (1 + s)^(-d - 1/alpha)`.
//! Both are evaluated through `expm1`/`ln_1p` so the independence limit
//! `alpha -> 0+` stays accurate.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound standing in for the `alpha -> 0+` independence limit.
pub const ALPHA_FLOOR: f64 = 1e-6;
pub const ALPHA_CEILING: f64 = 100.0;

/// Copula family tag carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    #[default]
    Clayton,
}

fn excess(u: &[f64], alpha: f64) -> f64 {
    u.iter().map(|&v| (-alpha * v.ln()).exp_m1()).sum()
}

/// Clayton copula CDF, clamped to `[0, 1]`.
pub fn clayton_cdf(u: &[f64], alpha: f64) -> f64 {
    if u.iter().any(|&v| v <= 0.0) {
        return 0.0;
    }
    // The power form rounds exactly on simple inputs; its cancellation error
    // grows like eps / alpha, so weak dependence uses the expm1/ln1p form.
    if alpha >= 0.05 {
        let t = u.iter().map(|&v| v.powf(-alpha)).sum::<f64>() - (u.len() - 1) as f64;
        return t.powf(-1.0 / alpha).clamp(0.0, 1.0);
    }
    let s = excess(u, alpha);
    (-s.ln_1p() / alpha).exp().clamp(0.0, 1.0)
}

pub fn clayton_log_density(u: &[f64], alpha: f64) -> f64 {
    let d = u.len();
    let norm: f64 = (1..d).map(|k| (k as f64 * alpha).ln_1p()).sum();
    let log_u: f64 = u.iter().map(|v| v.ln()).sum();
    let s = excess(u, alpha);
    norm - (1.0 + alpha) * log_u - (d as f64 + 1.0 / alpha) * s.ln_1p()
}

/// Clayton copula density on the open unit cube; zero on the boundary.
pub fn clayton_density(u: &[f64], alpha: f64) -> f64 {
    if u.iter().any(|&v| v <= 0.0 || v >= 1.0) {
        return 0.0;
    }
    clayton_log_density(u, alpha).exp()
}

/// Kendall's tau implied by a Clayton parameter.
pub fn clayton_tau(alpha: f64) -> f64 {
    alpha / (alpha + 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClaytonFit {
    pub alpha: f64,
    pub log_likelihood: f64,
    /// The maximizer sat on the lower bound (independence).
    pub at_floor: bool,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClaytonFitConfig {
    pub floor: f64,
    pub ceiling: f64,
    pub scan_points: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ClaytonFitConfig {
    fn default() -> Self {
        Self {
            floor: ALPHA_FLOOR,
            ceiling: ALPHA_CEILING,
            scan_points: 61,
            tol: 1e-9,
            max_iter: 200,
        }
    }
}

/// Maximum-likelihood Clayton parameter for rows of pseudo-observations.
///
/// The log-likelihood is scanned on a log-spaced grid over
/// `[floor, ceiling]` and refined with Brent's method on `ln(alpha)`.
pub fn fit_clayton(pseudo_obs: &[Vec<f64>], config: &ClaytonFitConfig) -> Result<ClaytonFit> {
    let d = pseudo_obs.first().map_or(0, Vec::len);
    if d < 2 {
        return Err(Error::InvalidInput("Clayton fit needs at least two dimensions".into()));
    }
    if pseudo_obs.len() < 2 {
        return Err(Error::EmptySample);
    }
    for row in pseudo_obs {
        if row.len() != d {
            return Err(Error::Dimension("ragged pseudo-observation rows".into()));
        }
        if row.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::InvalidInput("pseudo-observations must lie in (0, 1)".into()));
        }
    }
    let mut evaluations = 0usize;
    let mut neg_ll = |t: f64| {
        evaluations += 1;
        let a = t.exp();
        -pseudo_obs.iter().map(|u| clayton_log_density(u, a)).sum::<f64>()
    };

    let (lo, hi) = (config.floor.ln(), config.ceiling.ln());
    let k = config.scan_points.max(3);
    let grid: Vec<f64> = (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&t| neg_ll(t)).collect();
    let best = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::CopulaFit("log-likelihood is not finite anywhere".into()))?;

    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(k - 1)];
    let (t, f) = brent_minimize(&mut neg_ll, a, b, config.tol, config.max_iter)
        .ok_or_else(|| Error::CopulaFit(format!("Brent search did not converge in {} iterations", config.max_iter)))?;
    let (t, f) = if values[best] < f { (grid[best], values[best]) } else { (t, f) };

    let at_floor = t - lo < 1e-6;
    Ok(ClaytonFit {
        alpha: if at_floor { config.floor } else { t.exp() },
        log_likelihood: -f,
        at_floor,
        evaluations,
    })
}

/// Brent's parabolic/golden-section minimizer on `[a, b]`.
fn brent_minimize(f: &mut impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> Option<(f64, f64)> {
    const GOLD: f64 = 0.381_966_011_250_105;
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e): (f64, f64) = (0.0, 0.0);
    for _ in 0..max_iter {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            return Some((x, fx));
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if m >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= m { a - x } else { b - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    None
}

/// Draws `n` points of a `d`-dimensional Clayton copula via the
/// Marshall-Olkin gamma-frailty construction.
pub fn sample_clayton<R: Rng + ?Sized>(d: usize, alpha: f64, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let frailty = Gamma::new(1.0 / alpha, 1.0).expect("alpha must be positive and finite");
    (0..n)
        .map(|_| {
            let v: f64 = frailty.sample(rng);
            (0..d)
                .map(|_| {
                    let e: f64 = Exp1.sample(rng);
                    let u = (-(e / v).ln_1p() / alpha).exp();
                    u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
                })
                .collect()
        })
        .collect()
}

/// Rank-based pseudo-observations `rank / (n + 1)` for each column, returned
/// as rows. Ties receive their average rank.
pub fn pseudo_observations(columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = columns.first().map_or(0, Vec::len);
    let ranked: Vec<Vec<f64>> = columns.iter().map(|c| average_ranks(c)).collect();
    let denom = n as f64 + 1.0;
    (0..n)
        .map(|i| ranked.iter().map(|r| r[i] / denom).collect())
        .collect()
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Kendall's tau-b in `O(n log n)` (Knight's merge-sort algorithm).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "kendall_tau needs paired samples");
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let pairs = |t: u64| t * t.saturating_sub(1) / 2;
    let (mut tie_x, mut tie_xy) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x[a] == x[b] {
            run_x += 1;
            if y[a] == y[b] {
                run_xy += 1;
            } else {
                tie_xy += pairs(run_xy);
                run_xy = 1;
            }
        } else {
            tie_x += pairs(run_x);
            tie_xy += pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    tie_x += pairs(run_x);
    tie_xy += pairs(run_xy);

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);

    let mut tie_y = 0u64;
    let mut run_y = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            tie_y += pairs(run_y);
            run_y = 1;
        }
    }
    tie_y += pairs(run_y);

    let total = pairs(n as u64) as f64;
    let num = total - tie_x as f64 - tie_y as f64 + tie_xy as f64 - 2.0 * swaps as f64;
    let den = ((total - tie_x as f64) * (total - tie_y as f64)).sqrt();
    num / den
}

/// Sorts `v` ascending, returning the number of inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}
