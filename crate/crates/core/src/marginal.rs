//! Grid-valued empirical marginal CDFs and their piecewise-linear
//! reconstruction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GridScheme {
    #[default]
    Quantile,
    EqualSpaced,
}

/// Per-covariate evaluation points, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub scheme: GridScheme,
    pub points: Vec<Vec<f64>>,
}

impl Grid {
    /// Builds `m` interior points per column: sample quantiles at
    /// `k / (m + 1)` or equally spaced between the sample extremes.
    /// Coincident points (heavy ties) are merged.
    pub fn from_sample(columns: &[Vec<f64>], names: &[String], m: usize, scheme: GridScheme) -> Result<Grid> {
        if m < 2 {
            return Err(Error::InvalidInput("grid needs at least two points per covariate".into()));
        }
        let points = columns
            .iter()
            .zip(names)
            .map(|(col, name)| {
                if col.is_empty() {
                    return Err(Error::EmptySample);
                }
                let mut sorted = col.clone();
                sorted.sort_by(f64::total_cmp);
                let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
                if !(hi > lo) {
                    return Err(Error::ConstantCovariate(name.clone()));
                }
                let mut pts: Vec<f64> = (1..=m)
                    .map(|k| match scheme {
                        GridScheme::Quantile => quantile_at_fraction(&sorted, k, m + 1),
                        GridScheme::EqualSpaced => lo + (hi - lo) * (k as f64 / (m + 1) as f64),
                    })
                    .collect();
                pts.dedup();
                if pts.len() < 2 {
                    return Err(Error::ConstantCovariate(name.clone()));
                }
                Ok(pts)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Grid { scheme, points })
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.points.iter().map(Vec::len).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (k, pts) in self.points.iter().enumerate() {
            if pts.len() < 2 {
                return Err(Error::InvalidInput(format!("grid {k} has fewer than two points")));
            }
            if pts.windows(2).any(|w| !(w[1] > w[0])) || pts.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("grid {k} is not strictly increasing")));
            }
        }
        Ok(())
    }
}

/// Linear-interpolation sample quantile (type 7) of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Type-7 quantile at probability `k / d` with the position split into
/// integer and fractional parts exactly, so a grid point that should equal
/// an order statistic is not rounded just below it.
fn quantile_at_fraction(sorted: &[f64], k: usize, d: usize) -> f64 {
    let h = (sorted.len() - 1) * k;
    let (lo, rem) = (h / d, h % d);
    if rem == 0 || lo + 1 >= sorted.len() {
        return sorted[lo.min(sorted.len() - 1)];
    }
    sorted[lo] + (rem as f64 / d as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Empirical marginal CDF values on a grid, plus support bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSummary {
    pub grid: Grid,
    pub cdf_values: Vec<Vec<f64>>,
    pub support_bounds: Vec<(f64, f64)>,
}

impl MarginalSummary {
    pub fn dim(&self) -> usize {
        self.cdf_values.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.cdf_values.len() != self.grid.points.len() || self.support_bounds.len() != self.grid.points.len() {
            return Err(Error::Dimension("marginal summary parts disagree on dimension".into()));
        }
        for (k, (vals, pts)) in self.cdf_values.iter().zip(&self.grid.points).enumerate() {
            if vals.len() != pts.len() {
                return Err(Error::Dimension(format!("covariate {k}: {} CDF values for {} grid points", vals.len(), pts.len())));
            }
            if vals.windows(2).any(|w| w[1] < w[0]) || vals.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidInput(format!("covariate {k}: CDF values must be nondecreasing in [0, 1]")));
            }
            let (lo, hi) = self.support_bounds[k];
            if !(lo < pts[0] && hi > pts[pts.len() - 1]) {
                return Err(Error::InvalidInput(format!("covariate {k}: support bounds must enclose the grid")));
            }
        }
        Ok(())
    }
}

/// CDF values `#{obs <= g} / (n + 1)` at each grid point.
///
/// Support bounds are the sample extremes; when a grid point reaches or
/// passes an extreme, the bound moves half a grid spacing past that point.
pub fn empirical_marginals(columns: &[Vec<f64>], names: &[String], grid: Grid) -> Result<MarginalSummary> {
    grid.validate()?;
    if columns.len() != grid.points.len() || names.len() != columns.len() {
        return Err(Error::Dimension("columns, names and grid disagree on dimension".into()));
    }
    let mut cdf_values = Vec::with_capacity(columns.len());
    let mut support_bounds = Vec::with_capacity(columns.len());
    for ((col, pts), name) in columns.iter().zip(&grid.points).zip(names) {
        if col.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut sorted = col.clone();
        sorted.sort_by(f64::total_cmp);
        let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
        if !(max > min) {
            return Err(Error::ConstantCovariate(name.clone()));
        }
        let denom = sorted.len() as f64 + 1.0;
        cdf_values.push(
            pts.iter()
                .map(|&g| sorted.partition_point(|&v| v <= g) as f64 / denom)
                .collect(),
        );
        let m = pts.len();
        let lower = if pts[0] <= min { pts[0] - 0.5 * (pts[1] - pts[0]) } else { min };
        let upper = if pts[m - 1] >= max { pts[m - 1] + 0.5 * (pts[m - 1] - pts[m - 2]) } else { max };
        support_bounds.push((lower, upper));
    }
    Ok(MarginalSummary {
        grid,
        cdf_values,
        support_bounds,
    })
}

/// Monotone piecewise-linear CDF through `(lower, 0)`, the grid knots and
/// `(upper, 1)`; its density is the piecewise-constant slope.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatedCdf {
    xs: Vec<f64>,
    fs: Vec<f64>,
    density_floor: f64,
}

pub const DENSITY_FLOOR: f64 = 1e-8;

/// Rebuilds covariate `k` of a marginal summary as a callable CDF/density.
pub fn interpolate_cdf(summary: &MarginalSummary, k: usize, density_floor: f64) -> InterpolatedCdf {
    let pts = &summary.grid.points[k];
    let vals = &summary.cdf_values[k];
    let (lo, hi) = summary.support_bounds[k];
    let mut xs = Vec::with_capacity(pts.len() + 2);
    let mut fs = Vec::with_capacity(pts.len() + 2);
    xs.push(lo);
    fs.push(0.0);
    xs.extend_from_slice(pts);
    fs.extend_from_slice(vals);
    xs.push(hi);
    fs.push(1.0);
    InterpolatedCdf { xs, fs, density_floor }
}

impl InterpolatedCdf {
    pub fn support(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    fn segment(&self, x: f64) -> usize {
        (self.xs.partition_point(|&v| v <= x) - 1).min(self.xs.len() - 2)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        let i = self.segment(x);
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let (f0, f1) = (self.fs[i], self.fs[i + 1]);
        f0 + (x - x0) / (x1 - x0) * (f1 - f0)
    }

    /// Slope of the segment containing `x`, floored inside the support and
    /// zero outside it.
    pub fn pdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if !(x >= lo && x <= hi) {
            return 0.0;
        }
        // Segments are (x_i, x_{i+1}] here: the CDF step at a knot counts the
        // observations sitting on it, so a point on a knot takes the slope of
        // the segment that ends there.
        let i = self.xs.partition_point(|&v| v < x).clamp(1, self.xs.len() - 1) - 1;
        let slope = (self.fs[i + 1] - self.fs[i]) / (self.xs[i + 1] - self.xs[i]);
        slope.max(self.density_floor)
    }

    /// Inverse CDF, used by the synthetic sampler.
    pub fn quantile(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.xs[0];
        }
        if u >= 1.0 {
            return self.xs[self.xs.len() - 1];
        }
        let j = self.fs.partition_point(|&f| f < u).max(1);
        let (f0, f1) = (self.fs[j - 1], self.fs[j]);
        let (x0, x1) = (self.xs[j - 1], self.xs[j]);
        if f1 > f0 {
            x0 + (u - f0) / (f1 - f0) * (x1 - x0)
        } else {
            x1
        }
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.fs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str) -> Vec<String> {
        vec![name.to_string()]
    }

    fn grid(points: Vec<f64>) -> Grid {
        Grid {
            scheme: GridScheme::Quantile,
            points: vec![points],
        }
    }

    #[test]
    fn rank_count_with_n_plus_one_denominator() {
        let s = empirical_marginals(&[vec![1.0, 2.0, 3.0, 4.0]], &one("a"), grid(vec![2.5, 3.5])).unwrap();
        assert_eq!(s.cdf_values[0][0], 0.4);
        assert_eq!(s.cdf_values[0][1], 0.6);
        assert_eq!(s.support_bounds[0], (1.0, 4.0));
    }

    #[test]
    fn grid_below_minimum_counts_zero() {
        let s = empirical_marginals(&[vec![1.0, 2.0, 3.0, 4.0]], &one("a"), grid(vec![0.0, 2.0])).unwrap();
        assert_eq!(s.cdf_values[0][0], 0.0);
        assert_eq!(s.support_bounds[0], (-1.0, 4.0));
        s.validate().unwrap();
    }

    #[test]
    fn constant_covariate_named() {
        match empirical_marginals(&[vec![2.0; 5]], &one("x7"), grid(vec![1.0, 3.0])) {
            Err(Error::ConstantCovariate(n)) => assert_eq!(n, "x7"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            empirical_marginals(&[vec![]], &one("x"), grid(vec![1.0, 3.0])),
            Err(Error::EmptySample)
        ));
    }

    #[test]
    fn interpolation_hits_knots_and_midpoints() {
        let s = empirical_marginals(&[vec![1.0, 2.0, 3.0, 4.0]], &one("a"), grid(vec![2.5, 3.5])).unwrap();
        let f = interpolate_cdf(&s, 0, DENSITY_FLOOR);
        assert_eq!(f.cdf(2.5), 0.4);
        assert_eq!(f.cdf(3.5), 0.6);
        assert!((f.cdf(3.0) - 0.5).abs() < 1e-15);
        assert_eq!(f.cdf(1.0), 0.0);
        assert_eq!(f.cdf(4.0), 1.0);
        assert_eq!(f.pdf(5.0), 0.0);
    }

    #[test]
    fn density_telescopes_to_one() {
        let col: Vec<f64> = (0..257).map(|i| ((i * 37) % 257) as f64 / 7.0 + (i as f64).sqrt()).collect();
        let g = Grid::from_sample(&[col.clone()], &one("a"), 40, GridScheme::Quantile).unwrap();
        let s = empirical_marginals(&[col], &one("a"), g).unwrap();
        let f = interpolate_cdf(&s, 0, DENSITY_FLOOR);
        let (xs, _) = f.knots();
        let total: f64 = xs.windows(2).map(|w| f.pdf(0.5 * (w[0] + w[1])) * (w[1] - w[0])).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let s = empirical_marginals(&[vec![1.0, 2.0, 3.0, 4.0, 7.0]], &one("a"), grid(vec![1.5, 2.5, 5.0])).unwrap();
        let f = interpolate_cdf(&s, 0, DENSITY_FLOOR);
        for &u in &[0.05, 0.2, 0.33, 0.5, 0.9, 0.99] {
            assert!((f.cdf(f.quantile(u)) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn quantile_grid_is_interior_and_increasing() {
        let col: Vec<f64> = (0..50).map(|i| (i as f64).powi(2)).collect();
        let g = Grid::from_sample(&[col], &one("a"), 100, GridScheme::Quantile).unwrap();
        g.validate().unwrap();
        assert!(g.points[0][0] > 0.0 && *g.points[0].last().unwrap() < 49.0 * 49.0);
    }

    #[test]
    fn sample_points_never_sit_in_flat_segments() {
        // n = m + 2 puts every grid point on an order statistic.
        for n in [52usize, 102, 202] {
            let col: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64 / n as f64 + 0.013 * i as f64).collect();
            let g = Grid::from_sample(&[col.clone()], &one("a"), n - 2, GridScheme::Quantile).unwrap();
            let s = empirical_marginals(&[col.clone()], &one("a"), g).unwrap();
            let f = interpolate_cdf(&s, 0, DENSITY_FLOOR);
            for &x in &col {
                assert!(f.pdf(x) > 1e-3, "n={n} x={x} pdf={}", f.pdf(x));
            }
        }
    }

    #[test]
    fn knot_takes_slope_of_segment_ending_there() {
        // Second segment is flat: no observation in (2, 2.5].
        let s = empirical_marginals(&[vec![1.0, 2.0, 3.0, 4.0]], &one("a"), grid(vec![2.0, 2.5, 3.5])).unwrap();
        let f = interpolate_cdf(&s, 0, DENSITY_FLOOR);
        assert_eq!(s.cdf_values[0][0], s.cdf_values[0][1]);
        assert!(f.pdf(2.0) > 0.1);
        assert_eq!(f.pdf(2.2), DENSITY_FLOOR);
    }
}
