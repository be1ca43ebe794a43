//! Graph-scale driven embedding dimensions.
//!
//! The optimal parameter count `P` grows logarithmically with the triple count
//! `N`: `P = a * log_b(N)`. Since `a / ln b` is a single degree of freedom the fit
//! fixes `b = e` and solves for `a` by least squares. A dimension target then
//! follows from `P = d * (|E| + |R|)`, and a piecewise rule moves the current
//! dimension toward it without ever shrinking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `P = a * log_b(N)`, with a relative confidence band of `band` around the
/// prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleFit {
    pub a: f64,
    pub b: f64,
    pub band: f64,
    /// Root-mean-square residual of the fit in parameter units, when known.
    pub rms: Option<f64>,
}

/// Calibrated on the cumulative statistics of the seven standard continual KG
/// benchmarks with every snapshot at dimension 200 (see [`BENCHMARK_STATS`]).
pub const DEFAULT_SCALE_A: f64 = 183_439.67;
pub const DEFAULT_BAND: f64 = 0.2;
pub const REFERENCE_DIM: usize = 200;

impl Default for ScaleFit {
    fn default() -> Self {
        Self {
            a: DEFAULT_SCALE_A,
            b: std::f64::consts::E,
            band: DEFAULT_BAND,
            rms: None,
        }
    }
}

impl ScaleFit {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 1.0 && (0.0..1.0).contains(&self.band)) {
            return Err(Error::Config(format!(
                "scale fit needs a > 0, b > 1, 0 <= band < 1 (got a={}, b={}, band={})",
                self.a, self.b, self.band
            )));
        }
        Ok(())
    }

    /// Predicted parameter count for `n` triples.
    pub fn parameters(&self, n: f64) -> f64 {
        self.a * n.ln() / self.b.ln()
    }
}

/// `(y_min, y, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimBounds {
    pub min: usize,
    pub target: usize,
    pub max: usize,
}

impl DimBounds {
    pub fn new(min: usize, target: usize, max: usize) -> Result<Self> {
        if !(1 <= min && min <= target && target <= max) {
            return Err(Error::InvalidArgument(format!(
                "dimension bounds must satisfy 1 <= min <= target <= max, got ({min}, {target}, {max})"
            )));
        }
        Ok(Self { min, target, max })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimPolicy {
    /// Growth factor for severely undersized dimensions.
    pub r: f64,
    /// Fixed increment inside the upper half of the band.
    pub step: usize,
}

impl Default for DimPolicy {
    fn default() -> Self {
        Self { r: 1.25, step: 10 }
    }
}

impl DimPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 1.0 && self.step >= 1) {
            return Err(Error::Config(format!(
                "dimension policy needs r > 1 and step >= 1 (got r={}, step={})",
                self.r, self.step
            )));
        }
        Ok(())
    }
}

fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Least-squares fit of `P = a ln N` through `(N, P)` points.
pub fn fit_scale_curve(points: &[(f64, f64)], band: f64) -> Result<ScaleFit> {
    if points.len() < 2 {
        return Err(Error::InsufficientPoints(points.len()));
    }
    if let Some(&(n, p)) = points.iter().find(|&&(n, p)| !(n > 1.0 && p > 0.0 && n.is_finite() && p.is_finite())) {
        return Err(Error::DegenerateInput(format!(
            "every point needs N > 1 and P > 0, got ({n}, {p})"
        )));
    }
    let first = points[0].0;
    if points.iter().all(|&(n, _)| n == first) {
        return Err(Error::DegenerateInput("all points share the same N".into()));
    }
    let (sxy, sxx) = points.iter().fold((0.0, 0.0), |(sxy, sxx), &(n, p)| {
        let x = n.ln();
        (sxy + x * p, sxx + x * x)
    });
    let a = sxy / sxx;
    let sse: f64 = points
        .iter()
        .map(|&(n, p)| (p - a * n.ln()).powi(2))
        .sum();
    let fit = ScaleFit {
        a,
        b: std::f64::consts::E,
        band,
        rms: Some((sse / points.len() as f64).sqrt()),
    };
    fit.validate()?;
    Ok(fit)
}

/// Dimension bounds implied by the fit for `n` triples spread over `rowcount`
/// entity + relation rows.
pub fn predict_bounds(fit: &ScaleFit, n: usize, rowcount: usize) -> DimBounds {
    let raw = fit.parameters(n as f64) / rowcount.max(1) as f64;
    let target = round_half_up(raw).max(1.0);
    let min = round_half_up(target * (1.0 - fit.band)).max(1.0);
    let max = round_half_up(target * (1.0 + fit.band)).max(target);
    DimBounds {
        min: min as usize,
        target: target as usize,
        max: max as usize,
    }
}

/// Which arm of the update rule fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DimBranch {
    /// `r * d <= y_min`: multiplicative growth.
    Scale,
    /// `y_min / r < d <= y_min`: jump to the band floor.
    Floor,
    /// `y_min < d <= y`: jump to the target.
    Target,
    /// `y < d <= y_max`: fixed step.
    Step,
    /// `d > y_max`: hold.
    Hold,
}

/// Piecewise dimension update, first match wins. The trailing "otherwise ->
/// y_max" arm of the original rule is unreachable because these five cases
/// already cover every `d >= 1`.
pub fn update_dimension_traced(d: usize, bounds: &DimBounds, policy: &DimPolicy) -> (usize, DimBranch) {
    let scaled = policy.r * d as f64;
    if scaled <= bounds.min as f64 {
        (round_half_up(scaled) as usize, DimBranch::Scale)
    } else if d <= bounds.min {
        (bounds.min, DimBranch::Floor)
    } else if d <= bounds.target {
        (bounds.target, DimBranch::Target)
    } else if d <= bounds.max {
        (d + policy.step, DimBranch::Step)
    } else {
        (d, DimBranch::Hold)
    }
}

pub fn update_dimension(d: usize, bounds: &DimBounds, policy: &DimPolicy) -> usize {
    update_dimension_traced(d, bounds, policy).0
}

/// Cumulative `(N_E, N_R, N_T)` per snapshot of the seven standard continual KG
/// benchmarks. `N_T` is the number of triples added at that snapshot.
pub const BENCHMARK_STATS: [(&str, [(usize, usize, usize); 5]); 7] = [
    ("ENTITY", [(2909, 233, 46388), (5817, 236, 72111), (8275, 236, 73785), (11633, 237, 70506), (14541, 237, 47326)]),
    ("RELATION", [(11560, 48, 98819), (13343, 96, 93535), (13754, 143, 66136), (14387, 190, 30032), (14541, 237, 21594)]),
    ("FACT", [(10513, 237, 62024), (12779, 237, 62023), (13586, 237, 62023), (13894, 237, 62023), (14541, 237, 62023)]),
    ("HYBRID", [(8628, 86, 57561), (10040, 102, 20873), (12779, 151, 88017), (14393, 209, 103339), (14541, 237, 40326)]),
    ("GraphEqual", [(2908, 226, 57636), (5816, 235, 62023), (8724, 237, 62023), (11632, 237, 62023), (14541, 237, 66411)]),
    ("GraphHigher", [(900, 197, 10000), (1838, 221, 20000), (3714, 234, 40000), (7467, 237, 80000), (14541, 237, 160116)]),
    ("GraphLower", [(7505, 237, 160000), (11258, 237, 80000), (13134, 237, 40000), (14072, 237, 20000), (14541, 237, 10116)]),
];

/// `(cumulative N_T, dim * (N_E + N_R))` points for one dataset's snapshot
/// statistics, one dimension per snapshot.
pub fn scale_points(stats: &[(usize, usize, usize)], dims: &[usize]) -> Vec<(f64, f64)> {
    let mut total = 0usize;
    stats
        .iter()
        .zip(dims)
        .map(|(&(ne, nr, nt), &d)| {
            total += nt;
            (total as f64, (d * (ne + nr)) as f64)
        })
        .collect()
}

/// All benchmark snapshots at a single reference dimension.
pub fn benchmark_points(dim: usize) -> Vec<(f64, f64)> {
    BENCHMARK_STATS
        .iter()
        .flat_map(|(_, stats)| scale_points(stats, &[dim; 5]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const E: f64 = std::f64::consts::E;

    #[test]
    fn exact_log_data_fits_with_zero_residual() {
        let pts: Vec<_> = [3.0, 10.0, 100.0, 5000.0].iter().map(|&n: &f64| (n, 5.0 * n.ln())).collect();
        let fit = fit_scale_curve(&pts, 0.2).unwrap();
        assert!((fit.a - 5.0).abs() < 1e-12);
        assert_eq!(fit.b, E);
        assert!(fit.rms.unwrap() < 1e-12);
    }

    #[test]
    fn two_point_hand_solution() {
        // x = (1, 2), P = (5, 10): a = (5 + 20) / (1 + 4) = 5.
        let fit = fit_scale_curve(&[(E, 5.0), (E * E, 10.0)], 0.2).unwrap();
        assert!((fit.a - 5.0).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(fit_scale_curve(&[(10.0, 1.0)], 0.2), Err(Error::InsufficientPoints(1))));
        assert!(matches!(
            fit_scale_curve(&[(10.0, 1.0), (10.0, 2.0)], 0.2),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            fit_scale_curve(&[(1.0, 1.0), (10.0, 2.0)], 0.2),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn default_a_matches_benchmark_calibration() {
        let fit = fit_scale_curve(&benchmark_points(REFERENCE_DIM), DEFAULT_BAND).unwrap();
        assert!((fit.a - DEFAULT_SCALE_A).abs() < 0.01, "a = {}", fit.a);
        assert!(fit.rms.is_some_and(|r| r.is_finite() && r > 0.0));
    }

    #[test]
    fn zero_band_collapses_bounds() {
        let fit = ScaleFit { a: 1000.0, b: E, band: 0.0, rms: None };
        let b = predict_bounds(&fit, 5000, 100);
        assert_eq!(b.min, b.target);
        assert_eq!(b.target, b.max);
    }

    #[test]
    fn band_arithmetic() {
        // a chosen so that a ln N / rows = 150.
        let (n, rows) = (1000usize, 10usize);
        let fit = ScaleFit { a: 150.0 * rows as f64 / (n as f64).ln(), b: E, band: 0.2, rms: None };
        assert_eq!(predict_bounds(&fit, n, rows), DimBounds { min: 120, target: 150, max: 180 });
    }

    #[test]
    fn tiny_parameter_budget_clamps_to_one() {
        let fit = ScaleFit { a: 1.0, b: E, band: 0.2, rms: None };
        assert_eq!(predict_bounds(&fit, 100, 1_000_000), DimBounds { min: 1, target: 1, max: 1 });
    }

    #[test]
    fn piecewise_examples() {
        let b = DimBounds::new(100, 150, 200).unwrap();
        let p = DimPolicy { r: 1.25, step: 10 };
        assert_eq!(update_dimension_traced(40, &b, &p), (50, DimBranch::Scale));
        assert_eq!(update_dimension_traced(90, &b, &p), (100, DimBranch::Floor));
        assert_eq!(update_dimension_traced(120, &b, &p), (150, DimBranch::Target));
        assert_eq!(update_dimension_traced(160, &b, &p), (170, DimBranch::Step));
        assert_eq!(update_dimension_traced(250, &b, &p), (250, DimBranch::Hold));
    }

    #[test]
    fn bounds_validation() {
        assert!(DimBounds::new(0, 1, 1).is_err());
        assert!(DimBounds::new(3, 2, 4).is_err());
        assert!(DimBounds::new(1, 1, 1).is_ok());
    }
}
