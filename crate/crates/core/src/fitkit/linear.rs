use serde::Serialize;

use super::FitError;

/// Weighted straight-line fit y = intercept + slope·x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_err: f64,
    pub intercept_err: f64,
    /// cov(slope, intercept)
    pub covariance: f64,
    pub chi2: f64,
    pub dof: usize,
}

/// Closed-form weighted least squares over (x, y, σ) points. Standard
/// errors assume the σ are absolute.
pub fn linear_fit(points: &[(f64, f64, f64)]) -> Result<LinearFit, FitError> {
    if points.len() < 2 {
        return Err(FitError::DegenerateAbscissa);
    }
    if points.iter().any(|&(x, y, s)| !(s > 0.0) || !x.is_finite() || !y.is_finite() || !s.is_finite()) {
        return Err(FitError::InvalidProblem("points must be finite with σ > 0".into()));
    }
    let (mut s, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for &(x, y, sigma) in points {
        let w = 1.0 / (sigma * sigma);
        s += w;
        sx += w * x;
        sy += w * y;
    }
    let x_mean = sx / s;
    // Centered sums avoid cancellation in the determinant.
    let (mut stt, mut sty) = (0.0, 0.0);
    for &(x, y, sigma) in points {
        let w = 1.0 / (sigma * sigma);
        let t = x - x_mean;
        stt += w * t * t;
        sty += w * t * y;
    }
    let spread = points.iter().map(|p| (p.0 - x_mean).abs()).fold(0.0, f64::max);
    if stt <= 0.0 || spread <= 1e-14 * x_mean.abs().max(f64::MIN_POSITIVE) {
        return Err(FitError::DegenerateAbscissa);
    }
    let slope = sty / stt;
    let intercept = (sy - slope * sx) / s;
    let slope_var = 1.0 / stt;
    let intercept_var = 1.0 / s + x_mean * x_mean / stt;
    let covariance = -x_mean / stt;
    let chi2 = points
        .iter()
        .map(|&(x, y, sigma)| ((y - intercept - slope * x) / sigma).powi(2))
        .sum();
    Ok(LinearFit {
        slope,
        intercept,
        slope_err: slope_var.sqrt(),
        intercept_err: intercept_var.sqrt(),
        covariance,
        chi2,
        dof: points.len() - 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn exact_line_is_recovered() {
        let pts: Vec<_> = (0..8).map(|i| {
            let t = i as f64 * 1e-3;
            (t, 0.1 + 1700.0 * t, 0.05)
        }).collect();
        let fit = linear_fit(&pts).unwrap();
        assert!((fit.slope - 1700.0).abs() < 1e-9);
        assert!((fit.intercept - 0.1).abs() < 1e-12);
        assert!(fit.chi2 < 1e-20);
    }

    #[test]
    fn duplicate_x_is_degenerate() {
        let pts = [(1.0, 2.0, 0.1), (1.0, 3.0, 0.1), (1.0, 2.5, 0.2)];
        assert_eq!(linear_fit(&pts), Err(FitError::DegenerateAbscissa));
        assert_eq!(linear_fit(&pts[..1]), Err(FitError::DegenerateAbscissa));
    }

    #[test]
    fn heteroscedastic_matches_normal_equations() {
        let pts: Vec<(f64, f64, f64)> = (0..12)
            .map(|i| {
                let x = 0.3 * i as f64 - 1.0;
                let y = 2.0 - 0.7 * x + 0.05 * ((i * 7 % 5) as f64 - 2.0);
                (x, y, 0.02 + 0.01 * (i % 4) as f64)
            })
            .collect();
        // (AᵀWA) β = AᵀWy with A = [1, x]
        let a = DMatrix::from_fn(pts.len(), 2, |r, c| if c == 0 { 1.0 } else { pts[r].0 });
        let w = DMatrix::from_diagonal(&DVector::from_iterator(pts.len(), pts.iter().map(|p| p.2.powi(-2))));
        let y = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
        let normal = a.transpose() * &w * &a;
        let inv = normal.clone().try_inverse().unwrap();
        let beta = &inv * a.transpose() * &w * y;

        let fit = linear_fit(&pts).unwrap();
        assert!((fit.intercept - beta[0]).abs() < 1e-10);
        assert!((fit.slope - beta[1]).abs() < 1e-10);
        assert!((fit.intercept_err - inv[(0, 0)].sqrt()).abs() < 1e-10);
        assert!((fit.slope_err - inv[(1, 1)].sqrt()).abs() < 1e-10);
        assert!((fit.covariance - inv[(0, 1)]).abs() < 1e-10);
    }
}
