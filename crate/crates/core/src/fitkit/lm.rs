use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use super::FitError;

/// Relative forward-difference step for Jacobians.
const REL_STEP: f64 = 1e-6;
const INITIAL_LAMBDA: f64 = 1e-3;
const LAMBDA_FACTOR: f64 = 10.0;
const MAX_LAMBDA: f64 = 1e16;
/// Smallest eigenvalue of the scaled normal matrix treated as non-singular.
const SINGULAR_EIGENVALUE: f64 = 1e-13;

type Model<'a> = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync + 'a;

/// Weighted nonlinear least-squares problem. The model maps a parameter
/// vector to predictions aligned with `observed`.
pub struct FitProblem<'a> {
    model: Box<Model<'a>>,
    observed: Vec<f64>,
    sigma: Vec<f64>,
    initial: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    names: Vec<String>,
    max_iterations: usize,
    tolerance: f64,
}

impl<'a> FitProblem<'a> {
    pub fn new<F>(model: F, observed: Vec<f64>, sigma: Vec<f64>, initial: Vec<f64>) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'a,
    {
        let n = initial.len();
        Self {
            model: Box::new(model),
            observed,
            sigma,
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); n],
            names: (0..n).map(|i| format!("p{i}")).collect(),
            initial,
            max_iterations: 200,
            tolerance: 1e-10,
        }
    }

    /// Scalar model y = f(params, x) evaluated at every abscissa.
    pub fn pointwise<F>(f: F, data: &[(f64, f64, f64)], initial: Vec<f64>) -> Self
    where
        F: Fn(&[f64], f64) -> f64 + Send + Sync + 'a,
    {
        let xs: Vec<f64> = data.iter().map(|d| d.0).collect();
        let model = move |p: &[f64]| xs.iter().map(|&x| f(p, x)).collect();
        Self::new(
            model,
            data.iter().map(|d| d.1).collect(),
            data.iter().map(|d| d.2).collect(),
            initial,
        )
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn with_names<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.names = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    fn validate(&self) -> Result<(), FitError> {
        let n = self.initial.len();
        if self.observed.is_empty() || n == 0 {
            return Err(FitError::InvalidProblem("need data and at least one parameter".into()));
        }
        if self.sigma.len() != self.observed.len() {
            return Err(FitError::InvalidProblem("σ and data lengths differ".into()));
        }
        if self.observed.len() < n {
            return Err(FitError::InvalidProblem(format!(
                "{} observations cannot determine {} parameters",
                self.observed.len(),
                n
            )));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(FitError::InvalidProblem("all σ must be positive and finite".into()));
        }
        if self.observed.iter().any(|y| !y.is_finite()) {
            return Err(FitError::InvalidProblem("observations must be finite".into()));
        }
        if self.bounds.len() != n || self.names.len() != n {
            return Err(FitError::InvalidProblem("bounds/names do not match parameter count".into()));
        }
        if self.bounds.iter().any(|(lo, hi)| !(lo <= hi)) {
            return Err(FitError::InvalidProblem("lower bound above upper bound".into()));
        }
        Ok(())
    }

    fn clamp(&self, p: &mut [f64]) {
        for (v, &(lo, hi)) in p.iter_mut().zip(&self.bounds) {
            *v = v.clamp(lo, hi);
        }
    }

    /// Weighted residuals (y − f)/σ, or `None` if the model is not finite.
    fn residuals(&self, p: &[f64]) -> Option<DVector<f64>> {
        let pred = (self.model)(p);
        if pred.len() != self.observed.len() || pred.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(DVector::from_iterator(
            pred.len(),
            pred.iter().zip(&self.observed).zip(&self.sigma).map(|((f, y), s)| (y - f) / s),
        ))
    }

    fn step_size(&self, j: usize, value: f64) -> f64 {
        let typical = if self.initial[j] != 0.0 { self.initial[j].abs() } else { 1.0 };
        let h = REL_STEP * value.abs().max(typical);
        let (lo, hi) = self.bounds[j];
        if value + h > hi && value - h >= lo { -h } else { h }
    }

    /// Forward-difference Jacobian of the weighted model, d(f/σ)/dp.
    pub fn jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        let base = (self.model)(p);
        let m = base.len();
        let columns: Vec<Option<Vec<f64>>> = (0..p.len())
            .into_par_iter()
            .map(|j| {
                let mut q = p.to_vec();
                let h = self.step_size(j, p[j]);
                q[j] += h;
                let shifted = (self.model)(&q);
                if shifted.len() != m {
                    return None;
                }
                let col: Vec<f64> = shifted
                    .iter()
                    .zip(&base)
                    .zip(&self.sigma)
                    .map(|((a, b), s)| (a - b) / (h * s))
                    .collect();
                col.iter().all(|v| v.is_finite()).then_some(col)
            })
            .collect();
        let mut jac = DMatrix::zeros(m, p.len());
        for (j, col) in columns.into_iter().enumerate() {
            jac.set_column(j, &DVector::from_vec(col?));
        }
        Some(jac)
    }

    /// Central-difference Jacobian; used to validate the forward scheme.
    pub fn central_jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        let m = self.observed.len();
        let mut jac = DMatrix::zeros(m, p.len());
        for j in 0..p.len() {
            let h = self.step_size(j, p[j]).abs();
            let mut plus = p.to_vec();
            let mut minus = p.to_vec();
            plus[j] += h;
            minus[j] -= h;
            let (fp, fm) = ((self.model)(&plus), (self.model)(&minus));
            for i in 0..m {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h * self.sigma[i]);
            }
        }
        jac.iter().all(|v| v.is_finite()).then_some(jac)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Convergence {
    /// Residual vector orthogonal to the Jacobian columns.
    Gradient,
    /// Parameter update below tolerance.
    Step,
    /// Relative chi-square change below tolerance.
    ChiSquare,
    /// Damping saturated without further reduction.
    NoFurtherReduction,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: Vec<f64>,
    pub names: Vec<String>,
    /// Reduced-chi-square-scaled inverse of JᵀWJ.
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub reduced_chi2: f64,
    pub dof: usize,
    pub iterations: usize,
    pub convergence: Convergence,
}

impl FitReport {
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.params.len()).map(|i| self.covariance[(i, i)].max(0.0).sqrt()).collect()
    }
}

/// Bounded Levenberg–Marquardt with multiplicative damping (×10 / ÷10,
/// λ₀ = 10⁻³) and Marquardt diagonal scaling.
pub fn lm_fit(problem: &FitProblem<'_>) -> Result<FitReport, FitError> {
    problem.validate()?;
    let n = problem.initial.len();
    let tol = problem.tolerance;

    let mut p = problem.initial.clone();
    problem.clamp(&mut p);
    let mut r = problem.residuals(&p).ok_or(FitError::NonFiniteModel)?;
    let mut chi2 = r.norm_squared();
    let mut lambda = INITIAL_LAMBDA;
    let mut convergence = None;
    let mut iterations = 0;

    while iterations < problem.max_iterations {
        iterations += 1;
        if chi2 == 0.0 {
            convergence = Some(Convergence::Gradient);
            break;
        }
        let jac = problem.jacobian(&p).ok_or(FitError::NonFiniteModel)?;
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * &r;

        let grad_cos = (0..n)
            .map(|j| {
                let d = a[(j, j)].sqrt() * chi2.sqrt();
                if d > 0.0 { g[j].abs() / d } else { 0.0 }
            })
            .fold(0.0, f64::max);
        if grad_cos < tol {
            convergence = Some(Convergence::Gradient);
            break;
        }

        let mut accepted = None;
        while lambda <= MAX_LAMBDA {
            let mut damped = a.clone();
            for j in 0..n {
                damped[(j, j)] += lambda * a[(j, j)].max(1e-30);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= LAMBDA_FACTOR;
                continue;
            };
            let delta = chol.solve(&g);
            let mut trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            problem.clamp(&mut trial);
            match problem.residuals(&trial) {
                Some(rt) if rt.norm_squared() < chi2 => {
                    lambda = (lambda / LAMBDA_FACTOR).max(1e-12);
                    accepted = Some((trial, rt));
                    break;
                }
                _ => lambda *= LAMBDA_FACTOR,
            }
        }

        let Some((trial, rt)) = accepted else {
            convergence = Some(Convergence::NoFurtherReduction);
            break;
        };
        let chi2_new = rt.norm_squared();
        let step_small = trial
            .iter()
            .zip(&p)
            .zip(&problem.initial)
            .all(|((t, old), init)| (t - old).abs() <= tol * (old.abs() + init.abs() + tol));
        let chi_small = chi2 - chi2_new <= 1e-4 * tol * chi2;
        p = trial;
        r = rt;
        chi2 = chi2_new;
        if step_small {
            convergence = Some(Convergence::Step);
            break;
        }
        if chi_small {
            convergence = Some(Convergence::ChiSquare);
            break;
        }
    }

    let Some(convergence) = convergence else {
        return Err(FitError::MaxIterations { iterations, chi2, params: p });
    };

    let m = problem.observed.len();
    let dof = m - n;
    let reduced_chi2 = if dof > 0 { chi2 / dof as f64 } else { 1.0 };
    let jac = problem.jacobian(&p).ok_or(FitError::NonFiniteModel)?;
    let a = jac.transpose() * &jac;
    let covariance = invert_normal(&a, &problem.names)? * reduced_chi2;

    Ok(FitReport {
        params: p,
        names: problem.names.clone(),
        covariance,
        chi2,
        reduced_chi2,
        dof,
        iterations,
        convergence,
    })
}

/// Inverse of a symmetric normal matrix through its diagonally scaled
/// eigendecomposition; near-null directions name the parameters involved.
fn invert_normal(a: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>, FitError> {
    let n = a.nrows();
    let zero: Vec<&str> = (0..n).filter(|&j| !(a[(j, j)] > 0.0)).map(|j| names[j].as_str()).collect();
    if !zero.is_empty() {
        return Err(FitError::Singular { hint: format!("model insensitive to {}", zero.join(", ")) });
    }
    let d: Vec<f64> = (0..n).map(|j| a[(j, j)].sqrt()).collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (d[i] * d[j]));
    let eig = SymmetricEigen::new(scaled);
    let (imin, &lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("n >= 1");
    if !(lmin > SINGULAR_EIGENVALUE) {
        let v = eig.eigenvectors.column(imin);
        let involved: Vec<&str> = (0..n).filter(|&j| v[j].abs() > 0.3).map(|j| names[j].as_str()).collect();
        return Err(FitError::Singular {
            hint: format!("degenerate combination of {} (eigenvalue {lmin:.2e})", involved.join(", ")),
        });
    }
    let inv_eigs = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    let scaled_inv = &eig.eigenvectors * inv_eigs * eig.eigenvectors.transpose();
    let mut cov = DMatrix::from_fn(n, n, |i, j| scaled_inv[(i, j)] / (d[i] * d[j]));
    cov = 0.5 * (&cov + cov.transpose());
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_data() -> Vec<(f64, f64, f64)> {
        (0..20)
            .map(|i| {
                let x = -1.0 + 0.1 * i as f64;
                (x, 1.5 - 0.8 * x + 2.25 * x * x, 0.01)
            })
            .collect()
    }

    #[test]
    fn quadratic_recovered_quickly() {
        let data = quadratic_data();
        let problem = FitProblem::pointwise(|p, x| p[0] + p[1] * x + p[2] * x * x, &data, vec![0.0, 0.0, 1.0]);
        let fit = lm_fit(&problem).unwrap();
        assert!(fit.iterations <= 5, "iterations = {}", fit.iterations);
        for (got, want) in fit.params.iter().zip([1.5, -0.8, 2.25]) {
            assert!((got - want).abs() < 1e-7, "{got} vs {want}");
        }
    }

    #[test]
    fn rosenbrock_valley() {
        // r = (10(p1 − p0²), 1 − p0); minimum at (1, 1) from the classic start (−1.2, 1).
        let problem = FitProblem::new(
            |p: &[f64]| vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![-1.2, 1.0],
        );
        let fit = lm_fit(&problem).unwrap();
        assert!((fit.params[0] - 1.0).abs() < 1e-6);
        assert!((fit.params[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nan_model_is_rejected_up_front() {
        let data = quadratic_data();
        let problem = FitProblem::pointwise(|_, _| f64::NAN, &data, vec![0.0]);
        assert_eq!(lm_fit(&problem).unwrap_err(), FitError::NonFiniteModel);
    }

    #[test]
    fn bounds_are_respected() {
        let data = quadratic_data();
        let problem = FitProblem::pointwise(|p, x| p[0] + p[1] * x + p[2] * x * x, &data, vec![0.0, 0.0, 0.5])
            .with_bounds(vec![(0.0, 1.0), (-10.0, 10.0), (0.0, 2.0)]);
        let fit = lm_fit(&problem).unwrap();
        for (v, (lo, hi)) in fit.params.iter().zip([(0.0, 1.0), (-10.0, 10.0), (0.0, 2.0)]) {
            assert!(*v >= lo && *v <= hi);
        }
        assert!((fit.params[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_columns_are_singular() {
        let data = quadratic_data();
        let problem = FitProblem::pointwise(|p, x| (p[0] + p[1]) * x, &data, vec![0.5, 0.5]).with_names(["a", "b"]);
        match lm_fit(&problem) {
            Err(FitError::Singular { hint }) => assert!(hint.contains('a') && hint.contains('b')),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn iteration_cap_reported() {
        let problem = FitProblem::new(
            |p: &[f64]| vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![-1.2, 1.0],
        )
        .with_max_iterations(2);
        assert!(matches!(lm_fit(&problem), Err(FitError::MaxIterations { iterations: 2, .. })));
    }

    #[test]
    fn covariance_symmetric_psd() {
        let data: Vec<_> = quadratic_data()
            .into_iter()
            .enumerate()
            .map(|(i, (x, y, s))| (x, y + 0.01 * ((i * 37 % 11) as f64 - 5.0) / 5.0, s))
            .collect();
        let problem = FitProblem::pointwise(|p, x| p[0] + p[1] * x + p[2] * x * x, &data, vec![1.0, 0.0, 1.0]);
        let fit = lm_fit(&problem).unwrap();
        let c = &fit.covariance;
        assert_eq!(c, &c.transpose());
        assert!(c.clone().symmetric_eigenvalues().iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn forward_jacobian_close_to_central() {
        let data = quadratic_data();
        let problem = FitProblem::pointwise(|p, x| p[0] * (p[1] * x).sin() + p[2], &data, vec![1.0, 2.0, 0.1]);
        let p = [1.3, 1.7, -0.2];
        let fwd = problem.jacobian(&p).unwrap();
        let cen = problem.central_jacobian(&p).unwrap();
        let scale = cen.amax();
        assert!((fwd - cen).amax() <= 1e-4 * scale);
    }
}
