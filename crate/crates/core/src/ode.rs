//! Adaptive Dormand–Prince 5(4) integrator for real or complex state vectors.

use std::ops::{Add, Mul};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub trait OdeScalar: Copy + Add<Output = Self> + Mul<f64, Output = Self> + Send + Sync {
    fn zero() -> Self;
    fn magnitude(&self) -> f64;
}

impl OdeScalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl OdeScalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

/// How the embedded error estimate is measured against the tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorNorm {
    /// RMS of |e_i| / (atol + rtol·|y_i|).
    Mixed,
    /// Σ|e_i| / atol, i.e. twice the total-variation distance for a
    /// probability vector.
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub norm: ErrorNorm,
    pub max_steps: usize,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-9, norm: ErrorNorm::Mixed, max_steps: 1_000_000 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
}

// Dormand–Prince tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

impl Dopri5 {
    pub fn with_tolerance(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, ..Self::default() }
    }

    /// Advances `y` from `t0` to `t1`. `h` carries the step size between
    /// calls; pass 0 to let the integrator pick one.
    pub fn integrate<T, F>(&self, mut rhs: F, t0: f64, t1: f64, y: &mut [T], h: &mut f64) -> Result<StepStats>
    where
        T: OdeScalar,
        F: FnMut(f64, &[T], &mut [T]),
    {
        let mut stats = StepStats::default();
        let span = t1 - t0;
        if span == 0.0 {
            return Ok(stats);
        }
        if span < 0.0 {
            return Err(Error::Integration("backward integration not supported".into()));
        }
        let n = y.len();
        let mut k: [Vec<T>; 7] = std::array::from_fn(|_| vec![T::zero(); n]);
        let mut tmp = vec![T::zero(); n];
        let mut y_new = vec![T::zero(); n];

        if !(*h > 0.0) {
            *h = span / 100.0;
        }
        let mut t = t0;
        rhs(t, y, &mut k[0]);

        while t < t1 {
            if stats.accepted + stats.rejected >= self.max_steps {
                return Err(Error::Integration(format!("step limit {} reached at t = {t:e}", self.max_steps)));
            }
            let last = t + *h >= t1;
            let step = if last { t1 - t } else { *h };
            if step <= f64::EPSILON * t.abs().max(span) {
                return Err(Error::Integration(format!("step size underflow at t = {t:e}")));
            }

            combine(&mut tmp, y, step, &[(A21, &k[0])]);
            rhs(t + C2 * step, &tmp, &mut k[1]);
            combine(&mut tmp, y, step, &[(A31, &k[0]), (A32, &k[1])]);
            rhs(t + C3 * step, &tmp, &mut k[2]);
            combine(&mut tmp, y, step, &[(A41, &k[0]), (A42, &k[1]), (A43, &k[2])]);
            rhs(t + C4 * step, &tmp, &mut k[3]);
            combine(&mut tmp, y, step, &[(A51, &k[0]), (A52, &k[1]), (A53, &k[2]), (A54, &k[3])]);
            rhs(t + C5 * step, &tmp, &mut k[4]);
            combine(&mut tmp, y, step, &[(A61, &k[0]), (A62, &k[1]), (A63, &k[2]), (A64, &k[3]), (A65, &k[4])]);
            rhs(t + step, &tmp, &mut k[5]);
            combine(&mut y_new, y, step, &[(B1, &k[0]), (B3, &k[2]), (B4, &k[3]), (B5, &k[4]), (B6, &k[5])]);
            rhs(t + step, &y_new, &mut k[6]);

            let mut acc = 0.0;
            for i in 0..n {
                let e = (k[0][i] * E1 + k[2][i] * E3 + k[3][i] * E4 + k[4][i] * E5 + k[5][i] * E6 + k[6][i] * E7)
                    * step;
                match self.norm {
                    ErrorNorm::Mixed => {
                        let scale = self.atol + self.rtol * y[i].magnitude().max(y_new[i].magnitude());
                        acc += (e.magnitude() / scale).powi(2);
                    }
                    ErrorNorm::L1 => acc += e.magnitude(),
                }
            }
            let err = match self.norm {
                ErrorNorm::Mixed => (acc / n.max(1) as f64).sqrt(),
                ErrorNorm::L1 => acc / self.atol,
            };
            if !err.is_finite() {
                return Err(Error::Integration(format!("non-finite state at t = {t:e}")));
            }

            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                stats.accepted += 1;
                t = if last { t1 } else { t + step };
                y.copy_from_slice(&y_new);
                k.swap(0, 6);
                if !last || factor < 1.0 {
                    *h = step * factor;
                }
            } else {
                stats.rejected += 1;
                *h = step * factor.min(1.0);
            }
        }
        Ok(stats)
    }
}

fn combine<T: OdeScalar>(out: &mut [T], y: &[T], h: f64, terms: &[(f64, &Vec<T>)]) {
    for i in 0..out.len() {
        let mut acc = T::zero();
        for (c, k) in terms {
            acc = acc + k[i] * *c;
        }
        out[i] = y[i] + acc * h;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let mut y = vec![1.0];
        let mut h = 0.0;
        Dopri5::with_tolerance(1e-12, 1e-12)
            .integrate(|_, y: &[f64], d: &mut [f64]| d[0] = -2.0 * y[0], 0.0, 3.0, &mut y, &mut h)
            .unwrap();
        assert!((y[0] - (-6.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn complex_rotation_keeps_norm() {
        let i = Complex64::new(0.0, 1.0);
        let mut y = vec![Complex64::new(1.0, 0.0)];
        let mut h = 0.0;
        Dopri5::with_tolerance(1e-11, 1e-11)
            .integrate(|_, y: &[Complex64], d: &mut [Complex64]| d[0] = -i * y[0] * 5.0, 0.0, 10.0, &mut y, &mut h)
            .unwrap();
        let want = (-i * 50.0).exp();
        assert!((y[0] - want).norm() < 1e-8);
    }

    #[test]
    fn zero_span_is_identity() {
        let mut y = vec![2.0];
        let mut h = 0.0;
        let stats = Dopri5::default().integrate(|_, _: &[f64], d: &mut [f64]| d[0] = 1.0, 1.0, 1.0, &mut y, &mut h).unwrap();
        assert_eq!(y[0], 2.0);
        assert_eq!(stats.accepted, 0);
    }

    #[test]
    fn step_limit_is_an_error() {
        let mut y = vec![1.0];
        let mut h = 0.0;
        let solver = Dopri5 { max_steps: 3, ..Dopri5::with_tolerance(1e-12, 1e-12) };
        let res = solver.integrate(|t, _: &[f64], d: &mut [f64]| d[0] = (50.0 * t).sin(), 0.0, 10.0, &mut y, &mut h);
        assert!(matches!(res, Err(Error::Integration(_))));
    }
}
