/// Bessel function of the first kind Jₙ(x) for integer order n ≥ 0.
///
/// Power series for |x| < 1, Miller backward recurrence normalized by
/// J₀ + 2ΣJ₂ₖ = 1 otherwise. Absolute error stays below 1e-14 for |x| ≤ 50.
pub fn bessel_j(order: u32, x: f64) -> f64 {
    if !x.is_finite() {
        return f64::NAN;
    }
    let sign = if x < 0.0 && order % 2 == 1 { -1.0 } else { 1.0 };
    let ax = x.abs();
    let value = if ax == 0.0 {
        if order == 0 { 1.0 } else { 0.0 }
    } else if ax < 1.0 {
        series(order, ax)
    } else {
        miller(order, ax)
    };
    sign * value
}

pub fn bessel_j0(x: f64) -> f64 {
    bessel_j(0, x)
}

fn series(order: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = 1.0;
    for k in 1..=order {
        term *= half / k as f64;
    }
    let q = -half * half;
    let mut sum = term;
    let mut k = 1.0;
    loop {
        term *= q / (k * (k + order as f64));
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
        k += 1.0;
    }
    sum
}

fn miller(order: u32, x: f64) -> f64 {
    const BIG: f64 = 1e250;
    let n = order as usize;
    let top = n.max(x.ceil() as usize);
    let start = 2 * ((top + 20 + (40.0 * top as f64).sqrt() as usize) / 2);

    let mut f_next = 0.0;
    let mut f = 1e-30;
    let mut even_sum = 0.0;
    let mut answer = 0.0;
    for k in (1..=start).rev() {
        let f_prev = 2.0 * k as f64 / x * f - f_next;
        f_next = f;
        f = f_prev;
        // f now holds f_{k-1}
        if f.abs() > BIG {
            f /= BIG;
            f_next /= BIG;
            even_sum /= BIG;
            answer /= BIG;
        }
        let idx = k - 1;
        if idx > 0 && idx % 2 == 0 {
            even_sum += f;
        }
        if idx == n {
            answer = f;
        }
    }
    answer / (f + 2.0 * even_sum)
}

/// Generalized Laguerre polynomial Lₙ^α(x) by three-term recurrence.
pub fn laguerre(n: usize, alpha: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + alpha - x;
    for k in 1..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 + alpha - x) * cur - (k + alpha) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Jₙ(x) = (1/π)∫₀^π cos(nτ − x sin τ) dτ; the trapezoid rule on this
    /// periodic integrand converges geometrically.
    fn bessel_integral(order: u32, x: f64) -> f64 {
        let m = 2000;
        let h = PI / m as f64;
        let f = |t: f64| (order as f64 * t - x * t.sin()).cos();
        let mut s = 0.5 * (f(0.0) + f(PI));
        for i in 1..m {
            s += f(i as f64 * h);
        }
        s * h / PI
    }

    #[test]
    fn bessel_special_values() {
        assert_eq!(bessel_j(0, 0.0), 1.0);
        assert_eq!(bessel_j(1, 0.0), 0.0);
        assert!(bessel_j0(2.404_825_557_695_773).abs() < 1e-12);
        assert!(bessel_j(0, f64::NAN).is_nan());
    }

    #[test]
    fn bessel_matches_integral_representation() {
        for order in [0u32, 1, 2, 3, 5, 10, 25] {
            let mut x = -49.75;
            while x < 50.0 {
                let want = bessel_integral(order, x);
                let got = bessel_j(order, x);
                assert!((got - want).abs() < 1e-12, "J_{order}({x}): {got} vs {want}");
                x += 0.37;
            }
        }
    }

    #[test]
    fn bessel_across_series_switch() {
        for x in [0.999_999, 1.0, 1.000_001, 1e-8, 0.3] {
            for order in 0..4 {
                assert!((bessel_j(order, x) - bessel_integral(order, x)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn laguerre_low_orders() {
        for x in [-1.0, 0.0, 0.3, 2.5] {
            assert_eq!(laguerre(0, 1.7, x), 1.0);
            assert!((laguerre(1, 0.0, x) - (1.0 - x)).abs() < 1e-15);
            let l2 = 0.5 * (x * x - 4.0 * x + 2.0);
            assert!((laguerre(2, 0.0, x) - l2).abs() < 1e-14);
        }
    }

    #[test]
    fn laguerre_exact_rational() {
        // L₅¹(1/2) = 2699/3840 exactly.
        assert!((laguerre(5, 1.0, 0.5) - 2699.0 / 3840.0).abs() < 1e-15);
    }

    #[test]
    fn laguerre_matches_explicit_sum() {
        // Lₙ^α(x) = Σᵢ (-1)ⁱ C(n+α, n-i) xⁱ/i! for integer α.
        fn binom(a: u64, b: u64) -> f64 {
            (0..b).fold(1.0, |acc, i| acc * (a - i) as f64 / (i + 1) as f64)
        }
        for n in 0..15u64 {
            for alpha in 0..3u64 {
                for x in [0.01f64, 0.2, 1.3] {
                    let mut fact = 1.0;
                    let mut sum = 0.0;
                    for i in 0..=n {
                        if i > 0 {
                            fact *= i as f64;
                        }
                        sum += (-1f64).powi(i as i32) * binom(n + alpha, n - i) * x.powi(i as i32) / fact;
                    }
                    let got = laguerre(n as usize, alpha as f64, x);
                    assert!((got - sum).abs() < 1e-10 * sum.abs().max(1.0), "n={n} a={alpha} x={x}");
                }
            }
        }
    }
}
