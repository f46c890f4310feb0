//! Carrier and sideband Rabi dynamics of a two-level ion coupled to one or
//! two harmonic modes, thermal averaging, and phonon-number fitting.

use std::f64::consts::{PI, TAU};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fitkit::{laguerre, lm_fit, montecarlo::binomial_sigma, FitProblem};
use crate::types::{
    default_n_max, thermal_pmf, BeamConfiguration, DriveParams, ModeSpec, PhononDistribution, RamanGeometry,
    Sideband, TRUNCATION_TAIL_TOLERANCE,
};

/// Populations below this weight are dropped from thermal sums.
const NEGLIGIBLE_WEIGHT: f64 = 1e-16;

/// |⟨n+s| exp(iη(a+a†)) |n⟩| = e^{−η²/2} η^|s| √(n₋!/n₊!) |L_{n₋}^{|s|}(η²)|,
/// with n₋ = min(n, n+s), n₊ = max(n, n+s).
pub fn matrix_element(n: usize, s: i32, eta: f64) -> Result<f64> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::domain(format!("Lamb-Dicke parameter must be >= 0, got {eta}")));
    }
    let target = n as i64 + s as i64;
    if target < 0 {
        return Err(Error::domain(format!("transition {n} -> {target} leaves the Fock space")));
    }
    let lo = n.min(target as usize);
    let hi = n.max(target as usize);
    let order = s.unsigned_abs() as usize;
    let eta2 = eta * eta;
    let ratio: f64 = ((lo + 1)..=hi).map(|k| 1.0 / k as f64).product::<f64>().sqrt();
    let value = (-0.5 * eta2).exp() * eta.powi(order as i32) * ratio * laguerre(lo, order as f64, eta2);
    Ok(value.abs())
}

/// Cached coupling magnitudes for s ∈ −2..=2 and n ∈ 0..=n_max.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrixElements {
    eta: f64,
    table: Vec<[f64; 5]>,
}

impl CouplingMatrixElements {
    pub fn new(eta: f64, n_max: usize) -> Result<Self> {
        let mut table = Vec::with_capacity(n_max + 1);
        for n in 0..=n_max {
            let mut row = [0.0; 5];
            for (i, s) in (-2..=2).enumerate() {
                if n as i32 + s >= 0 {
                    row[i] = matrix_element(n, s, eta)?;
                }
            }
            table.push(row);
        }
        Ok(Self { eta, table })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn n_max(&self) -> usize {
        self.table.len() - 1
    }

    /// Coupling for n → n+s, or zero outside the table / Fock space.
    pub fn get(&self, n: usize, s: i32) -> f64 {
        if !(-2..=2).contains(&s) {
            return 0.0;
        }
        self.table.get(n).map_or(0.0, |row| row[(s + 2) as usize])
    }
}

/// Effective η for a mode under the given beam geometry.
pub fn effective_eta(geometry: &RamanGeometry, mode: &ModeSpec) -> f64 {
    match geometry.configuration {
        BeamConfiguration::CoPropagating => 0.0,
        BeamConfiguration::CounterPropagating => mode.lamb_dicke,
    }
}

/// Excitation probability of a two-level transition with angular Rabi
/// frequency `omega` and angular detuning `delta` after time `t`.
pub fn rabi_probability(omega: f64, delta: f64, t: f64) -> f64 {
    let w2 = omega * omega + delta * delta;
    if w2 == 0.0 {
        return 0.0;
    }
    let w = w2.sqrt();
    omega * omega / w2 * (0.5 * w * t).sin().powi(2)
}

/// Weighted list of (probability, coupling factor relative to Ω) over the
/// joint Fock populations, for transition `order` on mode `target`.
pub(crate) fn coupling_spectrum(
    couplings: &[CouplingMatrixElements],
    phonons: &[&PhononDistribution],
    target: usize,
    order: i32,
) -> Vec<(f64, f64)> {
    let mut terms = vec![(1.0, 1.0)];
    for (m, (cm, dist)) in couplings.iter().zip(phonons).enumerate() {
        let s = if m == target { order } else { 0 };
        let mut next = Vec::with_capacity(terms.len() * dist.populations().len());
        for &(w, f) in &terms {
            for (n, &p) in dist.populations().iter().enumerate() {
                let weight = w * p;
                if weight < NEGLIGIBLE_WEIGHT {
                    continue;
                }
                next.push((weight, f * cm.get(n, s)));
            }
        }
        terms = next;
    }
    // Merge equal couplings and renormalize so that motion-insensitive
    // drives give results independent of the distributions bit for bit.
    terms.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(terms.len());
    for (w, f) in terms {
        match merged.last_mut() {
            Some(last) if last.1 == f => last.0 += w,
            _ => merged.push((w, f)),
        }
    }
    let total: f64 = merged.iter().map(|t| t.0).sum();
    if total > 0.0 {
        merged.iter_mut().for_each(|t| t.0 /= total);
    }
    merged
}

/// Thermally averaged excitation after a pulse, with the carrier coupling
/// scaled by `scale` (J₀(β) for micromotion).
pub(crate) fn averaged_p1(
    drive: &DriveParams,
    couplings: &[CouplingMatrixElements],
    phonons: &[&PhononDistribution],
    target: usize,
    order: i32,
    scale: f64,
    times: &[f64],
) -> Vec<f64> {
    let terms = coupling_spectrum(couplings, phonons, target, order);
    let omega = drive.angular_rabi() * scale;
    let delta = TAU * drive.detuning;
    times
        .iter()
        .map(|&t| {
            let p: f64 = terms.iter().map(|&(w, f)| w * rabi_probability(omega * f, delta, t)).sum();
            p.clamp(0.0, 1.0)
        })
        .collect()
}

pub(crate) fn check_modes(modes: &[ModeSpec], phonons: &[PhononDistribution]) -> Result<()> {
    if modes.is_empty() || modes.len() > 2 {
        return Err(Error::domain(format!("one or two modes supported, got {}", modes.len())));
    }
    if modes.len() != phonons.len() {
        return Err(Error::domain("one phonon distribution per mode required"));
    }
    for d in phonons {
        d.check_truncation(TRUNCATION_TAIL_TOLERANCE)?;
    }
    Ok(())
}

pub(crate) fn couplings_for(geometry: &RamanGeometry, modes: &[ModeSpec], phonons: &[PhononDistribution]) -> Result<Vec<CouplingMatrixElements>> {
    modes
        .iter()
        .zip(phonons)
        .map(|(m, d)| CouplingMatrixElements::new(effective_eta(geometry, m), d.n_max() + 2))
        .collect()
}

/// Carrier Rabi flop P₁(t) = Σ p(n₁)p(n₂) sin²(Ω_{n₁n₂} t/2).
pub fn rabi_curve(
    times: &[f64],
    drive: &DriveParams,
    geometry: &RamanGeometry,
    modes: &[ModeSpec],
    phonons: &[PhononDistribution],
) -> Result<Vec<f64>> {
    check_modes(modes, phonons)?;
    let couplings = couplings_for(geometry, modes, phonons)?;
    let refs: Vec<&PhononDistribution> = phonons.iter().collect();
    Ok(averaged_p1(drive, &couplings, &refs, 0, 0, 1.0, times))
}

/// Excitation after `probe` on one transition (carrier, red or blue sideband
/// of mode `mode_index`), with spectator modes contributing Debye–Waller
/// factors.
pub fn transition_p1(
    sideband: Sideband,
    mode_index: usize,
    probe: &DriveParams,
    geometry: &RamanGeometry,
    modes: &[ModeSpec],
    phonons: &[PhononDistribution],
) -> Result<f64> {
    check_modes(modes, phonons)?;
    if mode_index >= modes.len() {
        return Err(Error::domain(format!("mode index {mode_index} out of range")));
    }
    let couplings = couplings_for(geometry, modes, phonons)?;
    let refs: Vec<&PhononDistribution> = phonons.iter().collect();
    Ok(averaged_p1(probe, &couplings, &refs, mode_index, sideband.order(), 1.0, &[probe.duration])[0])
}

/// Weak-probe spectrum. Each detuning (Hz, relative to the carrier) drives
/// the nearest resonance among the carrier and the first red/blue sidebands
/// of every mode; `probe.detuning` is ignored.
pub fn sideband_spectrum(
    detunings: &[f64],
    probe: &DriveParams,
    geometry: &RamanGeometry,
    modes: &[ModeSpec],
    phonons: &[PhononDistribution],
) -> Result<Vec<f64>> {
    check_modes(modes, phonons)?;
    let couplings = couplings_for(geometry, modes, phonons)?;
    let refs: Vec<&PhononDistribution> = phonons.iter().collect();

    let mut resonances = vec![(0.0, 0usize, 0i32)];
    for (m, mode) in modes.iter().enumerate() {
        resonances.push((-mode.frequency, m, -1));
        resonances.push((mode.frequency, m, 1));
    }
    Ok(detunings
        .iter()
        .map(|&d| {
            let &(center, mode, order) = resonances
                .iter()
                .min_by(|a, b| (d - a.0).abs().total_cmp(&(d - b.0).abs()))
                .expect("carrier always present");
            let drive = DriveParams { detuning: d - center, ..*probe };
            averaged_p1(&drive, &couplings, &refs, mode, order, 1.0, &[probe.duration])[0]
        })
        .collect())
}

/// One point of a measured Rabi flop. `shots = None` marks expected values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RabiSample {
    pub t: f64,
    pub p1: f64,
    pub shots: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NbarFit {
    /// Ω/2π, Hz
    pub rabi: f64,
    pub rabi_err: f64,
    pub nbar: Vec<f64>,
    pub nbar_err: Vec<f64>,
    /// Correlation between the two n̄ estimates (two-mode fits only).
    pub nbar_correlation: Option<f64>,
    pub reduced_chi2: f64,
    pub warnings: Vec<String>,
}

/// Offset in the log(n̄ + ε) parameterization.
const LOG_EPS: f64 = 1e-6;
const MAX_FIT_NBAR: f64 = 60.0;

fn sample_sigmas(curve: &[RabiSample], model: Option<&[f64]>) -> Vec<f64> {
    curve
        .iter()
        .enumerate()
        .map(|(i, s)| match s.shots {
            Some(n) => binomial_sigma(model.map_or(s.p1, |m| m[i]), n as f64),
            None => 1e-3,
        })
        .collect()
}

fn check_contrast(curve: &[RabiSample], sigma: &[f64]) -> Result<()> {
    let mean = curve.iter().map(|s| s.p1).sum::<f64>() / curve.len() as f64;
    let spread = curve.iter().map(|s| (s.p1 - mean).powi(2)).sum::<f64>() / curve.len() as f64;
    let noise = sigma.iter().map(|s| s * s).sum::<f64>() / sigma.len() as f64;
    let floor = if curve.iter().all(|s| s.shots.is_none()) { 1e-12 } else { 4.0 * noise };
    if spread <= floor {
        return Err(Error::DegenerateFit("Rabi curve shows no contrast above shot noise".into()));
    }
    Ok(())
}

/// Weighted least squares over (Ω, n̄₁[, n̄₂]) with n̄ fitted as log(n̄ + ε).
/// `drive.rabi` seeds the Rabi frequency; `initial_nbar` seeds the n̄ values.
pub fn fit_nbar(
    curve: &[RabiSample],
    drive: &DriveParams,
    geometry: &RamanGeometry,
    modes: &[ModeSpec],
    initial_nbar: &[f64],
) -> Result<NbarFit> {
    if curve.len() < 10 {
        return Err(Error::domain(format!("need at least 10 points, got {}", curve.len())));
    }
    if modes.is_empty() || modes.len() > 2 || initial_nbar.len() != modes.len() {
        return Err(Error::domain("one or two modes with matching initial n̄ required"));
    }
    let (t_min, t_max) = curve.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.t), b.max(s.t)));
    if (t_max - t_min) * drive.rabi < 2.0 {
        return Err(Error::domain("curve must span at least two Rabi periods"));
    }
    let etas: Vec<f64> = modes.iter().map(|m| effective_eta(geometry, m)).collect();
    if etas.iter().all(|&e| e == 0.0) {
        return Err(Error::domain("motion-insensitive geometry: n̄ is not identifiable, use fit_carrier_sinusoid"));
    }
    let table_max = default_n_max(MAX_FIT_NBAR);
    let couplings: Vec<CouplingMatrixElements> =
        etas.iter().map(|&e| CouplingMatrixElements::new(e, table_max + 2)).collect::<Result<_>>()?;
    let times: Vec<f64> = curve.iter().map(|s| s.t).collect();
    let observed: Vec<f64> = curve.iter().map(|s| s.p1).collect();

    let model = |p: &[f64]| -> Vec<f64> {
        let dists: Vec<PhononDistribution> = p[1..]
            .iter()
            .map(|lg| {
                let nbar = (lg.exp() - LOG_EPS).max(0.0);
                thermal_pmf(nbar, default_n_max(nbar)).expect("default cutoff satisfies tail bound")
            })
            .collect();
        let refs: Vec<&PhononDistribution> = dists.iter().collect();
        let d = DriveParams { rabi: p[0], ..*drive };
        averaged_p1(&d, &couplings, &refs, 0, 0, 1.0, &times)
    };

    let mut initial = vec![drive.rabi];
    initial.extend(initial_nbar.iter().map(|n| (n.max(0.0) + LOG_EPS).ln()));
    let mut bounds = vec![(0.2 * drive.rabi, 5.0 * drive.rabi)];
    bounds.extend(std::iter::repeat((LOG_EPS.ln(), (MAX_FIT_NBAR + LOG_EPS).ln())).take(modes.len()));
    let mut names = vec!["rabi".to_string()];
    names.extend((1..=modes.len()).map(|i| format!("nbar{i}")));

    let mut sigma = sample_sigmas(curve, None);
    check_contrast(curve, &sigma)?;

    let mut report = None;
    // second pass re-weights with model probabilities
    for _ in 0..2 {
        let start = report.as_ref().map_or(initial.clone(), |r: &crate::fitkit::FitReport| r.params.clone());
        let problem = FitProblem::new(model, observed.clone(), sigma.clone(), start)
            .with_bounds(bounds.clone())
            .with_names(names.clone());
        let r = lm_fit(&problem)?;
        let pred = model(&r.params);
        sigma = sample_sigmas(curve, Some(&pred));
        report = Some(r);
    }
    let report = report.expect("at least one pass");
    let err = report.std_errors();

    let mut warnings = Vec::new();
    let nbar: Vec<f64> = report.params[1..].iter().map(|lg| (lg.exp() - LOG_EPS).max(0.0)).collect();
    // d n̄ = (n̄ + ε) d log(n̄ + ε)
    let nbar_err: Vec<f64> = report.params[1..].iter().zip(&err[1..]).map(|(lg, e)| lg.exp() * e).collect();
    for (i, lg) in report.params[1..].iter().enumerate() {
        if *lg <= bounds[i + 1].0 + 1e-9 {
            warnings.push(format!("nbar{} clamped at zero", i + 1));
        }
        if *lg >= bounds[i + 1].1 - 1e-9 {
            warnings.push(format!("nbar{} hit the upper bound {MAX_FIT_NBAR}", i + 1));
        }
    }
    let nbar_correlation = (modes.len() == 2).then(|| {
        let c = &report.covariance;
        c[(1, 2)] / (c[(1, 1)] * c[(2, 2)]).sqrt()
    });
    if modes.len() == 2 {
        let rel = (etas[0] - etas[1]).abs() / etas[0].max(etas[1]);
        let corr = nbar_correlation.unwrap_or(0.0).abs();
        if rel < 0.1 || corr > 0.95 {
            warnings.push(format!(
                "mode n̄ weakly identifiable from carrier flops (η₁ = {:.4}, η₂ = {:.4}, corr = {corr:.3})",
                etas[0], etas[1]
            ));
        }
    }
    Ok(NbarFit {
        rabi: report.params[0],
        rabi_err: err[0],
        nbar,
        nbar_err,
        nbar_correlation,
        reduced_chi2: report.reduced_chi2,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinusoidFit {
    /// A in P₁ = A sin²(πΩt) + B
    pub contrast: f64,
    pub offset: f64,
    pub rabi: f64,
    pub contrast_err: f64,
    pub rabi_err: f64,
}

/// Fits an undamped flop A·sin²(πΩt) + B, as seen with motion-insensitive
/// beams.
pub fn fit_carrier_sinusoid(curve: &[RabiSample], rabi_guess: f64) -> Result<SinusoidFit> {
    if curve.len() < 4 {
        return Err(Error::domain("need at least 4 points"));
    }
    let sigma = sample_sigmas(curve, None);
    check_contrast(curve, &sigma)?;
    let data: Vec<(f64, f64, f64)> = curve.iter().zip(&sigma).map(|(s, &e)| (s.t, s.p1, e)).collect();
    let problem = FitProblem::pointwise(|p, t| p[0] * (PI * p[2] * t).sin().powi(2) + p[1], &data, vec![1.0, 0.0, rabi_guess])
        .with_names(["contrast", "offset", "rabi"]);
    let r = lm_fit(&problem)?;
    let e = r.std_errors();
    Ok(SinusoidFit { contrast: r.params[0], offset: r.params[1], rabi: r.params[2], contrast_err: e[0], rabi_err: e[2] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{thermal, IonSpecies, ModeId};
    use nalgebra::{DMatrix, SymmetricEigen};
    use num_complex::Complex64;

    fn paper_modes() -> Vec<ModeSpec> {
        let yb = IonSpecies::yb171();
        let g = RamanGeometry::counter_propagating_355();
        vec![
            ModeSpec::from_geometry(&yb, &g, ModeId::R1, 1.84e6).unwrap(),
            ModeSpec::from_geometry(&yb, &g, ModeId::R2, 2.11e6).unwrap(),
        ]
    }

    /// ⟨m| exp(iη(a+a†)) |n⟩ by diagonalizing the truncated position operator.
    fn displacement_oracle(eta: f64, n_max: usize) -> DMatrix<Complex64> {
        let dim = n_max + 1;
        let x = DMatrix::from_fn(dim, dim, |i, j| {
            if i + 1 == j { (j as f64).sqrt() } else if j + 1 == i { (i as f64).sqrt() } else { 0.0 }
        });
        let eig = SymmetricEigen::new(x);
        let v = eig.eigenvectors.map(|z| Complex64::new(z, 0.0));
        let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| Complex64::new(0.0, eta * l).exp()));
        &v * phases * v.transpose()
    }

    #[test]
    fn matrix_element_closed_forms() {
        assert_eq!(matrix_element(0, 0, 0.0).unwrap(), 1.0);
        assert_eq!(matrix_element(9, 0, 0.0).unwrap(), 1.0);
        for eta in [0.01, 0.094, 0.3, 1.0] {
            assert!((matrix_element(0, 0, eta).unwrap() - (-eta * eta / 2.0).exp()).abs() < 1e-15);
        }
        assert!(matrix_element(0, -1, 0.1).is_err());
        assert!(matrix_element(3, 0, -0.1).is_err());
    }

    #[test]
    fn matrix_element_matches_exponential_oracle() {
        let u = displacement_oracle(0.094, 60);
        for (n, s) in [(7usize, 1i32), (7, -1), (7, 0), (0, 2), (12, -2), (3, 1)] {
            let want = u[((n as i32 + s) as usize, n)].norm();
            let got = matrix_element(n, s, 0.094).unwrap();
            assert!((got - want).abs() < 1e-12, "n={n} s={s}: {got} vs {want}");
        }
    }

    #[test]
    fn hermiticity_identity() {
        for n in 0..200 {
            for eta in [0.05, 0.1, 0.5] {
                let up = matrix_element(n, 1, eta).unwrap();
                let down = matrix_element(n + 1, -1, eta).unwrap();
                assert!((up - down).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn co_propagating_flop_is_pure_sinusoid() {
        let modes = paper_modes();
        let g = RamanGeometry::co_propagating_355();
        let drive = DriveParams::new(545e3, 0.0, 0.0).unwrap();
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.1e-6).collect();
        let hot = rabi_curve(&times, &drive, &g, &modes, &[thermal(15.0).unwrap(), thermal(14.0).unwrap()]).unwrap();
        let cold = rabi_curve(&times, &drive, &g, &modes, &[thermal(0.0).unwrap(), thermal(0.0).unwrap()]).unwrap();
        for ((t, a), b) in times.iter().zip(&hot).zip(&cold) {
            assert_eq!(a, b);
            assert!((a - (PI * 545e3 * t).sin().powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn ground_state_flop_has_debye_waller_rate() {
        let modes = paper_modes();
        let g = RamanGeometry::counter_propagating_355();
        let drive = DriveParams::new(545e3, 0.0, 0.0).unwrap();
        let dw = (-(modes[0].lamb_dicke.powi(2) + modes[1].lamb_dicke.powi(2)) / 2.0).exp();
        let times: Vec<f64> = (0..40).map(|i| i as f64 * 0.13e-6).collect();
        let p = rabi_curve(&times, &drive, &g, &modes, &[thermal(0.0).unwrap(), thermal(0.0).unwrap()]).unwrap();
        for (t, v) in times.iter().zip(p) {
            assert!((v - (PI * 545e3 * dw * t).sin().powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn thermal_flop_matches_double_sum() {
        let modes = paper_modes();
        let g = RamanGeometry::counter_propagating_355();
        let drive = DriveParams::new(545e3, 0.0, 0.0).unwrap();
        let d1 = thermal_pmf(15.0, 300).unwrap();
        let d2 = thermal_pmf(14.0, 300).unwrap();
        let times = [0.3e-6, 0.9e-6, 2.5e-6, 7.0e-6];
        let got = rabi_curve(&times, &drive, &g, &modes, &[d1.clone(), d2.clone()]).unwrap();
        for (t, v) in times.iter().zip(got) {
            let mut want = 0.0;
            for (n1, p1) in d1.populations().iter().enumerate() {
                for (n2, p2) in d2.populations().iter().enumerate() {
                    let w = TAU * 545e3
                        * matrix_element(n1, 0, modes[0].lamb_dicke).unwrap()
                        * matrix_element(n2, 0, modes[1].lamb_dicke).unwrap();
                    want += p1 * p2 * (w * t / 2.0).sin().powi(2);
                }
            }
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn contrast_decreases_with_temperature() {
        let modes = paper_modes();
        let g = RamanGeometry::counter_propagating_355();
        let drive = DriveParams::pi_pulse(545e3).unwrap();
        let mut last = f64::INFINITY;
        for i in 0..=20 {
            let nbar = i as f64;
            let d = thermal(nbar).unwrap();
            let p = rabi_curve(&[drive.duration], &drive, &g, &modes[1..], &[d]).unwrap()[0];
            assert!(p <= last + 1e-15, "n̄ = {nbar}");
            last = p;
        }
    }

    #[test]
    fn truncated_distribution_rejected() {
        let modes = paper_modes();
        let g = RamanGeometry::counter_propagating_355();
        let drive = DriveParams::new(545e3, 0.0, 0.0).unwrap();
        let bad = PhononDistribution::new(vec![0.5, 0.5]).unwrap();
        assert!(matches!(rabi_curve(&[0.0], &drive, &g, &modes[..1], &[bad]), Err(Error::Truncation { .. })));
        assert!(rabi_curve(&[0.0], &drive, &g, &[], &[]).is_err());
    }

    #[test]
    fn sideband_peaks() {
        let modes = paper_modes();
        let g = RamanGeometry::counter_propagating_355();
        let probe = DriveParams::new(200e3, 4e-6, 0.0).unwrap();
        let ground = [thermal(0.0).unwrap(), thermal(0.0).unwrap()];
        let spec = sideband_spectrum(&[2.11e6, -2.11e6, -1.84e6, 0.0], &probe, &g, &modes, &ground).unwrap();
        let coupling = matrix_element(0, 1, modes[1].lamb_dicke).unwrap() * matrix_element(0, 0, modes[0].lamb_dicke).unwrap();
        let want = (PI * 200e3 * coupling * 4e-6).sin().powi(2);
        assert!((spec[0] - want).abs() < 1e-12);
        assert_eq!(spec[1], 0.0);
        assert_eq!(spec[2], 0.0);
        assert!(spec[3] > 0.0);
    }

    #[test]
    fn sideband_ratio_from_spectrum() {
        let modes = paper_modes();
        let g = RamanGeometry::counter_propagating_355();
        // pulse area ηΩt ≈ 0.02 rad keeps the response linear
        let probe = DriveParams::new(50e3, 0.02 / (TAU * 50e3 * modes[1].lamb_dicke), 0.0).unwrap();
        let dists = [thermal(0.0).unwrap(), thermal(0.2).unwrap()];
        let spec = sideband_spectrum(&[-2.11e6, 2.11e6], &probe, &g, &modes, &dists).unwrap();
        let ratio = spec[0] / spec[1];
        assert!((ratio - 1.0 / 6.0).abs() < 1e-3 / 6.0, "ratio = {ratio}");
    }
}
