//! Two-ion Mølmer–Sørensen gate on one shared mode.
//!
//! Interaction-frame Hamiltonian, Lamb–Dicke order, carrier dropped:
//! H(t) = (ηΩ/2) S_x (a e^{−iδt} + a† e^{iδt}), S_x = σx⁽¹⁾ + σx⁽²⁾.
//! In the eigenbasis of S_x (eigenvalues s = 2, 0, 0, −2) the density
//! matrix splits into motional blocks ρ_jk that evolve independently, so
//! only the six distinct (s_j, s_k) pairs are propagated. Heating adds
//! ṅ(D[a] + D[a†]) to every block. Populations are even in δ, so the sign
//! of a fitted detuning follows the initial guess.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};
use std::sync::Mutex;

use nalgebra::{DMatrix, Matrix4};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitkit::{lm_fit, montecarlo, FitProblem};
use crate::ode::{Dopri5, ErrorNorm};
use crate::types::{thermal_pmf, IonSpecies, ModeId, ModeSpec, RamanGeometry};

const RTOL: f64 = 1e-9;
const ATOL: f64 = 1e-10;

/// Population at the Fock cutoff above which propagation is refused.
pub const MS_TRUNCATION_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MSGateParams {
    /// Ω/2π per ion, Hz
    pub rabi: f64,
    /// δ/2π, Hz (signed)
    pub detuning: f64,
    pub mode: ModeSpec,
    pub initial_nbar: f64,
    /// quanta/s
    #[serde(default)]
    pub heating_rate: f64,
    /// s
    pub gate_duration: f64,
    pub n_max: usize,
}

impl MSGateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rabi >= 0.0 && self.rabi.is_finite()) {
            return Err(Error::domain(format!("Rabi frequency must be >= 0, got {}", self.rabi)));
        }
        if !self.detuning.is_finite() {
            return Err(Error::domain("detuning must be finite"));
        }
        if !(self.initial_nbar >= 0.0 && self.initial_nbar.is_finite()) {
            return Err(Error::domain(format!("initial n̄ must be >= 0, got {}", self.initial_nbar)));
        }
        if !(self.heating_rate >= 0.0 && self.heating_rate.is_finite()) {
            return Err(Error::domain(format!("heating rate must be >= 0, got {}", self.heating_rate)));
        }
        if !(self.gate_duration >= 0.0 && self.gate_duration.is_finite()) {
            return Err(Error::domain("gate duration must be >= 0"));
        }
        let min = Self::min_n_max(self.initial_nbar);
        if self.n_max < min {
            return Err(Error::domain(format!(
                "n_max = {} too small for n̄ = {}; need n_max >= {min}",
                self.n_max, self.initial_nbar
            )));
        }
        Ok(())
    }

    /// 10 n̄ + 20, rounded up.
    pub fn min_n_max(nbar: f64) -> usize {
        (10.0 * nbar + 20.0).ceil() as usize
    }

    /// Per-ion coupling g = ηΩ/2, rad/s.
    fn coupling(&self) -> f64 {
        0.5 * self.mode.lamb_dicke * TAU * self.rabi
    }

    fn angular_detuning(&self) -> f64 {
        TAU * self.detuning
    }

    /// Evenly spaced times over the gate duration.
    pub fn time_grid(&self, points: usize) -> Vec<f64> {
        let n = points.max(2);
        (0..n).map(|i| self.gate_duration * i as f64 / (n - 1) as f64).collect()
    }
}

/// Two-ion tilt mode at `frequency`: per-ion η is the single-ion value
/// divided by √2.
pub fn tilt_mode(species: &IonSpecies, geometry: &RamanGeometry, frequency: f64) -> Result<ModeSpec> {
    let single = ModeSpec::from_geometry(species, geometry, ModeId::Tilt, frequency)?;
    ModeSpec::new(ModeId::Tilt, frequency, single.lamb_dicke * FRAC_1_SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionMatrix {
    /// P(read 1 | true 0)
    pub p10: f64,
    /// P(read 0 | true 1)
    pub p01: f64,
}

impl ConfusionMatrix {
    pub fn new(p10: f64, p01: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p10) || !(0.0..=1.0).contains(&p01) {
            return Err(Error::domain(format!("confusion probabilities must lie in [0, 1], got ({p10}, {p01})")));
        }
        Ok(Self { p10, p01 })
    }

    pub fn ideal() -> Self {
        Self { p10: 0.0, p01: 0.0 }
    }

    /// M[read][true] for one qubit.
    fn single(&self) -> [[f64; 2]; 2] {
        [[1.0 - self.p10, self.p01], [self.p10, 1.0 - self.p01]]
    }

    /// Maps true joint populations [p00, p01, p10, p11] to read-out ones.
    pub fn apply(&self, p: [f64; 4]) -> [f64; 4] {
        let m = self.single();
        let mut out = [0.0; 4];
        for r in 0..4 {
            for t in 0..4 {
                out[r] += m[r >> 1][t >> 1] * m[r & 1][t & 1] * p[t];
            }
        }
        out
    }
}

/// Joint qubit populations; index order 00, 01, 10, 11 (first digit: ion 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationCurve {
    pub times: Vec<f64>,
    pub p00: Vec<f64>,
    pub p01: Vec<f64>,
    pub p10: Vec<f64>,
    pub p11: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl PopulationCurve {
    pub fn from_rows(times: Vec<f64>, rows: &[[f64; 4]]) -> Result<Self> {
        if times.len() != rows.len() {
            return Err(Error::domain("one population row per time required"));
        }
        Ok(Self {
            times,
            p00: rows.iter().map(|r| r[0]).collect(),
            p01: rows.iter().map(|r| r[1]).collect(),
            p10: rows.iter().map(|r| r[2]).collect(),
            p11: rows.iter().map(|r| r[3]).collect(),
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn row(&self, i: usize) -> [f64; 4] {
        [self.p00[i], self.p01[i], self.p10[i], self.p11[i]]
    }

    pub fn rows(&self) -> Vec<[f64; 4]> {
        (0..self.len()).map(|i| self.row(i)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if [self.p00.len(), self.p01.len(), self.p10.len(), self.p11.len()].iter().any(|&l| l != n) {
            return Err(Error::domain("population columns differ in length"));
        }
        for i in 0..n {
            if self.row(i).iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::domain(format!("population outside [0, 1] at t = {}", self.times[i])));
            }
        }
        Ok(())
    }
}

pub fn apply_confusion(curve: &PopulationCurve, cm: &ConfusionMatrix) -> Result<PopulationCurve> {
    curve.validate()?;
    let rows: Vec<[f64; 4]> = curve.rows().into_iter().map(|r| cm.apply(r)).collect();
    let mut out = PopulationCurve::from_rows(curve.times.clone(), &rows)?;
    out.warnings = curve.warnings.clone();
    Ok(out)
}

/// S_x eigenvalues of the x-basis product states |±±⟩, ordered
/// (++, +−, −+, −−) with |+⟩ = (|0⟩ + |1⟩)/√2.
const SX_EIGEN: [i32; 4] = [2, 0, 0, -2];

/// Distinct (s_j, s_k) block pairs; the others follow by hermiticity.
const BLOCK_PAIRS: [(i32, i32); 6] = [(2, 2), (0, 0), (-2, -2), (2, 0), (2, -2), (0, -2)];

fn block_index(sj: i32, sk: i32) -> (usize, bool) {
    for (i, &(a, b)) in BLOCK_PAIRS.iter().enumerate() {
        if (a, b) == (sj, sk) {
            return (i, false);
        }
        if (b, a) == (sj, sk) {
            return (i, true);
        }
    }
    unreachable!("S_x eigenvalues are 2, 0, -2")
}

/// Populations in the computational basis from the 4×4 spin density matrix
/// in the x basis: ρ_z = (H⊗H) ρ_x (H⊗H).
fn z_populations(rho_x: &Matrix4<Complex64>) -> [f64; 4] {
    let h = FRAC_1_SQRT_2;
    let had = nalgebra::Matrix2::new(h, h, h, -h);
    let hh = had.kronecker(&had).map(|v| Complex64::new(v, 0.0));
    let rz = hh * rho_x * hh;
    // 01 and 10 are equal by exchange symmetry; average away roundoff
    let mixed = 0.5 * (rz[(1, 1)].re + rz[(2, 2)].re);
    [rz[(0, 0)].re, mixed, mixed, rz[(3, 3)].re]
}

/// x-basis spin density matrix from block traces tr(ρ_jk).
fn spin_matrix(block_trace: impl Fn(i32, i32) -> Complex64) -> Matrix4<Complex64> {
    Matrix4::from_fn(|j, k| block_trace(SX_EIGEN[j], SX_EIGEN[k]))
}

fn clamp_populations(raw: [f64; 4], t: f64, warnings: &mut Vec<String>) -> [f64; 4] {
    let mut out = raw;
    for p in out.iter_mut() {
        if *p < 0.0 {
            if *p < -1e-9 {
                warnings.push(format!("population {p:.3e} clamped to 0 at t = {t:e}"));
            }
            *p = 0.0;
        }
        if *p > 1.0 {
            *p = 1.0;
        }
    }
    out
}

/// Master-equation propagation from |00⟩ ⊗ thermal(n̄).
pub fn propagate(params: &MSGateParams, times: &[f64]) -> Result<PopulationCurve> {
    params.validate()?;
    if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(Error::domain("times must be finite and >= 0"));
    }
    let dim = params.n_max + 1;
    let bs = dim * dim;
    let thermal = thermal_pmf(params.initial_nbar, params.n_max)?;

    // |00⟩ has amplitude 1/2 on each x-basis state, so ρ_jk(0) = ρ_th / 4
    let mut state = vec![Complex64::new(0.0, 0.0); BLOCK_PAIRS.len() * bs];
    for b in 0..BLOCK_PAIRS.len() {
        for n in 0..dim {
            state[b * bs + n * dim + n] = Complex64::new(0.25 * thermal.populations()[n], 0.0);
        }
    }

    let g = params.coupling();
    let delta = params.angular_detuning();
    let rate = params.heating_rate;
    let sq: Vec<f64> = (0..=dim).map(|n| (n as f64).sqrt()).collect();
    // diagonal loss of D[a] + D[a†] with truncated ladder operators
    let loss: Vec<f64> = (0..dim).map(|k| 0.5 * (k as f64 + if k + 1 < dim { (k + 1) as f64 } else { 0.0 })).collect();
    let minus_i = Complex64::new(0.0, -1.0);
    let rhs = |t: f64, y: &[Complex64], dy: &mut [Complex64]| {
        let ph = Complex64::from_polar(g, -delta * t); // g e^{−iδt}
        let phc = ph.conj();
        for (b, &(sj, sk)) in BLOCK_PAIRS.iter().enumerate() {
            let r = &y[b * bs..(b + 1) * bs];
            let d = &mut dy[b * bs..(b + 1) * bs];
            // −i(s_j hρ − s_k ρh)
            let lj = minus_i * sj as f64;
            let rk = -minus_i * sk as f64;
            for m in 0..dim {
                let row = &r[m * dim..(m + 1) * dim];
                let out = &mut d[m * dim..(m + 1) * dim];
                // (ρh)_{mn} = e^{−iδt}√n ρ_{m,n−1} + e^{iδt}√(n+1) ρ_{m,n+1}
                out[0] = rk * phc * row[1] * sq[1];
                for n in 1..dim {
                    let mut v = ph * row[n - 1] * sq[n];
                    if n + 1 < dim {
                        v += phc * row[n + 1] * sq[n + 1];
                    }
                    out[n] = rk * v;
                }
                // (hρ)_{mn} = e^{−iδt}√(m+1) ρ_{m+1,n} + e^{iδt}√m ρ_{m−1,n}
                if m + 1 < dim {
                    let c = lj * ph * sq[m + 1];
                    let below = &r[(m + 1) * dim..(m + 2) * dim];
                    out.iter_mut().zip(below).for_each(|(o, &x)| *o += c * x);
                }
                if m > 0 {
                    let c = lj * phc * sq[m];
                    let above = &r[(m - 1) * dim..m * dim];
                    out.iter_mut().zip(above).for_each(|(o, &x)| *o += c * x);
                }
                if rate > 0.0 {
                    // a ρ a† + a† ρ a − ½{a†a + a a†, ρ}
                    for n in 0..dim {
                        let mut v = -(loss[m] + loss[n]) * row[n];
                        if m + 1 < dim && n + 1 < dim {
                            v += sq[m + 1] * sq[n + 1] * r[(m + 1) * dim + n + 1];
                        }
                        if m > 0 && n > 0 {
                            v += sq[m] * sq[n] * r[(m - 1) * dim + n - 1];
                        }
                        out[n] += rate * v;
                    }
                }
            }
        }
    };

    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let solver = Dopri5 { rtol: RTOL, atol: ATOL, norm: ErrorNorm::Mixed, max_steps: 2_000_000 };
    let mut rows = vec![[0.0; 4]; times.len()];
    let mut warnings = Vec::new();
    let mut t_now = 0.0;
    let mut h = 0.0;
    for &i in &order {
        solver.integrate(rhs, t_now, times[i], &mut state, &mut h)?;
        t_now = times[i];

        let trace_of = |b: usize| -> Complex64 { (0..dim).map(|n| state[b * bs + n * dim + n]).sum() };
        let traces: Vec<Complex64> = (0..BLOCK_PAIRS.len()).map(trace_of).collect();
        let rho_x = spin_matrix(|sj, sk| {
            let (b, conj) = block_index(sj, sk);
            if conj { traces[b].conj() } else { traces[b] }
        });
        // population at the cutoff, summed over spin-diagonal blocks
        let edge = (state[params.n_max * dim + params.n_max]
            + state[bs + params.n_max * dim + params.n_max] * 2.0
            + state[2 * bs + params.n_max * dim + params.n_max])
            .re;
        if edge > MS_TRUNCATION_TOLERANCE {
            let suggested = (params.n_max as f64 * 1.5).ceil() as usize;
            return Err(Error::Truncation { n_max: params.n_max, tail: edge, suggested });
        }
        rows[i] = clamp_populations(z_populations(&rho_x), times[i], &mut warnings);
    }
    let mut curve = PopulationCurve::from_rows(times.to_vec(), &rows)?;
    curve.warnings = warnings;
    Ok(curve)
}

/// Analytic populations without heating: U = D(αS_x) exp(iΦS_x²) with
/// α = (ηΩ/2δ)(1 − e^{iδt}) and Φ = (ηΩ/2δ)²(δt − sin δt); thermal
/// averaging damps the x-basis coherence (j, k) by
/// exp(−|α|²(s_j − s_k)²(n̄ + ½)).
pub fn ms_closed_form(params: &MSGateParams, times: &[f64]) -> Result<PopulationCurve> {
    params.validate()?;
    if params.heating_rate != 0.0 {
        return Err(Error::domain("closed form requires heating_rate = 0"));
    }
    let g = params.coupling();
    let delta = params.angular_detuning();
    let nbar = params.initial_nbar;
    let mut warnings = Vec::new();
    let rows: Vec<[f64; 4]> = times
        .iter()
        .map(|&t| {
            let (alpha2, phi) = if delta == 0.0 {
                // δ → 0 limit: α = −igt, Φ = g²t³δ/6 → 0
                ((g * t).powi(2), 0.0)
            } else {
                let r = g / delta;
                let x = delta * t;
                (r * r * 2.0 * (1.0 - x.cos()), r * r * (x - x.sin()))
            };
            let rho_x = spin_matrix(|sj, sk| {
                let ds = (sj - sk) as f64;
                let damp = (-alpha2 * ds * ds * (nbar + 0.5)).exp();
                let phase = phi * ((sj * sj - sk * sk) as f64);
                Complex64::from_polar(0.25 * damp, phase)
            });
            clamp_populations(z_populations(&rho_x), t, &mut warnings)
        })
        .collect();
    let mut curve = PopulationCurve::from_rows(times.to_vec(), &rows)?;
    curve.warnings = warnings;
    Ok(curve)
}

/// Multinomial read-out of `shots` per time point.
pub fn sample_curve(curve: &PopulationCurve, shots: u64, seed: u64) -> Result<PopulationCurve> {
    curve.validate()?;
    if shots == 0 {
        return Err(Error::domain("shots must be >= 1"));
    }
    let rows: Vec<[f64; 4]> = (0..curve.len())
        .map(|i| {
            let mut rng = montecarlo::substream(seed, i as u64);
            let c = montecarlo::multinomial(&mut rng, shots, &curve.row(i));
            [0, 1, 2, 3].map(|k| c[k] as f64 / shots as f64)
        })
        .collect();
    PopulationCurve::from_rows(curve.times.clone(), &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MsFit {
    pub params: MSGateParams,
    pub confusion: ConfusionMatrix,
    /// Order: rabi, detuning, nbar, p10, p01.
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub reduced_chi2: f64,
    pub warnings: Vec<String>,
}

/// Upper bound on the fitted n̄.
const MAX_FIT_NBAR: f64 = 2.0;

/// Least squares over (Ω, δ, n̄, p10, p01) of propagate ∘ apply_confusion.
/// Residuals use Pearson weights σ² = p/N, the multinomial Fisher metric;
/// the heating rate and mode come from `guess`, whose cutoff is a floor that
/// grows with the trial n̄.
pub fn fit_ms(
    curve: &PopulationCurve,
    shots: Option<u64>,
    guess: &MSGateParams,
    guess_confusion: &ConfusionMatrix,
) -> Result<MsFit> {
    curve.validate()?;
    guess.validate()?;
    if curve.len() < 10 {
        return Err(Error::domain(format!("need at least 10 time points, got {}", curve.len())));
    }
    if guess.detuning == 0.0 || guess.rabi <= 0.0 {
        return Err(Error::domain("initial guess needs non-zero Rabi frequency and detuning"));
    }
    let n_shots = shots.map(|n| n as f64);
    let p00_mean = curve.p00.iter().sum::<f64>() / curve.len() as f64;
    let p00_spread = curve.p00.iter().map(|p| (p - p00_mean).powi(2)).sum::<f64>() / curve.len() as f64;
    let noise = n_shots.map_or(1e-20, |n| 4.0 * 0.25 / n);
    if p00_spread <= noise {
        return Err(Error::DegenerateFit("population curve shows no oscillation; the fit cannot converge".into()));
    }

    let times = curve.times.clone();
    let template = guess.clone();
    // confusion parameters do not touch the dynamics, so the last propagation is reused
    let cache: Mutex<Option<([f64; 3], PopulationCurve)>> = Mutex::new(None);
    let dynamics = |p: &[f64]| -> Result<PopulationCurve> {
        let key = [p[0], p[1], p[2]];
        if let Some((k, c)) = cache.lock().unwrap().as_ref() {
            if *k == key {
                return Ok(c.clone());
            }
        }
        let n_max = template.n_max.max(MSGateParams::min_n_max(p[2]));
        let mut params = MSGateParams { rabi: p[0], detuning: p[1], initial_nbar: p[2], n_max, ..template.clone() };
        let curve = match propagate(&params, &times) {
            Err(Error::Truncation { suggested, .. }) => {
                params.n_max = suggested;
                propagate(&params, &times)?
            }
            other => other?,
        };
        *cache.lock().unwrap() = Some((key, curve.clone()));
        Ok(curve)
    };
    let model = |p: &[f64]| -> Vec<f64> {
        let cm = ConfusionMatrix { p10: p[3], p01: p[4] };
        match dynamics(p) {
            Ok(c) => c.rows().into_iter().flat_map(|r| cm.apply(r)).collect(),
            Err(_) => vec![f64::NAN; 4 * times.len()],
        }
    };
    let observed: Vec<f64> = curve.rows().into_iter().flatten().collect();
    let sigma_for = |probs: &[f64]| -> Vec<f64> {
        probs
            .iter()
            .map(|&p| match n_shots {
                Some(n) => (((p * n + 0.5) / (n + 1.0)) / n).sqrt(),
                None => 1e-4 * (p + 1e-3).sqrt(),
            })
            .collect()
    };

    let sign = guess.detuning.signum();
    let d0 = guess.detuning.abs();
    let (d_lo, d_hi) = if sign > 0.0 { (0.2 * d0, 5.0 * d0) } else { (-5.0 * d0, -0.2 * d0) };
    let bounds = vec![(0.2 * guess.rabi, 5.0 * guess.rabi), (d_lo, d_hi), (0.0, MAX_FIT_NBAR), (0.0, 0.5), (0.0, 0.5)];
    let names = ["rabi", "detuning", "nbar", "p10", "p01"];
    let mut params = vec![
        guess.rabi,
        guess.detuning,
        guess.initial_nbar.min(MAX_FIT_NBAR),
        guess_confusion.p10.min(0.5),
        guess_confusion.p01.min(0.5),
    ];
    let mut sigma = sigma_for(&observed);
    let mut report = None;
    for _ in 0..2 {
        let problem = FitProblem::new(&model, observed.clone(), sigma.clone(), params.clone())
            .with_bounds(bounds.clone())
            .with_names(names);
        let r = lm_fit(&problem)?;
        params = r.params.clone();
        sigma = sigma_for(&model(&params));
        report = Some(r);
    }
    let report = report.expect("two passes");
    let errors = report.std_errors();
    let mut warnings = Vec::new();
    for (i, (&v, &(lo, hi))) in params.iter().zip(&bounds).enumerate() {
        if (v - lo).abs() <= 1e-9 * lo.abs().max(1e-12) || (v - hi).abs() <= 1e-9 * hi.abs().max(1e-12) {
            warnings.push(format!("{} at its bound {v:.6e}", names[i]));
        }
    }
    let cov: &DMatrix<f64> = &report.covariance;
    let n_max = template.n_max.max(MSGateParams::min_n_max(params[2]));
    Ok(MsFit {
        params: MSGateParams { rabi: params[0], detuning: params[1], initial_nbar: params[2], n_max, ..template },
        confusion: ConfusionMatrix { p10: params[3], p01: params[4] },
        names: names.iter().map(|s| s.to_string()).collect(),
        values: params.clone(),
        errors,
        covariance: (0..cov.nrows()).map(|i| cov.row(i).iter().copied().collect()).collect(),
        reduced_chi2: report.reduced_chi2,
        warnings,
    })
}

/// Propagates a set of parameter points concurrently.
pub fn propagate_many(params: &[MSGateParams], times: &[f64]) -> Vec<Result<PopulationCurve>> {
    params.par_iter().map(|p| propagate(p, times)).collect()
}
