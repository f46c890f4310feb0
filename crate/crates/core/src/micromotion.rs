//! Excess micromotion and the DC scanning method.
//!
//! A stray field E_y pushes the ion off the RF null by Δy = qE/(mω²). The
//! resulting RF-driven motion phase-modulates the Raman drive with index
//! β = |Δk_y|(q_M/2)|Δy|, scaling the carrier Rabi frequency by J₀(β).
//! Scanning a compensation field ΔE traces a Bessel-type pattern whose peak
//! sits at ΔE = −E_y.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitkit::{bessel_j0, lm_fit, montecarlo, FitProblem, FitReport};
use crate::raman::{check_modes, coupling_spectrum, couplings_for, rabi_probability};
use crate::trap::displacement_from_field;
use crate::types::{DriveParams, IonSpecies, ModeSpec, PhononDistribution, RamanGeometry};

/// β for a total normal field `e_total_y` (V/m).
pub fn modulation_index(
    e_total_y: f64,
    species: &IonSpecies,
    radial_mode: &ModeSpec,
    geometry: &RamanGeometry,
    mathieu_q: f64,
) -> Result<f64> {
    if !(mathieu_q >= 0.0 && mathieu_q.is_finite()) {
        return Err(Error::domain(format!("Mathieu q must be >= 0, got {mathieu_q}")));
    }
    let dy = displacement_from_field(e_total_y, species, radial_mode)?;
    Ok(geometry.delta_k() * 0.5 * mathieu_q * dy.abs())
}

/// Carrier π-pulse response as a function of β, with the thermal spectrum
/// of coupling factors precomputed.
///
/// P₁ depends on β only through x = J₀(β) ∈ [J₀_min, 1], so the thermal sum
/// is replaced by a Chebyshev series in x, refined until it reproduces the
/// direct sum to roundoff.
#[derive(Debug, Clone)]
pub struct CarrierResponse {
    pulse: DriveParams,
    terms: Vec<(f64, f64)>,
    chebyshev: Option<Vec<f64>>,
}

/// Global minimum of J₀, at x ≈ 3.8317.
const J0_MIN: f64 = -0.402_759_395_702_553;
const CHEB_LO: f64 = J0_MIN - 1e-3;
const CHEB_HI: f64 = 1.0;
const CHEB_MAX_DEGREE: usize = 4096;
const CHEB_TOLERANCE: f64 = 1e-14;

impl CarrierResponse {
    pub fn new(
        pulse: DriveParams,
        geometry: &RamanGeometry,
        modes: &[ModeSpec],
        phonons: &[PhononDistribution],
    ) -> Result<Self> {
        check_modes(modes, phonons)?;
        let couplings = couplings_for(geometry, modes, phonons)?;
        let refs: Vec<&PhononDistribution> = phonons.iter().collect();
        Ok(Self::from_terms(pulse, coupling_spectrum(&couplings, &refs, 0, 0)))
    }

    /// Ideal two-level response: no motional dressing of the carrier.
    pub fn bare(pulse: DriveParams) -> Self {
        Self::from_terms(pulse, vec![(1.0, 1.0)])
    }

    fn from_terms(pulse: DriveParams, terms: Vec<(f64, f64)>) -> Self {
        let mut r = Self { pulse, terms, chebyshev: None };
        // a handful of terms is cheaper to sum directly
        if r.terms.len() > 64 {
            r.chebyshev = r.fit_chebyshev();
        }
        r
    }

    fn direct(&self, x: f64) -> f64 {
        let omega = self.pulse.angular_rabi() * x;
        let delta = 2.0 * PI * self.pulse.detuning;
        let t = self.pulse.duration;
        self.terms.iter().map(|&(w, f)| w * rabi_probability(omega * f, delta, t)).sum()
    }

    /// Chebyshev coefficients on [CHEB_LO, CHEB_HI], or `None` if the series
    /// does not converge below the degree cap.
    fn fit_chebyshev(&self) -> Option<Vec<f64>> {
        let mut n = 32;
        while n <= CHEB_MAX_DEGREE {
            let values: Vec<f64> = (0..n)
                .map(|k| {
                    let u = (PI * (k as f64 + 0.5) / n as f64).cos();
                    self.direct(0.5 * (CHEB_HI + CHEB_LO) + 0.5 * (CHEB_HI - CHEB_LO) * u)
                })
                .collect();
            let coeffs: Vec<f64> = (0..n)
                .map(|j| {
                    let s: f64 = values
                        .iter()
                        .enumerate()
                        .map(|(k, v)| v * (PI * j as f64 * (k as f64 + 0.5) / n as f64).cos())
                        .sum();
                    if j == 0 { s / n as f64 } else { 2.0 * s / n as f64 }
                })
                .collect();
            let tail = coeffs[n - n / 4..].iter().fold(0.0f64, |m, c| m.max(c.abs()));
            if tail < CHEB_TOLERANCE {
                let cut = coeffs.iter().rposition(|c| c.abs() >= 0.01 * CHEB_TOLERANCE).map_or(1, |i| i + 1);
                return Some(coeffs[..cut].to_vec());
            }
            n *= 2;
        }
        None
    }

    pub fn pulse(&self) -> &DriveParams {
        &self.pulse
    }

    /// Carrier coupling of the most populated Fock configuration, i.e. the
    /// factor a π-time calibration at the RF null would absorb.
    pub fn dominant_coupling(&self) -> f64 {
        self.terms.iter().max_by(|a, b| a.0.total_cmp(&b.0)).map_or(1.0, |t| t.1)
    }

    pub fn p1(&self, beta: f64) -> f64 {
        let x = bessel_j0(beta);
        let p = match &self.chebyshev {
            Some(c) => clenshaw(c, (2.0 * x - CHEB_HI - CHEB_LO) / (CHEB_HI - CHEB_LO)),
            None => self.direct(x),
        };
        p.clamp(0.0, 1.0)
    }
}

fn clenshaw(c: &[f64], u: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &ck in c.iter().skip(1).rev() {
        let b = 2.0 * u * b1 - b2 + ck;
        b2 = b1;
        b1 = b;
    }
    u * b1 - b2 + c[0]
}

/// P₁ = Σ p(n₁)p(n₂) sin²(Ω_{n₁n₂} J₀(β) t/2).
pub fn carrier_p1(
    beta: f64,
    pulse: &DriveParams,
    geometry: &RamanGeometry,
    modes: &[ModeSpec],
    phonons: &[PhononDistribution],
) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(Error::domain(format!("modulation index must be >= 0, got {beta}")));
    }
    Ok(CarrierResponse::new(*pulse, geometry, modes, phonons)?.p1(beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Step,
    #[default]
    Linear,
}

/// Stray field along the chip normal as a function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrayFieldTrajectory {
    samples: Vec<(f64, f64)>,
    interpolation: Interpolation,
}

impl StrayFieldTrajectory {
    pub fn new(samples: Vec<(f64, f64)>, interpolation: Interpolation) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::domain("trajectory needs at least one sample"));
        }
        if samples.iter().any(|(t, e)| !t.is_finite() || !e.is_finite()) {
            return Err(Error::domain("trajectory samples must be finite"));
        }
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::domain("trajectory times must be strictly increasing"));
        }
        Ok(Self { samples, interpolation })
    }

    pub fn constant(e_y: f64) -> Self {
        Self { samples: vec![(0.0, e_y)], interpolation: Interpolation::Step }
    }

    /// Samples `model` at `times`.
    pub fn sampled(model: &ChargingModel, times: &[f64], interpolation: Interpolation) -> Result<Self> {
        Self::new(times.iter().map(|&t| (t, model.value(t))).collect(), interpolation)
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.0).collect()
    }

    /// E_y(t), held constant outside the sampled range.
    pub fn at(&self, t: f64) -> f64 {
        let s = &self.samples;
        let idx = s.partition_point(|&(ts, _)| ts <= t);
        if idx == 0 {
            return s[0].1;
        }
        if idx == s.len() {
            return s[idx - 1].1;
        }
        let (t0, e0) = s[idx - 1];
        match self.interpolation {
            Interpolation::Step => e0,
            Interpolation::Linear => {
                let (t1, e1) = s[idx];
                e0 + (e1 - e0) * (t - t0) / (t1 - t0)
            }
        }
    }
}

/// Synthetic charging history: a baseline, an optional abrupt step and an
/// optional exponential saturation E∞(1 − e^{−(t−t_s)/τ}) after `t_s`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargingModel {
    pub baseline: f64,
    #[serde(default)]
    pub step: Option<StepChange>,
    #[serde(default)]
    pub saturation: Option<Saturation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepChange {
    pub t_on: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Saturation {
    pub t_on: f64,
    pub e_inf: f64,
    pub tau: f64,
}

impl ChargingModel {
    pub fn value(&self, t: f64) -> f64 {
        let mut e = self.baseline;
        if let Some(s) = self.step {
            if t >= s.t_on {
                e += s.amplitude;
            }
        }
        if let Some(s) = self.saturation {
            if t >= s.t_on {
                e += s.e_inf * (1.0 - (-(t - s.t_on) / s.tau).exp());
            }
        }
        e
    }
}

/// Abscissa of one scan point; the gain of the record converts ΔV to ΔE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanCoordinate {
    DeltaV(f64),
    DeltaE(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub coordinate: ScanCoordinate,
    pub p1: f64,
    /// `None` marks an expected value (infinitely many shots).
    pub shots: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    /// s
    pub timestamp: f64,
    pub points: Vec<ScanPoint>,
    /// V/m per volt, required for ΔV coordinates.
    pub gain: Option<f64>,
    pub pulse: Option<DriveParams>,
}

impl ScanRecord {
    pub fn validate(&self) -> Result<()> {
        for p in &self.points {
            if !(0.0..=1.0).contains(&p.p1) {
                return Err(Error::domain(format!("p1 = {} outside [0, 1]", p.p1)));
            }
            if p.shots == Some(0) {
                return Err(Error::domain("shots must be >= 1"));
            }
            if matches!(p.coordinate, ScanCoordinate::DeltaV(_)) && self.gain.is_none() {
                return Err(Error::domain("ΔV scan points need a compensation gain"));
            }
        }
        Ok(())
    }

    /// (ΔE, p1, shots) for every point.
    pub fn field_points(&self) -> Result<Vec<(f64, f64, Option<u64>)>> {
        self.validate()?;
        Ok(self
            .points
            .iter()
            .map(|p| {
                let de = match p.coordinate {
                    ScanCoordinate::DeltaE(e) => e,
                    ScanCoordinate::DeltaV(v) => v * self.gain.expect("validated"),
                };
                (de, p.p1, p.shots)
            })
            .collect())
    }
}

/// Fixed settings of a DC scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSettings {
    /// Compensation voltages ΔV, V.
    pub grid: Vec<f64>,
    /// ΔE per ΔV along the chip normal, V/m/V.
    pub gain: f64,
    /// β per V/m of total normal field, from [`modulation_index`].
    pub beta_per_field: f64,
    pub shots: Option<u64>,
    pub seed: u64,
}

/// One scan record per instant: E_total = E_y(t) + gain·ΔV at every grid
/// point, P₁ from `response`, binomial shots on a per-record substream.
pub fn simulate_scan(
    trajectory: &StrayFieldTrajectory,
    instants: &[f64],
    settings: &ScanSettings,
    response: &CarrierResponse,
) -> Result<Vec<ScanRecord>> {
    if settings.grid.is_empty() {
        return Err(Error::Usage("scan grid is empty".into()));
    }
    if instants.is_empty() {
        return Err(Error::Usage("no scan instants".into()));
    }
    if settings.shots == Some(0) {
        return Err(Error::domain("shots must be >= 1"));
    }
    if !(settings.gain.is_finite() && settings.beta_per_field >= 0.0) {
        return Err(Error::domain("gain and β scale must be finite, β scale >= 0"));
    }
    Ok(instants
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let e_y = trajectory.at(t);
            let mut rng = montecarlo::substream(settings.seed, i as u64);
            let points = settings
                .grid
                .iter()
                .map(|&dv| {
                    let beta = settings.beta_per_field * (e_y + settings.gain * dv).abs();
                    let p = response.p1(beta);
                    let p1 = match settings.shots {
                        Some(n) => montecarlo::sample_fraction(&mut rng, n, p),
                        None => p,
                    };
                    ScanPoint { coordinate: ScanCoordinate::DeltaV(dv), p1, shots: settings.shots }
                })
                .collect();
            ScanRecord { timestamp: t, points, gain: Some(settings.gain), pulse: Some(*response.pulse()) }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OffsetFitResult {
    /// V/m
    pub delta_e_fit: f64,
    /// 1σ, V/m
    pub uncertainty: f64,
    /// s in J₀(s(ΔE − ΔE_fit)), (V/m)⁻¹
    pub modulation_scale: f64,
    pub contrast: f64,
    pub baseline: f64,
    /// reduced χ²
    pub goodness: f64,
}

/// First zero of J₀.
const J0_ZERO: f64 = 2.404_825_557_695_773;
const EXPECTED_VALUE_SIGMA: f64 = 1e-4;

fn pattern(x: f64, p: &[f64]) -> f64 {
    p[2] * (0.5 * PI * bessel_j0(p[1] * (x - p[0]))).sin().powi(2) + p[3]
}

/// Weighted linear least squares for (A, B) in A·f + B.
fn linear_amplitude(f: &[f64], y: &[f64], w: &[f64]) -> Option<(f64, f64, f64)> {
    let (mut sw, mut sf, mut sy, mut sff, mut sfy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..f.len() {
        sw += w[i];
        sf += w[i] * f[i];
        sy += w[i] * y[i];
        sff += w[i] * f[i] * f[i];
        sfy += w[i] * f[i] * y[i];
    }
    let det = sw * sff - sf * sf;
    if det.abs() <= 1e-12 * sw * sff {
        return None;
    }
    let a = (sw * sfy - sf * sy) / det;
    let b = (sy - a * sf) / sw;
    let chi2 = (0..f.len()).map(|i| w[i] * (y[i] - a * f[i] - b).powi(2)).sum();
    Some((a, b, chi2))
}

/// Fits A·sin²((π/2)J₀(s(ΔE − ΔE_fit))) + B to one scan.
///
/// The quoted uncertainty is the covariance error inflated by √χ²_red when
/// the scatter exceeds the shot-noise expectation.
pub fn fit_offset(record: &ScanRecord) -> Result<OffsetFitResult> {
    let mut pts = record.field_points()?;
    if pts.len() < 5 {
        return Err(Error::domain(format!("need at least 5 scan points, got {}", pts.len())));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let expected_value = pts.iter().all(|p| p.2.is_none());
    let sigma_for = |probs: &[f64]| -> Vec<f64> {
        pts.iter()
            .zip(probs)
            .map(|(p, &q)| p.2.map_or(EXPECTED_VALUE_SIGMA, |n| montecarlo::binomial_sigma(q, n as f64)))
            .collect()
    };
    let mut sigma = sigma_for(&y);

    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let spread = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
    let noise = sigma.iter().map(|s| s * s).sum::<f64>() / sigma.len() as f64;
    let floor = if expected_value { 1e-20 } else { 4.0 * noise };
    if spread <= floor {
        return Err(Error::DegenerateFit("scan shows no contrast above shot noise".into()));
    }

    let span = x[x.len() - 1] - x[0];
    let min_dx = x.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min);
    if !(span > 0.0 && min_dx.is_finite()) {
        return Err(Error::DegenerateFit("scan abscissa has no spread".into()));
    }

    // peak of a 3-point running mean seeds the offset
    let smooth: Vec<f64> = (0..y.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(y.len() - 1);
            y[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let peak = (0..smooth.len()).max_by(|&a, &b| smooth[a].total_cmp(&smooth[b])).expect("non-empty");
    let x0 = x[peak];

    // scan the lobe width on a log grid with (A, B) solved linearly
    let w: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let (s_lo, s_hi) = (J0_ZERO / span, J0_ZERO / (1.5 * min_dx));
    let mut best: Option<(f64, [f64; 4])> = None;
    let n_scale = 80;
    for k in 0..n_scale {
        let s = s_lo * (s_hi / s_lo).powf(k as f64 / (n_scale - 1) as f64);
        let f: Vec<f64> = x.iter().map(|&xi| pattern(xi, &[x0, s, 1.0, 0.0])).collect();
        if let Some((a, b, chi2)) = linear_amplitude(&f, &y, &w) {
            if a > 0.0 && best.map_or(true, |(c, _)| chi2 < c) {
                best = Some((chi2, [x0, s, a, b]));
            }
        }
    }
    let (_, start) = best.ok_or_else(|| Error::DegenerateFit("no Bessel pattern matches the scan".into()))?;

    let bounds = vec![
        (x[0] - 0.5 * span, x[x.len() - 1] + 0.5 * span),
        (0.1 * s_lo, 10.0 * s_hi),
        (-2.0, 2.0),
        (-1.0, 1.0),
    ];
    let xs = x.clone();
    let model = move |p: &[f64]| xs.iter().map(|&xi| pattern(xi, p)).collect::<Vec<f64>>();
    let mut params = start.to_vec();
    let mut report: Option<FitReport> = None;
    let passes = if expected_value { 1 } else { 2 };
    for _ in 0..passes {
        let problem = FitProblem::new(&model, y.clone(), sigma.clone(), params.clone())
            .with_bounds(bounds.clone())
            .with_names(["delta_e_fit", "scale", "contrast", "baseline"]);
        let r = lm_fit(&problem)?;
        params = r.params.clone();
        sigma = sigma_for(&model(&params));
        report = Some(r);
    }
    let report = report.expect("at least one pass");
    let errors = report.std_errors();
    let chi2r = report.reduced_chi2;
    // lm_fit scales by χ²_red; undo it unless the scatter is overdispersed
    let uncertainty = if expected_value || chi2r <= 0.0 {
        errors[0]
    } else {
        errors[0] / chi2r.sqrt() * chi2r.max(1.0).sqrt()
    };

    let (de, s, a) = (params[0], params[1], params[2]);
    if !(a > 0.0) || (!expected_value && a < 3.0 * errors[2]) {
        return Err(Error::DegenerateFit(format!("pattern contrast {a:.3e} not significant")));
    }
    if span * s < J0_ZERO {
        return Err(Error::DegenerateFit("scan does not span a pattern lobe".into()));
    }
    Ok(OffsetFitResult {
        delta_e_fit: de,
        uncertainty: uncertainty.max(f64::EPSILON * de.abs().max(1.0)),
        modulation_scale: s,
        contrast: a,
        baseline: params[3],
        goodness: chi2r,
    })
}

/// Stray-field estimate from one scan record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorPoint {
    pub t: f64,
    /// −ΔE_fit, V/m
    pub e_y_estimate: Option<f64>,
    pub sigma: Option<f64>,
    pub chi2red: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Fits every record; failures are reported in place.
pub fn monitor_series(records: &[ScanRecord]) -> Result<Vec<MonitorPoint>> {
    if records.is_empty() {
        return Err(Error::Usage("no scan records".into()));
    }
    Ok(records
        .par_iter()
        .map(|r| match fit_offset(r) {
            Ok(f) => MonitorPoint {
                t: r.timestamp,
                e_y_estimate: Some(-f.delta_e_fit),
                sigma: Some(f.uncertainty),
                chi2red: Some(f.goodness),
                error: None,
            },
            Err(e) => MonitorPoint { t: r.timestamp, e_y_estimate: None, sigma: None, chi2red: None, error: Some(e.to_string()) },
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaturationFit {
    pub baseline: f64,
    pub e_inf: f64,
    pub tau: f64,
    pub baseline_err: f64,
    pub e_inf_err: f64,
    pub tau_err: f64,
    pub reduced_chi2: f64,
}

/// Fits E(t) = E₀ + E∞(1 − e^{−(t−t_on)/τ}) to monitor points with t ≥ t_on.
pub fn fit_saturation(series: &[MonitorPoint], t_on: f64) -> Result<SaturationFit> {
    let data: Vec<(f64, f64, f64)> = series
        .iter()
        .filter(|p| p.t >= t_on)
        .filter_map(|p| Some((p.t - t_on, p.e_y_estimate?, p.sigma?)))
        .collect();
    if data.len() < 4 {
        return Err(Error::domain("need at least 4 fitted points after the onset"));
    }
    let first = data[0].1;
    let last = data[data.len() - 1].1;
    let span = data[data.len() - 1].0 - data[0].0;
    if !(span > 0.0) {
        return Err(Error::DegenerateFit("all points share one timestamp".into()));
    }
    let problem = FitProblem::pointwise(
        |p, t| p[0] + p[1] * (1.0 - (-t / p[2]).exp()),
        &data,
        vec![first, last - first, span / 3.0],
    )
    .with_bounds(vec![(f64::NEG_INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::INFINITY), (1e-3 * span, 1e3 * span)])
    .with_names(["baseline", "e_inf", "tau"]);
    let r = lm_fit(&problem)?;
    let e = r.std_errors();
    Ok(SaturationFit {
        baseline: r.params[0],
        e_inf: r.params[1],
        tau: r.params[2],
        baseline_err: e[0],
        e_inf_err: e[1],
        tau_err: e[2],
        reduced_chi2: r.reduced_chi2,
    })
}
