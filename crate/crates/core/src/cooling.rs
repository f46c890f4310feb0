//! Pulsed sideband cooling, motional heating and sideband thermometry.
//!
//! Cooling is a classical population transfer with a repump after each
//! pulse. Heating is diffusion driven by an infinite-temperature bath.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitkit::linear_fit;
use crate::ode::{Dopri5, ErrorNorm};
use crate::raman::{matrix_element, rabi_probability};
use crate::types::{
    default_n_max, DriveParams, ModeId, ModeSpec, PhononDistribution, Sideband, TRUNCATION_TAIL_TOLERANCE,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulePulse {
    pub mode_id: ModeId,
    pub sideband: Sideband,
    /// s
    pub duration: f64,
    /// Bare Rabi frequency Ω/2π, Hz.
    pub rabi: f64,
}

impl SchedulePulse {
    pub fn drive(&self) -> Result<DriveParams> {
        DriveParams::new(self.rabi, self.duration, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ScheduleFile", into = "ScheduleObject")]
pub struct PulseSchedule {
    pub pulses: Vec<SchedulePulse>,
    pub repump_after_each: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScheduleFile {
    List(Vec<SchedulePulse>),
    Object(ScheduleObject),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleObject {
    pulses: Vec<SchedulePulse>,
    #[serde(default = "repump_default")]
    repump_after_each: bool,
}

fn repump_default() -> bool {
    true
}

impl From<ScheduleFile> for PulseSchedule {
    fn from(f: ScheduleFile) -> Self {
        match f {
            ScheduleFile::List(pulses) => Self { pulses, repump_after_each: true },
            ScheduleFile::Object(o) => Self { pulses: o.pulses, repump_after_each: o.repump_after_each },
        }
    }
}

impl From<PulseSchedule> for ScheduleObject {
    fn from(s: PulseSchedule) -> Self {
        Self { pulses: s.pulses, repump_after_each: s.repump_after_each }
    }
}

impl PulseSchedule {
    pub fn new(pulses: Vec<SchedulePulse>, repump_after_each: bool) -> Result<Self> {
        let s = Self { pulses, repump_after_each };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.pulses {
            if !(p.duration > 0.0 && p.duration.is_finite()) {
                return Err(Error::domain(format!("pulse duration must be > 0, got {}", p.duration)));
            }
            if !(p.rabi >= 0.0 && p.rabi.is_finite()) {
                return Err(Error::domain(format!("pulse Rabi frequency must be >= 0, got {}", p.rabi)));
            }
        }
        Ok(())
    }

    /// π time of the n → n−1 red sideband at bare Rabi frequency `rabi`.
    pub fn rsb_pi_time(n: usize, rabi: f64, eta: f64) -> Result<f64> {
        if n == 0 {
            return Err(Error::domain("n = 0 has no red sideband"));
        }
        let m = matrix_element(n, -1, eta)?;
        if !(m > 0.0 && rabi > 0.0) {
            return Err(Error::domain("red sideband coupling vanishes"));
        }
        Ok(0.5 / (rabi * m))
    }

    /// Stand-in cooling sequence: `per_stage` RSB pulses timed to the π time
    /// of each level in `targets`, in order.
    pub fn staged(mode_id: ModeId, rabi: f64, eta: f64, targets: &[usize], per_stage: usize) -> Result<Self> {
        let mut pulses = Vec::with_capacity(targets.len() * per_stage);
        for &n in targets {
            let duration = Self::rsb_pi_time(n, rabi, eta)?;
            pulses.extend(std::iter::repeat(SchedulePulse { mode_id, sideband: Sideband::Red, duration, rabi }).take(per_stage));
        }
        Self::new(pulses, true)
    }

    /// Default stand-in: 4 × 25 pulses timed for n = 20, 10, 5, 1.
    pub fn default_stand_in(mode_id: ModeId, rabi: f64, eta: f64) -> Result<Self> {
        Self::staged(mode_id, rabi, eta, &[20, 10, 5, 1], 25)
    }
}

/// Transfer probability n → n+s (s = ±1) for every n of `dist`.
fn transfer_probabilities(n_max: usize, s: i32, pulse: &DriveParams, eta: f64) -> Result<Vec<f64>> {
    let omega = pulse.angular_rabi();
    let delta = std::f64::consts::TAU * pulse.detuning;
    (0..=n_max)
        .map(|n| {
            if (n as i64 + s as i64) < 0 {
                return Ok(0.0);
            }
            let m = matrix_element(n, s, eta)?;
            Ok(rabi_probability(omega * m, delta, pulse.duration))
        })
        .collect()
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::domain(format!("Lamb-Dicke parameter must be >= 0, got {eta}")));
    }
    Ok(())
}

/// Red-sideband pulse followed by a repump: population at n moves to n−1
/// with probability sin²(Ω_{n,n−1}t/2).
pub fn apply_rsb_pulse(dist: &PhononDistribution, pulse: &DriveParams, eta: f64) -> Result<PhononDistribution> {
    check_eta(eta)?;
    dist.check_truncation(TRUNCATION_TAIL_TOLERANCE)?;
    let p = dist.populations();
    let moved = transfer_probabilities(dist.n_max(), -1, pulse, eta)?;
    let mut out = p.to_vec();
    for n in 1..p.len() {
        let dp = p[n] * moved[n];
        out[n] -= dp;
        out[n - 1] += dp;
    }
    Ok(PhononDistribution::from_raw_unchecked(out))
}

/// Blue-sideband pulse followed by a repump; the cutoff grows by one.
pub fn apply_bsb_pulse(dist: &PhononDistribution, pulse: &DriveParams, eta: f64) -> Result<PhononDistribution> {
    check_eta(eta)?;
    dist.check_truncation(TRUNCATION_TAIL_TOLERANCE)?;
    let p = dist.populations();
    let moved = transfer_probabilities(dist.n_max(), 1, pulse, eta)?;
    let mut out = p.to_vec();
    out.push(0.0);
    for n in (0..p.len()).rev() {
        let dp = p[n] * moved[n];
        out[n] -= dp;
        out[n + 1] += dp;
    }
    Ok(PhononDistribution::from_raw_unchecked(out))
}

/// Runs a schedule. Modes not addressed by any pulse pass through unchanged;
/// carrier pulses leave motion untouched.
///
/// Without repumping the spin is tracked jointly with the addressed mode,
/// so such schedules may address only one mode.
pub fn run_schedule(
    schedule: &PulseSchedule,
    modes: &[ModeSpec],
    dists: &[PhononDistribution],
) -> Result<Vec<PhononDistribution>> {
    schedule.validate()?;
    if modes.len() != dists.len() {
        return Err(Error::domain("one phonon distribution per mode required"));
    }
    let index_of = |id: ModeId| {
        modes
            .iter()
            .position(|m| m.mode_id == id)
            .ok_or_else(|| Error::domain(format!("schedule addresses {id:?}, which is not among the modes")))
    };
    let mut out = dists.to_vec();
    if schedule.repump_after_each {
        for p in &schedule.pulses {
            let i = index_of(p.mode_id)?;
            let eta = modes[i].lamb_dicke;
            out[i] = match p.sideband {
                Sideband::Red => apply_rsb_pulse(&out[i], &p.drive()?, eta)?,
                Sideband::Blue => apply_bsb_pulse(&out[i], &p.drive()?, eta)?,
                Sideband::Carrier => out[i].clone(),
            };
        }
        return Ok(out);
    }

    let Some(first) = schedule.pulses.first() else { return Ok(out) };
    if schedule.pulses.iter().any(|p| p.mode_id != first.mode_id) {
        return Err(Error::domain("schedules without repump may address only one mode"));
    }
    let i = index_of(first.mode_id)?;
    let eta = modes[i].lamb_dicke;
    out[i].check_truncation(TRUNCATION_TAIL_TOLERANCE)?;
    let len = out[i].n_max() + 1 + schedule.pulses.iter().filter(|p| p.sideband == Sideband::Blue).count();
    let mut down = out[i].padded(len - 1).populations().to_vec();
    let mut up = vec![0.0; len];
    for p in &schedule.pulses {
        let drive = p.drive()?;
        match p.sideband {
            // |↓,n⟩ ↔ |↑,n−1⟩
            Sideband::Red => {
                let prob = transfer_probabilities(len - 1, -1, &drive, eta)?;
                for n in 1..len {
                    let (a, b) = (down[n], up[n - 1]);
                    down[n] += prob[n] * (b - a);
                    up[n - 1] += prob[n] * (a - b);
                }
            }
            // |↓,n⟩ ↔ |↑,n+1⟩
            Sideband::Blue => {
                let prob = transfer_probabilities(len - 1, 1, &drive, eta)?;
                for n in 0..len - 1 {
                    let (a, b) = (down[n], up[n + 1]);
                    down[n] += prob[n] * (b - a);
                    up[n + 1] += prob[n] * (a - b);
                }
            }
            Sideband::Carrier => {
                let prob = transfer_probabilities(len - 1, 0, &drive, eta)?;
                for n in 0..len {
                    let (a, b) = (down[n], up[n]);
                    down[n] += prob[n] * (b - a);
                    up[n] += prob[n] * (a - b);
                }
            }
        }
    }
    let total: Vec<f64> = down.iter().zip(&up).map(|(a, b)| a + b).collect();
    out[i] = PhononDistribution::from_raw_unchecked(total);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatingRate {
    /// quanta/s
    pub rate: f64,
    pub mode_id: ModeId,
}

impl HeatingRate {
    pub fn new(rate: f64, mode_id: ModeId) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::domain(format!("heating rate must be >= 0, got {rate}")));
        }
        Ok(Self { rate, mode_id })
    }
}

/// Local error budget per step in L1 norm, inside the 1e-8 total-variation
/// budget with room for clipping of integrator noise in empty states.
const HEATING_STEP_TOLERANCE: f64 = 1e-10;

/// dp(n)/dt = ṅ[n p(n−1) + (n+1) p(n+1) − (2n+1) p(n)], truncated so that
/// no population leaves the cutoff. The distribution is first padded so that
/// the reflecting cutoff costs less than 1e-12 of mean growth.
pub fn evolve_heating(dist: &PhononDistribution, rate: &HeatingRate, t: f64) -> Result<PhononDistribution> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("heating time must be >= 0, got {t}")));
    }
    if t == 0.0 || rate.rate == 0.0 {
        return Ok(dist.clone());
    }
    let final_mean = dist.mean() + rate.rate * t;
    let n_max = dist.n_max().max(heating_cutoff(final_mean));
    let mut p = dist.padded(n_max).populations().to_vec();
    let r = rate.rate;
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| heating_rhs(r, y, dy);
    let solver = Dopri5 { rtol: 0.0, atol: HEATING_STEP_TOLERANCE, norm: ErrorNorm::L1, ..Dopri5::default() };
    let mut h = 0.0;
    solver.integrate(rhs, 0.0, t, &mut p, &mut h)?;
    for v in p.iter_mut() {
        // integrator noise can leave −1e-17 in empty states
        if *v < 0.0 {
            if *v < -HEATING_STEP_TOLERANCE {
                return Err(Error::Integration(format!("negative population {v:.3e}")));
            }
            *v = 0.0;
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    let out = PhononDistribution::from_raw_unchecked(p);
    out.check_truncation(TRUNCATION_TAIL_TOLERANCE)?;
    Ok(out)
}

/// Smallest N with (N+1)·p_thermal(N) < 1e-12 at mean `nbar`; the missing
/// up-flux at the cutoff is ṅ(N+1)p(N).
fn heating_cutoff(nbar: f64) -> usize {
    let q = nbar / (nbar + 1.0);
    let mut n = default_n_max(nbar);
    let mut p = q.powi(n as i32) / (nbar + 1.0);
    while (n + 1) as f64 * p >= 1e-12 {
        n += 1;
        p *= q;
    }
    n
}

pub(crate) fn heating_rhs(rate: f64, y: &[f64], dy: &mut [f64]) {
    let last = y.len() - 1;
    for n in 0..=last {
        let nf = n as f64;
        let gain_below = if n > 0 { nf * y[n - 1] } else { 0.0 };
        let gain_above = if n < last { (nf + 1.0) * y[n + 1] } else { 0.0 };
        let up = if n < last { nf + 1.0 } else { 0.0 };
        dy[n] = rate * (gain_below + gain_above - (up + nf) * y[n]);
    }
}

/// n̄ = r/(1 − r) with r = P_RSB/P_BSB.
pub fn sideband_ratio_nbar(p_rsb: f64, p_bsb: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_rsb) || !(0.0..=1.0).contains(&p_bsb) || !(p_bsb > 0.0) {
        return Err(Error::domain(format!("invalid sideband probabilities ({p_rsb}, {p_bsb})")));
    }
    let r = p_rsb / p_bsb;
    if r >= 1.0 {
        return Err(Error::OutOfValidity(format!(
            "sideband ratio {r:.4} >= 1: non-thermal state or saturated probe"
        )));
    }
    Ok(r / (1.0 - r))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatingRateFit {
    /// Fitted slope, quanta/s; may be negative.
    pub rate: f64,
    pub rate_err: f64,
    pub nbar0: f64,
    pub nbar0_err: f64,
    pub reduced_chi2: f64,
    pub mode_id: ModeId,
    pub warnings: Vec<String>,
}

impl HeatingRateFit {
    pub fn heating_rate(&self) -> Result<HeatingRate> {
        HeatingRate::new(self.rate, self.mode_id)
    }
}

/// Weighted line n̄(t) = n̄₀ + ṅt through (t, n̄, σ) samples.
pub fn fit_heating_rate(samples: &[(f64, f64, f64)], mode_id: ModeId) -> Result<HeatingRateFit> {
    let mut times: Vec<f64> = samples.iter().map(|s| s.0).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    if times.len() < 3 {
        return Err(Error::domain(format!("need at least 3 delay times, got {}", times.len())));
    }
    let fit = linear_fit(samples)?;
    let mut warnings = Vec::new();
    if fit.slope < 0.0 {
        warnings.push(format!("negative heating rate {:.3e} quanta/s", fit.slope));
    }
    let reduced_chi2 = if fit.dof > 0 { fit.chi2 / fit.dof as f64 } else { f64::NAN };
    Ok(HeatingRateFit {
        rate: fit.slope,
        rate_err: fit.slope_err,
        nbar0: fit.intercept,
        nbar0_err: fit.intercept_err,
        reduced_chi2,
        mode_id,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raman::transition_p1;
    use crate::types::{thermal, thermal_pmf, IonSpecies, RamanGeometry};
    use nalgebra::{DMatrix, DVector};

    const ETA: f64 = 0.0937;

    #[test]
    fn ground_state_is_dark() {
        let g = PhononDistribution::ground(20);
        let pulse = DriveParams::new(50e3, 37e-6, 0.0).unwrap();
        assert_eq!(apply_rsb_pulse(&g, &pulse, ETA).unwrap(), g);
    }

    #[test]
    fn pi_pulse_empties_n1() {
        let d = PhononDistribution::fock(1, 10).unwrap();
        let t = PulseSchedule::rsb_pi_time(1, 50e3, ETA).unwrap();
        let out = apply_rsb_pulse(&d, &DriveParams::new(50e3, t, 0.0).unwrap(), ETA).unwrap();
        assert!((out.populations()[0] - 1.0).abs() < 1e-15);
        assert!(out.populations()[1] < 1e-15);
    }

    #[test]
    fn fixed_schedule_matches_matrix_power() {
        let d = thermal(14.0).unwrap();
        let rabi = 50e3;
        let t = PulseSchedule::rsb_pi_time(5, rabi, ETA).unwrap();
        let pulse = DriveParams::new(rabi, t, 0.0).unwrap();
        let mut cur = d.clone();
        for _ in 0..100 {
            cur = apply_rsb_pulse(&cur, &pulse, ETA).unwrap();
        }

        let len = d.populations().len();
        let mut m = DMatrix::<f64>::identity(len, len);
        for n in 1..len {
            // |⟨n−1|e^{iη(a+a†)}|n⟩| = η e^{−η²/2} L_{n−1}^1(η²)/√n
            let g = ETA * (-0.5 * ETA * ETA).exp() * crate::fitkit::laguerre(n - 1, 1.0, ETA * ETA).abs() / (n as f64).sqrt();
            let q = (std::f64::consts::PI * rabi * g * t).sin().powi(2);
            m[(n, n)] = 1.0 - q;
            m[(n - 1, n)] = q;
        }
        let mut power = DMatrix::<f64>::identity(len, len);
        let mut base = m;
        let mut k = 100u32;
        while k > 0 {
            if k & 1 == 1 {
                power = &power * &base;
            }
            base = &base * &base;
            k >>= 1;
        }
        let want = power * DVector::from_column_slice(d.populations());
        let got_mean = cur.mean();
        let want_mean: f64 = want.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        assert!((got_mean - want_mean).abs() < 1e-10, "{got_mean} vs {want_mean}");
        assert!(got_mean < 14.0);
        for (a, b) in cur.populations().iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn heating_identity_and_mean_law() {
        let g = PhononDistribution::ground(30);
        let rate = HeatingRate::new(1700.0, ModeId::R2).unwrap();
        assert_eq!(evolve_heating(&g, &rate, 0.0).unwrap(), g);
        let out = evolve_heating(&g, &rate, 0.5 / 1700.0).unwrap();
        assert!((out.mean() - 0.5).abs() < 1e-4);
        assert!((out.total() - 1.0).abs() < 1e-9);
        assert!(evolve_heating(&g, &rate, -1.0).is_err());
        assert!(HeatingRate::new(-1.0, ModeId::R2).is_err());
    }

    /// Uniformization: p(t) = Σₖ Poisson(k; Λt) Pᵏ p₀ with P = I + Q/Λ.
    fn uniformization(p0: &[f64], rate: f64, t: f64) -> Vec<f64> {
        let len = p0.len();
        let lambda = rate * (2 * len) as f64;
        let mut term = p0.to_vec();
        let mut weight = (-lambda * t).exp();
        let mut acc: Vec<f64> = term.iter().map(|p| p * weight).collect();
        let mut k = 0;
        let mut dq = vec![0.0; len];
        while k < 100_000 {
            k += 1;
            heating_rhs(rate, &term, &mut dq);
            for i in 0..len {
                term[i] += dq[i] / lambda;
            }
            weight *= lambda * t / k as f64;
            for i in 0..len {
                acc[i] += weight * term[i];
            }
            if k as f64 > lambda * t && weight < 1e-20 {
                break;
            }
        }
        acc
    }

    #[test]
    fn heating_matches_uniformization_oracle() {
        let d0 = thermal(0.1).unwrap();
        let rate = HeatingRate::new(1700.0, ModeId::R2).unwrap();
        let out = evolve_heating(&d0, &rate, 1e-3).unwrap();
        let want = uniformization(out.populations().len().checked_sub(1).map(|n| d0.padded(n)).unwrap().populations(), 1700.0, 1e-3);
        let tv: f64 = 0.5 * out.populations().iter().zip(&want).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(tv < 1e-6, "TV {tv:e}");
        assert!((out.mean() - 1.8).abs() < 1e-5);
    }

    #[test]
    fn thermal_state_stays_thermal_under_heating() {
        let out = evolve_heating(&thermal(0.3).unwrap(), &HeatingRate::new(100.0, ModeId::Tilt).unwrap(), 0.01).unwrap();
        let want = thermal_pmf(1.3, out.n_max()).unwrap();
        for (a, b) in out.populations().iter().zip(want.populations()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn sideband_ratio_closed_form() {
        assert_eq!(sideband_ratio_nbar(0.0, 0.3).unwrap(), 0.0);
        assert!((sideband_ratio_nbar(0.2, 0.4).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(sideband_ratio_nbar(0.4, 0.4), Err(Error::OutOfValidity(_))));
        assert!(sideband_ratio_nbar(0.1, 0.0).is_err());
        for nbar in [0.0, 0.1, 0.2, 1.0, 5.0] {
            let r = nbar / (nbar + 1.0);
            assert!((sideband_ratio_nbar(0.5 * r, 0.5).unwrap() - nbar).abs() < 1e-9 * nbar.max(1.0));
        }
    }

    #[test]
    fn weak_probe_thermometry() {
        let yb = IonSpecies::yb171();
        let geo = RamanGeometry::counter_propagating_355();
        let mode = ModeSpec::from_geometry(&yb, &geo, ModeId::R2, 2.11e6).unwrap();
        let d = thermal(0.2).unwrap();
        // weak probe: area 0.1 π on the ground-state blue sideband
        let t = 0.1 * 0.5 / (50e3 * mode.lamb_dicke);
        let probe = DriveParams::new(50e3, t, 0.0).unwrap();
        let prsb = transition_p1(Sideband::Red, 0, &probe, &geo, &[mode.clone()], &[d.clone()]).unwrap();
        let pbsb = transition_p1(Sideband::Blue, 0, &probe, &geo, &[mode], &[d]).unwrap();
        let nbar = sideband_ratio_nbar(prsb, pbsb).unwrap();
        assert!((nbar / 0.2 - 1.0).abs() < 0.02, "{nbar}");
    }

    #[test]
    fn exact_line_heating_fit() {
        let s: Vec<(f64, f64, f64)> = (0..6).map(|i| {
            let t = i as f64 * 1e-3;
            (t, 0.1 + 1700.0 * t, 0.05)
        }).collect();
        let f = fit_heating_rate(&s, ModeId::R2).unwrap();
        assert!((f.rate - 1700.0).abs() < 1e-9);
        assert!(f.warnings.is_empty());
        let neg: Vec<(f64, f64, f64)> = s.iter().map(|&(t, n, e)| (t, 10.0 - n, e)).collect();
        let f = fit_heating_rate(&neg, ModeId::R2).unwrap();
        assert!(f.rate < 0.0 && !f.warnings.is_empty());
        assert!(f.heating_rate().is_err());
        assert!(fit_heating_rate(&s[..2], ModeId::R2).is_err());
    }

    #[test]
    fn schedule_json_forms() {
        let list = r#"[{"mode_id":"r2","sideband":"rsb","duration":1e-5,"rabi":5e4}]"#;
        let s: PulseSchedule = serde_json::from_str(list).unwrap();
        assert!(s.repump_after_each);
        let obj = r#"{"pulses":[{"mode_id":"r2","sideband":"red","duration":1e-5,"rabi":5e4}],"repump_after_each":false}"#;
        let s: PulseSchedule = serde_json::from_str(obj).unwrap();
        assert!(!s.repump_after_each);
        assert_eq!(s.pulses[0].sideband, Sideband::Red);
    }

    #[test]
    fn unrepumped_pi_pulse_is_reversible() {
        let mode = ModeSpec::new(ModeId::R2, 2.11e6, ETA).unwrap();
        let t = PulseSchedule::rsb_pi_time(1, 50e3, ETA).unwrap();
        let p = SchedulePulse { mode_id: ModeId::R2, sideband: Sideband::Red, duration: t, rabi: 50e3 };
        let d = PhononDistribution::fock(1, 10).unwrap();
        // two π pulses without repump return the excitation to n = 1
        let sched = PulseSchedule::new(vec![p, p], false).unwrap();
        let out = run_schedule(&sched, &[mode.clone()], &[d.clone()]).unwrap();
        assert!((out[0].populations()[1] - 1.0).abs() < 1e-12);
        let sched = PulseSchedule::new(vec![p, p], true).unwrap();
        let out = run_schedule(&sched, &[mode], &[d]).unwrap();
        assert!((out[0].populations()[0] - 1.0).abs() < 1e-12);
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(200))]

        #[test]
        fn rsb_pi_pulses_never_heat(nbar in 0.0..20.0f64, targets in proptest::collection::vec(1usize..40, 1..20)) {
            let mut d = thermal(nbar).unwrap();
            for n in targets {
                let before = d.mean();
                let t = PulseSchedule::rsb_pi_time(n, 50e3, ETA).unwrap();
                d = apply_rsb_pulse(&d, &DriveParams::new(50e3, t, 0.0).unwrap(), ETA).unwrap();
                proptest::prop_assert!(d.mean() <= before + 1e-12);
                proptest::prop_assert!((d.total() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn heating_conserves_and_grows_linearly(nbar in 0.0..5.0f64, rate in 10.0..3000.0f64, t in 0.0..3e-3f64) {
            let d = thermal(nbar).unwrap();
            let out = evolve_heating(&d, &HeatingRate::new(rate, ModeId::R2).unwrap(), t).unwrap();
            proptest::prop_assert!((out.total() - 1.0).abs() < 1e-9);
            // truncation of the input costs up to its own mean deficit
            let deficit = nbar - d.mean();
            proptest::prop_assert!((out.mean() - (d.mean() + rate * t)).abs() < 1e-5 + deficit.abs(), "{} vs {}", out.mean(), d.mean() + rate * t);
        }
    }
}
