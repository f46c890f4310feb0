//! Physical constants, ion/beam descriptions and phonon-state representations
//! shared by every other module.
//!
//! Frequencies are stored as ordinary frequencies in Hz and only converted to
//! angular frequency inside formulas.

use std::f64::consts::{FRAC_PI_4, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// CODATA-2018 constants (SI).
pub mod constants {
    /// Reduced Planck constant, J s.
    pub const HBAR: f64 = 1.054_571_817e-34;
    /// Elementary charge, C.
    pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
    /// Unified atomic mass unit, kg.
    pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
    /// Electron mass, kg.
    pub const ELECTRON_MASS: f64 = 9.109_383_701_5e-31;
    /// Neutral ¹⁷¹Yb atomic mass, u.
    pub const YB171_ATOMIC_MASS_U: f64 = 170.936_331_5;
}

use constants::*;

/// Population at `n_max` above which a thermal distribution is rejected.
pub const TRUNCATION_TAIL_TOLERANCE: f64 = 1e-6;

/// Tolerance on the normalization of a constructed distribution.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonSpecies {
    /// kg
    pub mass: f64,
    /// C
    pub charge: f64,
    pub label: String,
}

impl IonSpecies {
    pub fn new(label: impl Into<String>, mass: f64, charge: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::domain(format!("ion mass must be positive, got {mass}")));
        }
        if charge == 0.0 || !charge.is_finite() {
            return Err(Error::domain("ion charge must be non-zero"));
        }
        Ok(Self { mass, charge, label: label.into() })
    }

    /// Singly charged ¹⁷¹Yb⁺.
    pub fn yb171() -> Self {
        Self {
            mass: YB171_ATOMIC_MASS_U * ATOMIC_MASS_UNIT - ELECTRON_MASS,
            charge: ELEMENTARY_CHARGE,
            label: "171Yb+".to_string(),
        }
    }

    /// Same species with the mass scaled by `factor`.
    pub fn with_mass_scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.label.clone(), self.mass * factor, self.charge)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamConfiguration {
    CoPropagating,
    CounterPropagating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeId {
    R1,
    R2,
    Com,
    Tilt,
    Axial,
}

/// Raman beam pair. Δk points along the chip normal (y); the projection
/// angles are measured between Δk and the r1 / r2 principal axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RamanGeometry {
    /// m
    pub wavelength: f64,
    pub configuration: BeamConfiguration,
    /// rad, for (r1, r2)
    pub projection_angles: [f64; 2],
}

impl RamanGeometry {
    pub fn new(
        wavelength: f64,
        configuration: BeamConfiguration,
        projection_angles: [f64; 2],
    ) -> Result<Self> {
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::domain(format!("wavelength must be positive, got {wavelength}")));
        }
        Ok(Self { wavelength, configuration, projection_angles })
    }

    /// 355 nm counter-propagating beams, 45° to both radial modes.
    pub fn counter_propagating_355() -> Self {
        Self {
            wavelength: 355e-9,
            configuration: BeamConfiguration::CounterPropagating,
            projection_angles: [FRAC_PI_4, FRAC_PI_4],
        }
    }

    pub fn co_propagating_355() -> Self {
        Self {
            configuration: BeamConfiguration::CoPropagating,
            ..Self::counter_propagating_355()
        }
    }

    /// |Δk| in rad/m.
    pub fn delta_k(&self) -> f64 {
        match self.configuration {
            BeamConfiguration::CoPropagating => 0.0,
            BeamConfiguration::CounterPropagating => 2.0 * TAU / self.wavelength,
        }
    }

    /// Angle between Δk and the axis of `mode`. Two-ion com/tilt modes lie
    /// along r2; the axial mode is perpendicular to Δk.
    pub fn projection_angle(&self, mode: ModeId) -> f64 {
        match mode {
            ModeId::R1 => self.projection_angles[0],
            ModeId::R2 | ModeId::Com | ModeId::Tilt => self.projection_angles[1],
            ModeId::Axial => PI / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    /// Secular frequency, Hz.
    pub frequency: f64,
    pub mode_id: ModeId,
    /// Lamb–Dicke parameter per participating ion.
    pub lamb_dicke: f64,
}

impl ModeSpec {
    pub fn new(mode_id: ModeId, frequency: f64, lamb_dicke: f64) -> Result<Self> {
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(Error::domain(format!("mode frequency must be positive, got {frequency}")));
        }
        if !(lamb_dicke >= 0.0 && lamb_dicke.is_finite()) {
            return Err(Error::domain(format!("Lamb-Dicke parameter must be >= 0, got {lamb_dicke}")));
        }
        Ok(Self { frequency, mode_id, lamb_dicke })
    }

    /// Single-ion mode whose η follows from the beam geometry.
    pub fn from_geometry(
        species: &IonSpecies,
        geometry: &RamanGeometry,
        mode_id: ModeId,
        frequency: f64,
    ) -> Result<Self> {
        let eta = lamb_dicke(species, geometry, frequency, geometry.projection_angle(mode_id))?;
        Self::new(mode_id, frequency, eta)
    }
}

/// Motional transition addressed by a Raman pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sideband {
    #[serde(alias = "rsb")]
    Red,
    Carrier,
    #[serde(alias = "bsb")]
    Blue,
}

impl Sideband {
    /// Change in phonon number driven by the transition.
    pub fn order(self) -> i32 {
        match self {
            Sideband::Red => -1,
            Sideband::Carrier => 0,
            Sideband::Blue => 1,
        }
    }
}

/// Pulse description. All frequencies in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveParams {
    /// Bare carrier Rabi frequency Ω/2π.
    pub rabi: f64,
    /// s
    pub duration: f64,
    #[serde(default)]
    pub detuning: f64,
}

impl DriveParams {
    pub fn new(rabi: f64, duration: f64, detuning: f64) -> Result<Self> {
        if !(rabi >= 0.0 && rabi.is_finite()) {
            return Err(Error::domain(format!("Rabi frequency must be >= 0, got {rabi}")));
        }
        if !(duration >= 0.0 && duration.is_finite()) {
            return Err(Error::domain(format!("pulse duration must be >= 0, got {duration}")));
        }
        if !detuning.is_finite() {
            return Err(Error::domain("detuning must be finite"));
        }
        Ok(Self { rabi, duration, detuning })
    }

    /// Resonant pulse of area π for the bare Rabi frequency.
    pub fn pi_pulse(rabi: f64) -> Result<Self> {
        if !(rabi > 0.0) {
            return Err(Error::domain("π pulse needs a positive Rabi frequency"));
        }
        Self::new(rabi, 0.5 / rabi, 0.0)
    }

    pub fn angular_rabi(&self) -> f64 {
        TAU * self.rabi
    }
}

/// Population over Fock states 0..=n_max of a single mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PhononDistribution {
    populations: Vec<f64>,
}

impl PhononDistribution {
    /// Builds a distribution from raw populations, renormalizing to unit sum.
    /// The raw sum must already be within 10⁻⁶ of one.
    pub fn new(populations: Vec<f64>) -> Result<Self> {
        if populations.is_empty() {
            return Err(Error::domain("empty phonon distribution"));
        }
        if populations.iter().any(|p| !(-1e-12..=1.0 + 1e-12).contains(p)) {
            return Err(Error::domain("phonon populations must lie in [0, 1]"));
        }
        let total: f64 = populations.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::domain(format!("phonon populations sum to {total}, expected 1")));
        }
        let populations = populations.into_iter().map(|p| p.max(0.0) / total).collect();
        Ok(Self { populations })
    }

    pub fn ground(n_max: usize) -> Self {
        Self::fock(0, n_max).expect("0 <= n_max")
    }

    pub fn fock(n: usize, n_max: usize) -> Result<Self> {
        if n > n_max {
            return Err(Error::domain(format!("Fock state {n} exceeds n_max = {n_max}")));
        }
        let mut populations = vec![0.0; n_max + 1];
        populations[n] = 1.0;
        Ok(Self { populations })
    }

    pub(crate) fn from_raw_unchecked(populations: Vec<f64>) -> Self {
        Self { populations }
    }

    pub fn populations(&self) -> &[f64] {
        &self.populations
    }

    pub fn n_max(&self) -> usize {
        self.populations.len() - 1
    }

    pub fn total(&self) -> f64 {
        self.populations.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.populations.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    /// Population in the last retained Fock state.
    pub fn tail(&self) -> f64 {
        self.populations[self.n_max()]
    }

    /// Extends the cutoff with empty states; never shrinks.
    pub fn padded(&self, n_max: usize) -> Self {
        let mut populations = self.populations.clone();
        if n_max + 1 > populations.len() {
            populations.resize(n_max + 1, 0.0);
        }
        Self { populations }
    }

    pub fn check_truncation(&self, tolerance: f64) -> Result<()> {
        let tail = self.tail();
        if tail > tolerance {
            let suggested = default_n_max(self.mean()).max(2 * self.n_max());
            return Err(Error::Truncation { n_max: self.n_max(), tail, suggested });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for PhononDistribution {
    type Error = Error;

    fn try_from(populations: Vec<f64>) -> Result<Self> {
        Self::new(populations)
    }
}

impl From<PhononDistribution> for Vec<f64> {
    fn from(d: PhononDistribution) -> Self {
        d.populations
    }
}

/// Default Fock cutoff for a thermal state of mean `nbar`:
/// max(30, ⌈10 n̄⌉, smallest N with p(N) < 10⁻⁷).
pub fn default_n_max(nbar: f64) -> usize {
    let base = 30usize.max((10.0 * nbar).ceil() as usize);
    if nbar <= 0.0 {
        return base;
    }
    // p(N) = q^N / (n̄+1) with q = n̄/(n̄+1)
    let q = nbar / (nbar + 1.0);
    let needed = ((1e-7 * (nbar + 1.0)).ln() / q.ln()).ceil();
    base.max(needed as usize)
}

/// Thermal (geometric) distribution p(n) = n̄ⁿ/(n̄+1)ⁿ⁺¹ renormalized over
/// 0..=n_max.
pub fn thermal_pmf(nbar: f64, n_max: usize) -> Result<PhononDistribution> {
    if !(nbar >= 0.0 && nbar.is_finite()) {
        return Err(Error::domain(format!("mean phonon number must be >= 0, got {nbar}")));
    }
    if n_max < 1 {
        return Err(Error::domain("n_max must be at least 1"));
    }
    let q = nbar / (nbar + 1.0);
    let mut populations = Vec::with_capacity(n_max + 1);
    let mut p = 1.0 / (nbar + 1.0);
    for _ in 0..=n_max {
        populations.push(p);
        p *= q;
    }
    let total: f64 = populations.iter().sum();
    populations.iter_mut().for_each(|p| *p /= total);
    let dist = PhononDistribution::from_raw_unchecked(populations);
    if dist.tail() > TRUNCATION_TAIL_TOLERANCE {
        return Err(Error::Truncation {
            n_max,
            tail: dist.tail(),
            suggested: default_n_max(nbar),
        });
    }
    Ok(dist)
}

/// Thermal distribution with the default cutoff.
pub fn thermal(nbar: f64) -> Result<PhononDistribution> {
    thermal_pmf(nbar, default_n_max(nbar.max(0.0)))
}

/// Ground-state wavepacket extent x₀ = √(ħ/2mω), m.
pub fn zero_point_spread(species: &IonSpecies, mode_frequency: f64) -> Result<f64> {
    if !(mode_frequency > 0.0 && mode_frequency.is_finite()) {
        return Err(Error::domain(format!("mode frequency must be positive, got {mode_frequency}")));
    }
    Ok((HBAR / (2.0 * species.mass * TAU * mode_frequency)).sqrt())
}

/// η = |Δk| |cos θ| x₀.
pub fn lamb_dicke(
    species: &IonSpecies,
    geometry: &RamanGeometry,
    mode_frequency: f64,
    projection_angle: f64,
) -> Result<f64> {
    let x0 = zero_point_spread(species, mode_frequency)?;
    Ok(geometry.delta_k() * projection_angle.cos().abs() * x0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const F1: f64 = 1.84e6;
    const F2: f64 = 2.11e6;

    #[test]
    fn co_propagating_has_no_coupling() {
        let yb = IonSpecies::yb171();
        let g = RamanGeometry::co_propagating_355();
        for f in [1e5, F1, F2, 1e7] {
            assert_eq!(lamb_dicke(&yb, &g, f, 0.3).unwrap(), 0.0);
        }
    }

    #[test]
    fn lamb_dicke_reference_value() {
        // mpmath, 40 digits
        let eta = lamb_dicke(&IonSpecies::yb171(), &RamanGeometry::counter_propagating_355(), F2, FRAC_PI_4).unwrap();
        assert_relative_eq!(eta, 0.093_695_210_751_740_93, max_relative = 1e-9);
    }

    #[test]
    fn lamb_dicke_mass_scaling() {
        let yb = IonSpecies::yb171();
        let g = RamanGeometry::counter_propagating_355();
        let heavy = yb.with_mass_scaled(2.0).unwrap();
        let a = lamb_dicke(&yb, &g, F2, 0.7).unwrap();
        let b = lamb_dicke(&heavy, &g, F2, 0.7).unwrap();
        assert_relative_eq!(b, a / 2f64.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn lamb_dicke_rejects_bad_frequency() {
        let yb = IonSpecies::yb171();
        let g = RamanGeometry::counter_propagating_355();
        assert!(matches!(lamb_dicke(&yb, &g, 0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(lamb_dicke(&yb, &g, -1.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_point_spread_values() {
        let yb = IonSpecies::yb171();
        let x2 = zero_point_spread(&yb, F2).unwrap();
        assert_relative_eq!(x2, 3.743_267_634_984_716e-9, max_relative = 1e-9);
        assert_relative_eq!(zero_point_spread(&yb, 4.0 * F2).unwrap(), x2 / 2.0, max_relative = 1e-14);
        assert!(zero_point_spread(&yb, F1).unwrap() > x2);
        assert!(zero_point_spread(&yb, 0.0).is_err());
    }

    #[test]
    fn thermal_closed_forms() {
        let d = thermal_pmf(0.0, 10).unwrap();
        assert_eq!(d.populations()[0], 1.0);
        assert!(d.populations()[1..].iter().all(|&p| p == 0.0));

        let d = thermal_pmf(1.0, 60).unwrap();
        assert_relative_eq!(d.populations()[0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(d.populations()[1], 0.25, max_relative = 1e-15);
        assert_relative_eq!(d.populations()[2], 0.125, max_relative = 1e-15);
    }

    #[test]
    fn thermal_mean_at_large_nbar() {
        // Exact truncated mean 15 - 1.101338e-6 (mpmath summation, n_max = 300).
        let d = thermal_pmf(15.0, 300).unwrap();
        assert_relative_eq!(d.mean(), 15.0 - 1.101_338_175_876e-6, epsilon = 1e-11);
        assert!((d.mean() - 15.0).abs() < 1.2e-6);
    }

    #[test]
    fn thermal_rejects_bad_input() {
        assert!(matches!(thermal_pmf(-1.0, 10), Err(Error::Domain(_))));
        match thermal_pmf(15.0, 40) {
            Err(Error::Truncation { suggested, .. }) => assert!(suggested >= 150),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn default_cutoff_keeps_tail_small() {
        for nbar in [0.0, 0.1, 1.0, 4.0, 14.0, 15.0, 50.0] {
            let d = thermal(nbar).unwrap();
            assert!(d.tail() < 1e-6, "n̄ = {nbar}");
            assert!(d.n_max() >= 30);
        }
    }

    #[test]
    fn distribution_validation() {
        assert!(PhononDistribution::new(vec![]).is_err());
        assert!(PhononDistribution::new(vec![0.5, 0.4]).is_err());
        assert!(PhononDistribution::new(vec![1.5, -0.5]).is_err());
        let d = PhononDistribution::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(d.mean(), 0.75);
        assert_eq!(d.padded(5).n_max(), 5);
        assert_eq!(d.padded(5).mean(), 0.75);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn thermal_normalized_and_mean(nbar in 0.0f64..50.0) {
                let n_max = default_n_max(nbar);
                let d = thermal_pmf(nbar, n_max).unwrap();
                prop_assert!((d.total() - 1.0).abs() < NORMALIZATION_TOLERANCE);
                prop_assert!(d.populations().iter().all(|p| (0.0..=1.0).contains(p)));
                // Truncated geometric mean deficit is (N+1) qᴺ⁺¹/(1-qᴺ⁺¹).
                let q = nbar / (nbar + 1.0);
                let tail_mass = q.powi(n_max as i32 + 1);
                let bound = (n_max as f64 + 1.0) * tail_mass / (1.0 - tail_mass) + 1e-12 * (1.0 + nbar);
                prop_assert!((d.mean() - nbar).abs() <= bound);
            }

            #[test]
            fn lamb_dicke_homogeneous_in_delta_k(k in 0.1f64..10.0, f in 1e5f64..1e7, theta in 0.0f64..1.5) {
                let yb = IonSpecies::yb171();
                let g = RamanGeometry::counter_propagating_355();
                let scaled = RamanGeometry::new(g.wavelength / k, g.configuration, g.projection_angles).unwrap();
                let a = lamb_dicke(&yb, &g, f, theta).unwrap();
                let b = lamb_dicke(&yb, &scaled, f, theta).unwrap();
                prop_assert!((b - k * a).abs() <= 1e-12 * b.abs().max(1e-300));
            }
        }
    }
}
