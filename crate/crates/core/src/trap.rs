//! Surface-electrode electrostatics in the gapless-plane approximation.
//!
//! The chip surface is the plane y = 0, x runs across the electrodes and z
//! along the trap axis. Every rectangular patch is held at its voltage with
//! the remainder of the plane grounded, which admits a closed-form potential.
//! RF patches carry the RF amplitude as `voltage`; the pseudopotential is
//! Ψ = q²|E_RF|²/(4mΩ²).

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{IonSpecies, ModeSpec};

pub type Position = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ElectrodeRole {
    /// Inner DC, between the slot and the RF rails.
    Idc,
    Rf,
    /// Outer DC, outside the RF rails.
    Odc,
    Gnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrodePatch {
    pub role: ElectrodeRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub x1: f64,
    pub x2: f64,
    pub z1: f64,
    pub z2: f64,
    /// DC voltage, or RF amplitude for RF patches.
    pub voltage: f64,
}

impl ElectrodePatch {
    pub fn new(role: ElectrodeRole, x: (f64, f64), z: (f64, f64), voltage: f64) -> Result<Self> {
        let patch = Self { role, name: None, x1: x.0, x2: x.1, z1: z.0, z2: z.1, voltage };
        patch.validate()?;
        Ok(patch)
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn with_voltage(&self, voltage: f64) -> Self {
        Self { voltage, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.x2, self.z1, self.z2, self.voltage].iter().all(|v| v.is_finite());
        if !finite || !(self.x2 > self.x1) || !(self.z2 > self.z1) {
            return Err(Error::domain(format!("invalid electrode rectangle {self:?}")));
        }
        Ok(())
    }

    pub fn is_rf(&self) -> bool {
        self.role == ElectrodeRole::Rf
    }
}

fn check_point(point: &Position) -> Result<()> {
    if !(point.y > 0.0) || !point.iter().all(|v| v.is_finite()) {
        return Err(Error::domain(format!("field point must lie above the chip (y > 0), got {point:?}")));
    }
    Ok(())
}

/// Signed corner contributions (xᵢ, zⱼ, sign) of the four-arctan formula.
fn corners(p: &ElectrodePatch) -> [(f64, f64, f64); 4] {
    [(p.x2, p.z2, 1.0), (p.x1, p.z2, -1.0), (p.x2, p.z1, -1.0), (p.x1, p.z1, 1.0)]
}

/// Φ = (V/2π) Σ ± arctan[(xᵢ−x)(zⱼ−z) / (y Rᵢⱼ)].
pub fn patch_potential(patch: &ElectrodePatch, point: &Position) -> Result<f64> {
    check_point(point)?;
    let (x, y, z) = (point.x, point.y, point.z);
    let sum: f64 = corners(patch)
        .iter()
        .map(|&(xi, zj, sign)| {
            let a = xi - x;
            let b = zj - z;
            let r = (a * a + b * b + y * y).sqrt();
            sign * (a * b / (y * r)).atan()
        })
        .sum();
    Ok(patch.voltage / TAU * sum)
}

/// Analytic E = −∇Φ of a single patch.
pub fn patch_field(patch: &ElectrodePatch, point: &Position) -> Result<Vector3<f64>> {
    check_point(point)?;
    let (x, y, z) = (point.x, point.y, point.z);
    let mut grad = Vector3::zeros();
    for (xi, zj, sign) in corners(patch) {
        let a = xi - x;
        let b = zj - z;
        let r = (a * a + b * b + y * y).sqrt();
        let ay = a * a + y * y;
        let by = b * b + y * y;
        // f = atan(ab/(yR)); ∂f/∂a = by/(R(a²+y²)), ∂f/∂b = ay/(R(b²+y²)),
        // ∂f/∂y = −ab(R²+y²)/(R(a²+y²)(b²+y²)); a = xᵢ − x, b = zⱼ − z.
        let df_da = b * y / (r * ay);
        let df_db = a * y / (r * by);
        let df_dy = -a * b * (r * r + y * y) / (r * ay * by);
        grad.x -= sign * df_da;
        grad.y += sign * df_dy;
        grad.z -= sign * df_db;
    }
    Ok(-patch.voltage / TAU * grad)
}

/// Total potential of a set of patches.
pub fn potential(patches: &[ElectrodePatch], point: &Position) -> Result<f64> {
    patches.iter().map(|p| patch_potential(p, point)).sum()
}

/// Total analytic field of a set of patches, V/m.
pub fn field(patches: &[ElectrodePatch], point: &Position) -> Result<Vector3<f64>> {
    check_point(point)?;
    let mut e = Vector3::zeros();
    for p in patches {
        e += patch_field(p, point)?;
    }
    Ok(e)
}

/// ∂Eᵢ/∂xⱼ by central differences of the analytic field.
pub fn field_gradient(patches: &[ElectrodePatch], point: &Position) -> Result<Matrix3<f64>> {
    let h = 1e-4 * point.y;
    let mut g = Matrix3::zeros();
    for j in 0..3 {
        let mut d = Vector3::zeros();
        d[j] = h;
        let col = (field(patches, &(point + d))? - field(patches, &(point - d))?) / (2.0 * h);
        g.set_column(j, &col);
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrodeLayout {
    /// Ω_RF/2π, Hz
    #[serde(default = "default_rf_drive")]
    pub rf_drive_frequency: f64,
    pub patches: Vec<ElectrodePatch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

pub const DEFAULT_RF_DRIVE: f64 = 20e6;

fn default_rf_drive() -> f64 {
    DEFAULT_RF_DRIVE
}

impl ElectrodeLayout {
    pub fn new(patches: Vec<ElectrodePatch>, rf_drive_frequency: f64) -> Result<Self> {
        let layout = Self { rf_drive_frequency, patches, provenance: None };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rf_drive_frequency > 0.0 && self.rf_drive_frequency.is_finite()) {
            return Err(Error::domain("RF drive frequency must be positive"));
        }
        if self.patches.is_empty() {
            return Err(Error::domain("layout has no electrodes"));
        }
        self.patches.iter().try_for_each(ElectrodePatch::validate)
    }

    pub fn rf_patches(&self) -> Vec<ElectrodePatch> {
        self.patches.iter().filter(|p| p.is_rf()).cloned().collect()
    }

    pub fn dc_patches(&self) -> Vec<ElectrodePatch> {
        self.patches.iter().filter(|p| !p.is_rf()).cloned().collect()
    }

    pub fn rf_field(&self, point: &Position) -> Result<Vector3<f64>> {
        field(&self.rf_patches(), point)
    }

    pub fn dc_field(&self, point: &Position) -> Result<Vector3<f64>> {
        field(&self.dc_patches(), point)
    }

    pub fn rf_amplitude(&self) -> f64 {
        self.patches.iter().filter(|p| p.is_rf()).map(|p| p.voltage.abs()).fold(0.0, f64::max)
    }

    /// Copy with every RF amplitude multiplied by `factor`.
    pub fn with_rf_scaled(&self, factor: f64) -> Self {
        let patches = self
            .patches
            .iter()
            .map(|p| if p.is_rf() { p.with_voltage(p.voltage * factor) } else { p.clone() })
            .collect();
        Self { patches, ..self.clone() }
    }

    pub fn indices_by_role(&self, role: ElectrodeRole) -> Vec<usize> {
        (0..self.patches.len()).filter(|&i| self.patches[i].role == role).collect()
    }

    /// Default calibrated chip model (see [`calibrate_layout`]).
    pub fn default_calibrated() -> Self {
        calibrate_layout(&CalibrationTargets::default()).expect("default calibration targets are consistent")
    }
}

/// Potential-energy model of one ion in a layout.
struct Energy<'a> {
    rf: Vec<ElectrodePatch>,
    dc: Vec<ElectrodePatch>,
    species: &'a IonSpecies,
    /// q²/(4mΩ²)
    pseudo_scale: f64,
}

impl<'a> Energy<'a> {
    fn new(layout: &ElectrodeLayout, species: &'a IonSpecies) -> Self {
        let omega = TAU * layout.rf_drive_frequency;
        Self {
            rf: layout.rf_patches(),
            dc: layout.dc_patches(),
            species,
            pseudo_scale: species.charge.powi(2) / (4.0 * species.mass * omega * omega),
        }
    }

    fn value(&self, r: &Position) -> Result<f64> {
        let e = field(&self.rf, r)?;
        Ok(self.pseudo_scale * e.norm_squared() + self.species.charge * potential(&self.dc, r)?)
    }

    fn gradient(&self, r: &Position) -> Result<Vector3<f64>> {
        let e = field(&self.rf, r)?;
        let g = field_gradient(&self.rf, r)?;
        Ok(2.0 * self.pseudo_scale * g.transpose() * e - self.species.charge * field(&self.dc, r)?)
    }

    /// Gauss–Newton curvature: drops the E·∇∇E term, exact at an RF null.
    fn gauss_newton(&self, r: &Position) -> Result<Matrix3<f64>> {
        let g = field_gradient(&self.rf, r)?;
        let gd = field_gradient(&self.dc, r)?;
        Ok(2.0 * self.pseudo_scale * g.transpose() * g - self.species.charge * gd)
    }

    /// Full Hessian by central differences of the gradient.
    fn hessian(&self, r: &Position) -> Result<Matrix3<f64>> {
        let h = 2e-4 * r.y;
        let mut m = Matrix3::zeros();
        for j in 0..3 {
            let mut d = Vector3::zeros();
            d[j] = h;
            let col = (self.gradient(&(r + d))? - self.gradient(&(r - d))?) / (2.0 * h);
            m.set_column(j, &col);
        }
        Ok(0.5 * (m + m.transpose()))
    }

    fn rf_hessian(&self, r: &Position) -> Result<Matrix3<f64>> {
        let g = field_gradient(&self.rf, r)?;
        Ok(2.0 * self.pseudo_scale * g.transpose() * g)
    }
}

/// Axis-aligned search region for the trapping minimum, m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub grid: usize,
}

impl Default for SearchBox {
    fn default() -> Self {
        Self { min: [-60e-6, 20e-6, -60e-6], max: [60e-6, 300e-6, 60e-6], grid: 9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapOperatingPoint {
    /// Hz
    pub rf_drive_frequency: f64,
    /// V
    pub rf_amplitude: f64,
    /// (name or index, V) for every DC patch
    pub dc_voltages: Vec<(String, f64)>,
    /// Trapping minimum (RF null when DC fields are compensated), m.
    pub rf_null: [f64; 3],
    /// Secular frequencies (r1, r2, axial), Hz; r1 < r2 by construction.
    pub secular_frequencies: [f64; 3],
    /// Unit principal axes for (r1, r2, axial).
    pub principal_axes: [[f64; 3]; 3],
    /// RF-only radial frequencies along r1, r2, Hz.
    pub pseudo_frequencies: [f64; 2],
    /// q = 2√2 ω_pseudo / Ω_RF along r1, r2.
    pub mathieu_q: [f64; 2],
    /// m
    pub ion_height: f64,
    /// |E_RF| at the minimum, V/m (zero at an exact null).
    pub residual_rf_field: f64,
}

impl TrapOperatingPoint {
    pub fn null(&self) -> Position {
        Vector3::from(self.rf_null)
    }

    /// Curvature frequency along the chip normal, from the principal
    /// frequencies weighted by the axis projections onto y.
    pub fn normal_frequency(&self) -> f64 {
        let w2: f64 = (0..3).map(|i| self.secular_frequencies[i].powi(2) * self.principal_axes[i][1].powi(2)).sum();
        w2.sqrt()
    }

    /// Mathieu q along the chip normal.
    pub fn normal_mathieu_q(&self) -> f64 {
        let q2: f64 = (0..2).map(|i| self.mathieu_q[i].powi(2) * self.principal_axes[i][1].powi(2)).sum();
        q2.sqrt()
    }
}

const MAX_NEWTON_STEPS: usize = 200;
const POSITION_TOLERANCE: f64 = 1e-9;

/// Locates the pseudopotential-plus-DC minimum (coarse grid, then
/// Gauss–Newton refinement to 1 nm) and derives the secular frequencies
/// from the Hessian there.
pub fn rf_null_and_frequencies(
    layout: &ElectrodeLayout,
    species: &IonSpecies,
    search: &SearchBox,
) -> Result<TrapOperatingPoint> {
    layout.validate()?;
    if layout.rf_patches().is_empty() {
        return Err(Error::SearchFailed("layout has no RF electrode".into()));
    }
    let energy = Energy::new(layout, species);

    // coarse RF null: grid minimum of |E_RF|², then Gauss–Newton on E_RF = 0
    let rf = layout.rf_patches();
    let n = search.grid.max(2);
    let mut best: Option<(f64, Position)> = None;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let frac = |idx: usize, a: usize| search.min[a] + (search.max[a] - search.min[a]) * idx as f64 / (n - 1) as f64;
                let r = Vector3::new(frac(i, 0), frac(j, 1), frac(k, 2));
                if r.y <= 0.0 {
                    continue;
                }
                let e2 = field(&rf, &r)?.norm_squared();
                if best.map_or(true, |(b, _)| e2 < b) {
                    best = Some((e2, r));
                }
            }
        }
    }
    let (_, mut r) = best.ok_or_else(|| Error::SearchFailed("empty search box".into()))?;
    for _ in 0..MAX_NEWTON_STEPS {
        let e = field(&rf, &r)?;
        let g = field_gradient(&rf, &r)?;
        let Some(step) = (g.transpose() * g).cholesky().map(|ch| -ch.solve(&(g.transpose() * e))) else { break };
        let step = if step.norm() > 0.25 * r.y { step * (0.25 * r.y / step.norm()) } else { step };
        if (r + step).y <= 0.0 {
            break;
        }
        r += step;
        if step.norm() < POSITION_TOLERANCE * 1e-3 {
            break;
        }
    }

    // trapping minimum including DC: Newton with Gauss–Newton curvature
    let mut converged = false;
    for _ in 0..MAX_NEWTON_STEPS {
        let grad = energy.gradient(&r)?;
        let curv = energy.gauss_newton(&r)?;
        let Some(ch) = curv.cholesky() else {
            return Err(Error::Unstable(format!("potential is not confining near {r:?}")));
        };
        let mut step = -ch.solve(&grad);
        let proposed = step.norm();
        let cap = 0.25 * r.y;
        if proposed > cap {
            step *= cap / proposed;
        }
        let u0 = energy.value(&r)?;
        let mut trial = r + step;
        let mut shrink = 0;
        while shrink < 30 && (trial.y <= 0.0 || energy.value(&trial)? > u0) {
            step *= 0.5;
            trial = r + step;
            shrink += 1;
        }
        if trial.y > 0.0 {
            r = trial;
        }
        if proposed < POSITION_TOLERANCE * 1e-1 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SearchFailed(format!(
            "refinement did not converge within {MAX_NEWTON_STEPS} steps; last point {r:?}"
        )));
    }
    for a in 0..3 {
        if r[a] < search.min[a] - 1e-9 || r[a] > search.max[a] + 1e-9 {
            return Err(Error::SearchFailed(format!("minimum {r:?} lies outside the search box")));
        }
    }

    let hess = energy.hessian(&r)?;
    let eig = SymmetricEigen::new(hess);
    let mut modes: Vec<(f64, Vector3<f64>)> = (0..3)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()))
        .collect();
    if let Some((k, _)) = modes.iter().find(|(k, _)| !(*k > 0.0)) {
        return Err(Error::Unstable(format!("non-positive curvature {k:.3e} J/m² at {r:?}")));
    }
    // axial: the eigenvector closest to z; radial sorted by frequency
    let axial_idx = (0..3)
        .max_by(|&a, &b| modes[a].1.z.abs().total_cmp(&modes[b].1.z.abs()))
        .expect("three modes");
    let axial = modes.remove(axial_idx);
    modes.sort_by(|a, b| a.0.total_cmp(&b.0));

    let to_freq = |k: f64| (k / species.mass).sqrt() / TAU;
    let orient = |v: Vector3<f64>| {
        // fixed sign convention: positive y component (or x for in-plane axes)
        let s = if v.y.abs() > 1e-12 { v.y.signum() } else if v.x.abs() > 1e-12 { v.x.signum() } else { v.z.signum() };
        let w = v * s;
        [w.x, w.y, w.z]
    };
    let rf_hess = energy.rf_hessian(&r)?;
    let omega_rf = TAU * layout.rf_drive_frequency;
    let mut pseudo = [0.0; 2];
    let mut mathieu_q = [0.0; 2];
    for i in 0..2 {
        let u = modes[i].1;
        let k = (u.transpose() * rf_hess * u)[(0, 0)];
        pseudo[i] = to_freq(k.max(0.0));
        mathieu_q[i] = 2.0 * 2f64.sqrt() * TAU * pseudo[i] / omega_rf;
        if mathieu_q[i] >= 0.9 {
            return Err(Error::Unstable(format!("Mathieu q = {:.3} exceeds the 0.9 sanity bound", mathieu_q[i])));
        }
    }
    let dc_voltages = layout
        .patches
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.is_rf())
        .map(|(i, p)| (p.name.clone().unwrap_or_else(|| format!("patch{i}")), p.voltage))
        .collect();
    Ok(TrapOperatingPoint {
        rf_drive_frequency: layout.rf_drive_frequency,
        rf_amplitude: layout.rf_amplitude(),
        dc_voltages,
        rf_null: [r.x, r.y, r.z],
        secular_frequencies: [to_freq(modes[0].0), to_freq(modes[1].0), to_freq(axial.0)],
        principal_axes: [orient(modes[0].1), orient(modes[1].1), orient(axial.1)],
        pseudo_frequencies: pseudo,
        mathieu_q,
        ion_height: r.y,
        residual_rf_field: layout.rf_field(&r)?.norm(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompensationGain {
    /// ΔE per volt applied to every probe patch, V/m/V.
    pub per_volt: [f64; 3],
    pub magnitude: f64,
    pub direction: [f64; 3],
}

impl CompensationGain {
    /// Field along the chip normal per volt.
    pub fn normal(&self) -> f64 {
        self.per_volt[1]
    }
}

/// Linear map ΔE = g·ΔV for a voltage ΔV added to each probe patch.
pub fn compensation_gain(layout: &ElectrodeLayout, probes: &[usize], at: &Position) -> Result<CompensationGain> {
    if probes.is_empty() {
        return Err(Error::domain("no probe electrodes given"));
    }
    let mut unit = Vec::with_capacity(probes.len());
    for &i in probes {
        let p = layout
            .patches
            .get(i)
            .ok_or_else(|| Error::domain(format!("probe patch {i} not in layout")))?;
        unit.push(p.with_voltage(1.0));
    }
    let e = field(&unit, at)?;
    let magnitude = e.norm();
    if !(magnitude > 1e-9) {
        return Err(Error::DegenerateGeometry("probe electrodes produce no field at the ion".into()));
    }
    let dir = e / magnitude;
    Ok(CompensationGain { per_volt: [e.x, e.y, e.z], magnitude, direction: [dir.x, dir.y, dir.z] })
}

/// Static displacement Δy = qE/(mω²) of an ion in a mode of frequency ω.
pub fn displacement_from_field(e_y: f64, species: &IonSpecies, mode: &ModeSpec) -> Result<f64> {
    if !(mode.frequency > 0.0) {
        return Err(Error::domain("mode frequency must be positive"));
    }
    if !e_y.is_finite() {
        return Err(Error::domain("field must be finite"));
    }
    let w = TAU * mode.frequency;
    Ok(species.charge * e_y / (species.mass * w * w))
}

/// Operating point requested from the default layout calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTargets {
    pub ion_height: f64,
    /// r1, r2 secular frequencies, Hz
    pub radial_frequencies: [f64; 2],
    /// Hz; not reported for the chip, chosen for a stable 3D well
    pub axial_frequency: f64,
    /// Angle between the chip normal and each radial principal axis, rad.
    pub axis_tilt: f64,
    pub rf_drive_frequency: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self {
            ion_height: 100e-6,
            radial_frequencies: [1.84e6, 2.11e6],
            axial_frequency: 0.6e6,
            axis_tilt: PI / 4.0,
            rf_drive_frequency: DEFAULT_RF_DRIVE,
        }
    }
}

// Electrode geometry of the default chip model, m. The 8 µm gaps are split
// evenly between neighbours.
const AXIAL_HALF_LENGTH: f64 = 2000e-6;
const SLOT_HALF_WIDTH: f64 = 20e-6;
const RF_INNER_EDGE: f64 = 60e-6;
const ODC_WIDTH: f64 = 200e-6;
const ODC_CENTER_HALF_LENGTH: f64 = 100e-6;
const ODC_ENDCAP_LENGTH: f64 = 400e-6;

/// Builds the default five-rail layout and solves for the RF amplitude and
/// six DC voltages that reproduce the target operating point.
///
/// For two RF strips on [a, b] and [−b, −a] the null height is √(ab), which
/// fixes the outer RF edge. The RF amplitude then sets the trace of the
/// curvature (DC contributes none by Laplace), and the DC voltages are the
/// minimum-norm solution for zero field at the null plus the remaining
/// traceless curvature.
pub fn calibrate_layout(targets: &CalibrationTargets) -> Result<ElectrodeLayout> {
    let species = IonSpecies::yb171();
    calibrate_layout_for(targets, &species)
}

pub fn calibrate_layout_for(targets: &CalibrationTargets, species: &IonSpecies) -> Result<ElectrodeLayout> {
    let h = targets.ion_height;
    if !(h > RF_INNER_EDGE) {
        return Err(Error::domain(format!("ion height must exceed the RF inner edge ({RF_INNER_EDGE} m)")));
    }
    let a = RF_INNER_EDGE;
    let b = h * h / a;
    let l = AXIAL_HALF_LENGTH;
    let (zc, ze) = (ODC_CENTER_HALF_LENGTH, ODC_ENDCAP_LENGTH);
    let s = SLOT_HALF_WIDTH;
    let w = ODC_WIDTH;

    let mut patches = vec![
        ElectrodePatch::new(ElectrodeRole::Gnd, (-s, s), (-l, l), 0.0)?.named("slot"),
        ElectrodePatch::new(ElectrodeRole::Idc, (-a, -s), (-l, l), 0.0)?.named("idc_left"),
        ElectrodePatch::new(ElectrodeRole::Idc, (s, a), (-l, l), 0.0)?.named("idc_right"),
        ElectrodePatch::new(ElectrodeRole::Rf, (-b, -a), (-l, l), 1.0)?.named("rf_left"),
        ElectrodePatch::new(ElectrodeRole::Rf, (a, b), (-l, l), 1.0)?.named("rf_right"),
        ElectrodePatch::new(ElectrodeRole::Odc, (-b - w, -b), (-zc, zc), 0.0)?.named("odc_center_left"),
        ElectrodePatch::new(ElectrodeRole::Odc, (b, b + w), (-zc, zc), 0.0)?.named("odc_center_right"),
        ElectrodePatch::new(ElectrodeRole::Odc, (-b - w, -b), (zc, zc + ze), 0.0)?.named("odc_end_left_pos"),
        ElectrodePatch::new(ElectrodeRole::Odc, (-b - w, -b), (-zc - ze, -zc), 0.0)?.named("odc_end_left_neg"),
        ElectrodePatch::new(ElectrodeRole::Odc, (b, b + w), (zc, zc + ze), 0.0)?.named("odc_end_right_pos"),
        ElectrodePatch::new(ElectrodeRole::Odc, (b, b + w), (-zc - ze, -zc), 0.0)?.named("odc_end_right_neg"),
    ];
    // DC control groups (endcap pairs tied together)
    let groups: [&[usize]; 6] = [&[1], &[2], &[5], &[6], &[7, 8], &[9, 10]];

    let layout = ElectrodeLayout::new(patches.clone(), targets.rf_drive_frequency)?;
    let rf_only = ElectrodeLayout { patches: layout.rf_patches(), ..layout.clone() };
    let null = find_rf_null(&rf_only, h)?;

    let omega = TAU * targets.rf_drive_frequency;
    let g = field_gradient(&rf_only.patches, &null)?;
    let k_rf_unit = species.charge.powi(2) / (2.0 * species.mass * omega * omega) * g.transpose() * g;

    let [f1, f2] = targets.radial_frequencies;
    let (w1, w2, wz) = (TAU * f1, TAU * f2, TAU * targets.axial_frequency);
    let th = targets.axis_tilt;
    let u1 = Vector3::new(th.sin(), th.cos(), 0.0);
    let u2 = Vector3::new(th.cos(), -th.sin(), 0.0);
    let uz = Vector3::z();
    let m = species.mass;
    let k_target = m * (w1 * w1 * u1 * u1.transpose() + w2 * w2 * u2 * u2.transpose() + wz * wz * uz * uz.transpose());

    let v_rf2 = k_target.trace() / k_rf_unit.trace();
    if !(v_rf2 > 0.0) {
        return Err(Error::DegenerateGeometry("RF electrodes give no radial confinement".into()));
    }
    let v_rf = v_rf2.sqrt();
    // DC must supply q ∇∇Φ = K_target − K_RF
    let hess_target = (k_target - v_rf2 * k_rf_unit) / species.charge;

    // rows: Ex, Ey, Ez, Hxx, Hyy, Hxy, Hxz, Hyz (Hzz follows from Laplace)
    const CURV_SCALE: f64 = 1e-5;
    let mut sys = DMatrix::zeros(8, groups.len());
    for (c, grp) in groups.iter().enumerate() {
        let unit: Vec<ElectrodePatch> = grp.iter().map(|&i| patches[i].with_voltage(1.0)).collect();
        let e = field(&unit, &null)?;
        let hess = -field_gradient(&unit, &null)?;
        let col = [e.x, e.y, e.z, hess[(0, 0)], hess[(1, 1)], hess[(0, 1)], hess[(0, 2)], hess[(1, 2)]];
        for (rix, v) in col.iter().enumerate() {
            sys[(rix, c)] = if rix < 3 { *v } else { v * CURV_SCALE };
        }
    }
    let rhs = DVector::from_vec(vec![
        0.0,
        0.0,
        0.0,
        hess_target[(0, 0)] * CURV_SCALE,
        hess_target[(1, 1)] * CURV_SCALE,
        hess_target[(0, 1)] * CURV_SCALE,
        hess_target[(0, 2)] * CURV_SCALE,
        hess_target[(1, 2)] * CURV_SCALE,
    ]);
    let svd = sys.clone().svd(true, true);
    let tol = 1e-9 * svd.singular_values.max();
    let volts = svd
        .solve(&rhs, tol)
        .map_err(|e| Error::DegenerateGeometry(format!("DC calibration solve failed: {e}")))?;
    let residual = (&sys * &volts - &rhs).amax();
    if residual > 1e-6 * rhs.amax() {
        return Err(Error::DegenerateGeometry(format!(
            "DC electrodes cannot reach the requested curvature (residual {residual:.3e})"
        )));
    }
    for (grp, v) in groups.iter().zip(volts.iter()) {
        for &i in *grp {
            patches[i].voltage = *v;
        }
    }
    for p in patches.iter_mut().filter(|p| p.is_rf()) {
        p.voltage = v_rf;
    }
    let mut out = ElectrodeLayout::new(patches, targets.rf_drive_frequency)?;
    out.provenance = Some(format!(
        "calibrated, not measured: gapless-plane model solved for ion height {:.1} um, \
         radial frequencies {:.3}/{:.3} MHz (axes {:.0} deg from the chip normal), axial {:.3} MHz, RF drive {:.1} MHz",
        h * 1e6,
        f1 * 1e-6,
        f2 * 1e-6,
        th.to_degrees(),
        targets.axial_frequency * 1e-6,
        targets.rf_drive_frequency * 1e-6
    ));
    Ok(out)
}

/// RF null on the symmetry plane x = z = 0 by Newton iteration on E_y.
fn find_rf_null(rf_only: &ElectrodeLayout, guess_height: f64) -> Result<Position> {
    let mut r = Vector3::new(0.0, guess_height, 0.0);
    for _ in 0..100 {
        let e = rf_only.rf_field(&r)?;
        let g = field_gradient(&rf_only.patches, &r)?;
        let dy = -e.y / g[(1, 1)];
        r.y += dy;
        if !(r.y > 0.0) {
            break;
        }
        if dy.abs() < 1e-13 {
            return Ok(r);
        }
    }
    Err(Error::SearchFailed("RF null not found on the symmetry plane".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(v: f64) -> ElectrodePatch {
        ElectrodePatch::new(ElectrodeRole::Odc, (-50e-6, 80e-6), (-30e-6, 120e-6), v).unwrap()
    }

    #[test]
    fn half_space_limit() {
        let big = ElectrodePatch::new(ElectrodeRole::Odc, (-1.0, 1.0), (-1.0, 1.0), 3.0).unwrap();
        let phi = patch_potential(&big, &Vector3::new(0.0, 1e-6, 0.0)).unwrap();
        assert!((phi - 3.0).abs() < 1e-5);
        let far = patch_potential(&square(3.0), &Vector3::new(0.0, 10.0, 0.0)).unwrap();
        assert!(far.abs() < 1e-9);
    }

    #[test]
    fn zero_voltage_zero_potential() {
        let p = square(0.0);
        let r = Vector3::new(1e-5, 3e-5, -2e-5);
        assert_eq!(patch_potential(&p, &r).unwrap(), 0.0);
        assert_eq!(field(&[p], &r).unwrap(), Vector3::zeros());
    }

    #[test]
    fn rejects_points_on_or_below_chip() {
        let p = square(1.0);
        assert!(patch_potential(&p, &Vector3::new(0.0, 0.0, 0.0)).is_err());
        assert!(patch_field(&p, &Vector3::new(0.0, -1e-6, 0.0)).is_err());
        assert!(ElectrodePatch::new(ElectrodeRole::Idc, (1.0, 0.0), (0.0, 1.0), 1.0).is_err());
    }

    /// Φ(r) = (V/2π) ∫∫_patch y / |r − r'|³ dx' dz' (Poisson kernel of the
    /// half-space), by tensor Gauss–Legendre quadrature on subdivided panels.
    fn quadrature_potential(p: &ElectrodePatch, r: &Position) -> f64 {
        const NODES: [f64; 8] = [
            -0.960_289_856_497_536_3, -0.796_666_477_413_626_7, -0.525_532_409_916_329_0, -0.183_434_642_495_649_8,
            0.183_434_642_495_649_8, 0.525_532_409_916_329_0, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3,
        ];
        const WEIGHTS: [f64; 8] = [
            0.101_228_536_290_376_3, 0.222_381_034_453_374_5, 0.313_706_645_877_887_3, 0.362_683_783_378_362_0,
            0.362_683_783_378_362_0, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3,
        ];
        let panels = 40;
        let (dx, dz) = ((p.x2 - p.x1) / panels as f64, (p.z2 - p.z1) / panels as f64);
        let mut sum = 0.0;
        for i in 0..panels {
            for j in 0..panels {
                let (cx, cz) = (p.x1 + (i as f64 + 0.5) * dx, p.z1 + (j as f64 + 0.5) * dz);
                for (u, wu) in NODES.iter().zip(WEIGHTS) {
                    for (v, wv) in NODES.iter().zip(WEIGHTS) {
                        let xs = cx + 0.5 * dx * u;
                        let zs = cz + 0.5 * dz * v;
                        let d2 = (r.x - xs).powi(2) + r.y * r.y + (r.z - zs).powi(2);
                        sum += wu * wv * 0.25 * dx * dz * r.y / d2.powf(1.5);
                    }
                }
            }
        }
        p.voltage / TAU * sum
    }

    #[test]
    fn potential_matches_surface_quadrature() {
        let p = square(2.5);
        for r in [
            Vector3::new(0.0, 60e-6, 10e-6),
            Vector3::new(30e-6, 25e-6, 50e-6),
            Vector3::new(-90e-6, 100e-6, -40e-6),
        ] {
            let exact = patch_potential(&p, &r).unwrap();
            let quad = quadrature_potential(&p, &r);
            assert!((exact - quad).abs() < 1e-6 * 2.5, "{exact} vs {quad}");
        }
    }

    #[test]
    fn symmetric_idc_pair_field_is_normal_to_chip() {
        let layout = ElectrodeLayout::default_calibrated();
        let idc = layout.indices_by_role(ElectrodeRole::Idc);
        let pair: Vec<ElectrodePatch> = idc.iter().map(|&i| layout.patches[i].with_voltage(1.7)).collect();
        for y in [50e-6, 100e-6, 180e-6] {
            let e = field(&pair, &Vector3::new(0.0, y, 0.0)).unwrap();
            assert!(e.x.abs() < 1e-12 * e.y.abs());
            assert!(e.z.abs() < 1e-12 * e.y.abs());
            assert!(e.y.abs() > 0.0);
        }
    }

    #[test]
    fn field_matches_finite_difference() {
        let layout = ElectrodeLayout::default_calibrated();
        for r in [Vector3::new(3e-6, 95e-6, -7e-6), Vector3::new(-40e-6, 40e-6, 25e-6)] {
            let e = field(&layout.patches, &r).unwrap();
            let h = 1e-9;
            for a in 0..3 {
                let mut d = Vector3::zeros();
                d[a] = h;
                let fd = -(potential(&layout.patches, &(r + d)).unwrap() - potential(&layout.patches, &(r - d)).unwrap()) / (2.0 * h);
                assert!((e[a] - fd).abs() <= 1e-6 * e.norm(), "axis {a}: {} vs {fd}", e[a]);
            }
        }
    }

    #[test]
    fn default_layout_reaches_targets() {
        let layout = ElectrodeLayout::default_calibrated();
        let op = rf_null_and_frequencies(&layout, &IonSpecies::yb171(), &SearchBox::default()).unwrap();
        assert!((op.ion_height - 100e-6).abs() < 1e-6 * 1e-2 * 100.0);
        assert!((op.secular_frequencies[0] - 1.84e6).abs() < 1.84e4);
        assert!((op.secular_frequencies[1] - 2.11e6).abs() < 2.11e4);
        assert!(op.mathieu_q.iter().all(|&q| q > 0.0 && q < 0.9));
        assert!(op.residual_rf_field < 1e-3);
        // r1/r2 at 45° to the chip normal
        for i in 0..2 {
            assert!((op.principal_axes[i][1].abs() - (PI / 4.0).cos()).abs() < 1e-3);
        }
    }

    #[test]
    fn rf_amplitude_scales_pseudo_frequencies() {
        let layout = ElectrodeLayout::default_calibrated();
        let yb = IonSpecies::yb171();
        let a = rf_null_and_frequencies(&layout, &yb, &SearchBox::default()).unwrap();
        let b = rf_null_and_frequencies(&layout.with_rf_scaled(2.0), &yb, &SearchBox::default()).unwrap();
        for i in 0..2 {
            let ratio = b.pseudo_frequencies[i] / a.pseudo_frequencies[i];
            assert!((ratio - 2.0).abs() < 1e-3, "ratio {ratio}");
        }
    }

    #[test]
    fn rf_only_layout_has_weak_axial_confinement() {
        // finite rails confine axially only through end effects
        let layout = ElectrodeLayout::default_calibrated();
        let rf_only = ElectrodeLayout { patches: layout.rf_patches(), ..layout };
        let op = rf_null_and_frequencies(&rf_only, &IonSpecies::yb171(), &SearchBox::default()).unwrap();
        assert!(op.secular_frequencies[2] < 1e3);
        assert!((op.secular_frequencies[0] / op.pseudo_frequencies[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn no_rf_means_no_minimum() {
        let p = square(1.0);
        let layout = ElectrodeLayout::new(vec![p], 20e6).unwrap();
        assert!(matches!(
            rf_null_and_frequencies(&layout, &IonSpecies::yb171(), &SearchBox::default()),
            Err(Error::SearchFailed(_))
        ));
    }

    #[test]
    fn compensation_gain_is_linear_and_normal() {
        let layout = ElectrodeLayout::default_calibrated();
        let op = rf_null_and_frequencies(&layout, &IonSpecies::yb171(), &SearchBox::default()).unwrap();
        let probes = layout.indices_by_role(ElectrodeRole::Idc);
        let g = compensation_gain(&layout, &probes, &op.null()).unwrap();
        assert!(g.direction[1].abs() > 1.0 - 1e-9);
        for dv in [0.1, 1.0, 10.0] {
            let pair: Vec<ElectrodePatch> = probes.iter().map(|&i| layout.patches[i].with_voltage(dv)).collect();
            let e = field(&pair, &op.null()).unwrap();
            assert!((e.y - g.normal() * dv).abs() < 1e-12 * (g.magnitude * dv));
        }
        // finite-difference cross-check of the gain
        let unit: Vec<ElectrodePatch> = probes.iter().map(|&i| layout.patches[i].with_voltage(1.0)).collect();
        let h = 1e-9;
        let r = op.null();
        let fd = -(potential(&unit, &(r + Vector3::y() * h)).unwrap() - potential(&unit, &(r - Vector3::y() * h)).unwrap()) / (2.0 * h);
        assert!((fd - g.normal()).abs() < 1e-6 * g.magnitude);
        assert!(compensation_gain(&layout, &[], &r).is_err());
        assert!(compensation_gain(&layout, &[999], &r).is_err());
    }

    #[test]
    fn displacement_values() {
        let yb = IonSpecies::yb171();
        let mode = ModeSpec::new(crate::types::ModeId::R2, 2.11e6, 0.0).unwrap();
        assert_eq!(displacement_from_field(0.0, &yb, &mode).unwrap(), 0.0);
        // mpmath: qE/(mω²) at E = 100 V/m
        let dy = displacement_from_field(100.0, &yb, &mode).unwrap();
        assert!((dy - 3.211_468_477_341_58e-7).abs() < 1e-9 * 3.2e-7);
        assert_eq!(displacement_from_field(-100.0, &yb, &mode).unwrap(), -dy);
    }

    fn random_layout(seed: u64) -> Vec<ElectrodePatch> {
        use rand::Rng;
        let mut rng = crate::fitkit::montecarlo::rng(seed);
        (0..3)
            .map(|_| {
                let x1 = rng.random_range(-200e-6..100e-6);
                let z1 = rng.random_range(-200e-6..100e-6);
                let x2 = x1 + rng.random_range(5e-6..200e-6);
                let z2 = z1 + rng.random_range(5e-6..400e-6);
                ElectrodePatch::new(ElectrodeRole::Odc, (x1, x2), (z1, z2), rng.random_range(-10.0..10.0)).unwrap()
            })
            .collect()
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(100))]

        #[test]
        fn laplace_residual_is_small(
            seed in 0u64..1_000_000,
            x in -150e-6..150e-6f64,
            y in 5e-6..200e-6f64,
            z in -150e-6..150e-6f64,
        ) {
            let layout = random_layout(seed);
            let r = Vector3::new(x, y, z);
            let g = field_gradient(&layout, &r).unwrap();
            let scale = g.abs().max();
            proptest::prop_assume!(scale > 0.0);
            proptest::prop_assert!(g.trace().abs() <= 1e-4 * scale, "div E = {} vs {}", g.trace(), scale);
        }

        #[test]
        fn superposition_is_exact(seed in 0u64..1_000_000, y in 5e-6..200e-6f64) {
            let layout = random_layout(seed);
            let r = Vector3::new(7e-6, y, -3e-6);
            let both = field(&layout[..2], &r).unwrap();
            let sum = patch_field(&layout[0], &r).unwrap() + patch_field(&layout[1], &r).unwrap();
            proptest::prop_assert!((both - sum).norm() <= 1e-14 * (both.norm() + sum.norm()));
        }
    }

    /// Integrates m r̈ = q[E_RF(r) cos Ωt + E_DC(r)] with fixed-step RK4 and
    /// returns the oscillation frequency along `axis` from zero crossings.
    fn trajectory_frequency(layout: &ElectrodeLayout, op: &TrapOperatingPoint, axis: usize) -> f64 {
        let yb = IonSpecies::yb171();
        let (rf, dc) = (layout.rf_patches(), layout.dc_patches());
        let omega = TAU * layout.rf_drive_frequency;
        let k = yb.charge / yb.mass;
        let u = Vector3::from(op.principal_axes[axis]);
        let null = op.null();
        let accel = |t: f64, r: &Position| k * (field(&rf, r).unwrap() * (omega * t).cos() + field(&dc, r).unwrap());
        let dt = 1.0 / (100.0 * layout.rf_drive_frequency);
        let mut r = null + 50e-9 * u;
        let mut v = Vector3::zeros();
        let mut t = 0.0;
        let periods = 40.0;
        let steps = (periods / op.secular_frequencies[axis] / dt) as usize;
        let mut crossings = Vec::new();
        let mut prev = (r - null).dot(&u);
        for _ in 0..steps {
            let k1v = accel(t, &r);
            let k1r = v;
            let k2v = accel(t + 0.5 * dt, &(r + 0.5 * dt * k1r));
            let k2r = v + 0.5 * dt * k1v;
            let k3v = accel(t + 0.5 * dt, &(r + 0.5 * dt * k2r));
            let k3r = v + 0.5 * dt * k2v;
            let k4v = accel(t + dt, &(r + dt * k3r));
            let k4r = v + dt * k3v;
            r += dt / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r);
            v += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            t += dt;
            let cur = (r - null).dot(&u);
            if prev.signum() != cur.signum() {
                crossings.push(t - dt * cur / (cur - prev));
            }
            prev = cur;
        }
        let (first, last) = (crossings[0], crossings[crossings.len() - 1]);
        0.5 * (crossings.len() - 1) as f64 / (last - first)
    }

    #[test]
    fn hessian_frequencies_match_trajectory() {
        // The pseudopotential misses the O(q²) Mathieu correction, which
        // reaches ~2% at q ≈ 0.29; 1% agreement needs q ≲ 0.2.
        let yb = IonSpecies::yb171();
        for (drive, tol) in [(40e6, 0.01), (20e6, 0.025)] {
            let targets = CalibrationTargets { rf_drive_frequency: drive, ..Default::default() };
            let layout = calibrate_layout(&targets).unwrap();
            let op = rf_null_and_frequencies(&layout, &yb, &SearchBox::default()).unwrap();
            for axis in 0..2 {
                assert!(op.mathieu_q[axis] < 0.3);
                let f = trajectory_frequency(&layout, &op, axis);
                let rel = f / op.secular_frequencies[axis] - 1.0;
                assert!(rel.abs() < tol, "q = {:.3}: {f} vs {}", op.mathieu_q[axis], op.secular_frequencies[axis]);
                if drive == 40e6 {
                    assert!(op.mathieu_q[axis] < 0.2);
                }
            }
        }
    }
}
