//! Fast oracle checks against closed forms, printed one line per check.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use trapsim::cooling::{evolve_heating, sideband_ratio_nbar, HeatingRate};
use trapsim::micromotion::{
    fit_offset, modulation_index, simulate_scan, CarrierResponse, ScanSettings, StrayFieldTrajectory,
};
use trapsim::ms_gate::{ms_closed_form, propagate, tilt_mode, MSGateParams};
use trapsim::raman::transition_p1;
use trapsim::trap::{potential, ElectrodeLayout, Position};
use trapsim::types::constants::{ATOMIC_MASS_UNIT, ELECTRON_MASS, HBAR, YB171_ATOMIC_MASS_U};
use trapsim::types::{thermal, DriveParams, IonSpecies, ModeId, ModeSpec, RamanGeometry, Sideband};

use crate::CliError;

type Check = Result<String, String>;

fn within(err: f64, tol: f64, detail: String) -> Check {
    if err <= tol { Ok(detail) } else { Err(format!("{detail} exceeds {tol:.1e}")) }
}

fn lamb_dicke() -> Check {
    let geo = RamanGeometry::counter_propagating_355();
    let got = ModeSpec::from_geometry(&IonSpecies::yb171(), &geo, ModeId::R2, 2.11e6).map_err(|e| e.to_string())?;
    let mass = YB171_ATOMIC_MASS_U * ATOMIC_MASS_UNIT - ELECTRON_MASS;
    // counter-propagating 355 nm beams, mode axis at 45° to Δk
    let k = 2.0 * TAU / 355e-9;
    let x0 = (HBAR / (2.0 * mass * TAU * 2.11e6)).sqrt();
    let expected = k * (PI / 4.0).cos() * x0;
    let err = (got.lamb_dicke - expected).abs();
    within(err, 1e-12, format!("η(2.11 MHz) = {:.6}, |Δ| = {err:.1e}", got.lamb_dicke))
}

fn thermal_mean() -> Check {
    let mut worst: f64 = 0.0;
    for nbar in [0.1, 4.0, 15.0] {
        let d = thermal(nbar).map_err(|e| e.to_string())?;
        worst = worst.max((d.mean() - nbar).abs() / nbar).max((d.total() - 1.0).abs());
    }
    within(worst, 1e-4, format!("worst relative mean error {worst:.1e}"))
}

fn detailed_balance() -> Check {
    let geo = RamanGeometry::counter_propagating_355();
    let mode = ModeSpec::from_geometry(&IonSpecies::yb171(), &geo, ModeId::R2, 2.11e6).map_err(|e| e.to_string())?;
    let probe = DriveParams::new(20e3, 0.01 / (TAU * 20e3 * mode.lamb_dicke), 0.0).map_err(|e| e.to_string())?;
    let nbar = 0.5;
    let d = [thermal(nbar).map_err(|e| e.to_string())?];
    let modes = [mode];
    let p = |s| transition_p1(s, 0, &probe, &geo, &modes, &d).map_err(|e| e.to_string());
    let est = sideband_ratio_nbar(p(Sideband::Red)?, p(Sideband::Blue)?).map_err(|e| e.to_string())?;
    let err = (est / nbar - 1.0).abs();
    within(err, 1e-3, format!("weak-probe n̄ = {est:.5} for 0.5"))
}

fn heating_linear() -> Check {
    let rate = HeatingRate::new(1700.0, ModeId::R2).map_err(|e| e.to_string())?;
    let start = thermal(0.1).map_err(|e| e.to_string())?;
    let got = evolve_heating(&start, &rate, 1e-3).map_err(|e| e.to_string())?.mean();
    within((got - 1.8).abs(), 1e-4, format!("n̄(1 ms) = {got:.6}"))
}

fn ms_closed_form_agreement() -> Check {
    let geo = RamanGeometry::counter_propagating_355();
    let mode = tilt_mode(&IonSpecies::yb171(), &geo, 2.11e6).map_err(|e| e.to_string())?;
    let p = MSGateParams {
        rabi: 49.9e3,
        detuning: -9.4e3,
        mode,
        initial_nbar: 0.2,
        heating_rate: 0.0,
        gate_duration: 300e-6,
        n_max: 30,
    };
    let times = p.time_grid(11);
    let a = propagate(&p, &times).map_err(|e| e.to_string())?;
    let b = ms_closed_form(&p, &times).map_err(|e| e.to_string())?;
    let worst = a
        .rows()
        .iter()
        .zip(b.rows())
        .flat_map(|(x, y)| (0..4).map(move |k| (x[k] - y[k]).abs()))
        .fold(0.0, f64::max);
    within(worst, 1e-6, format!("max population difference {worst:.1e}"))
}

fn laplace() -> Check {
    let layout = ElectrodeLayout::default_calibrated();
    let patches = layout.dc_patches();
    let r = Position::new(10e-6, 90e-6, -5e-6);
    let h = 1e-3 * r.y;
    let phi = |p: &Position| potential(&patches, p).map_err(|e| e.to_string());
    let phi0 = phi(&r)?;
    let (mut lap, mut scale) = (0.0, 0.0_f64);
    for k in 0..3 {
        let mut dr = Position::zeros();
        dr[k] = h;
        let d2 = phi(&(r + dr))? - 2.0 * phi0 + phi(&(r - dr))?;
        lap += d2;
        scale = scale.max(d2.abs());
    }
    let rel = lap.abs() / scale;
    within(rel, 1e-4, format!("|∇²φ| / max|∂²φ| = {rel:.1e}"))
}

fn scan_fit() -> Check {
    let yb = IonSpecies::yb171();
    let geo = RamanGeometry::counter_propagating_355();
    let mode = ModeSpec::from_geometry(&yb, &geo, ModeId::R2, 2.11e6).map_err(|e| e.to_string())?;
    let beta_per_field = modulation_index(1.0, &yb, &mode, &geo, 0.25).map_err(|e| e.to_string())?;
    let response = CarrierResponse::bare(DriveParams::pi_pulse(545e3).map_err(|e| e.to_string())?);
    let grid: Vec<f64> = (0..=60).map(|i| -0.3 + 0.01 * i as f64).collect();
    let settings = ScanSettings { grid, gain: 1500.0, beta_per_field, shots: None, seed: 0 };
    let rec = simulate_scan(&StrayFieldTrajectory::constant(150.0), &[0.0], &settings, &response)
        .map_err(|e| e.to_string())?;
    let fit = fit_offset(&rec[0]).map_err(|e| e.to_string())?;
    let err = (fit.delta_e_fit + 150.0).abs();
    within(err, 1e-3, format!("ΔE_fit = {:.4} V/m for a 150 V/m stray field", fit.delta_e_fit))
}

pub fn run() -> Result<(), CliError> {
    let checks: [(&str, fn() -> Check); 7] = [
        ("lamb-dicke", lamb_dicke),
        ("thermal-mean", thermal_mean),
        ("detailed-balance", detailed_balance),
        ("heating-linear", heating_linear),
        ("ms-closed-form", ms_closed_form_agreement),
        ("laplace", laplace),
        ("scan-fit", scan_fit),
    ];
    let mut out = std::io::stdout().lock();
    let mut failed = Vec::new();
    for (name, check) in checks {
        match check() {
            Ok(detail) => {
                let _ = writeln!(out, "PASS {name}: {detail}");
            }
            Err(detail) => {
                let _ = writeln!(out, "FAIL {name}: {detail}");
                failed.push(name);
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Selftest(format!("failed checks: {}", failed.join(", "))))
    }
}
