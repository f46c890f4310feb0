use std::path::Path;

use serde::Serialize;
use trapsim::cooling::{evolve_heating, fit_heating_rate, run_schedule, HeatingRate, PulseSchedule};
use trapsim::fitkit::montecarlo;
use trapsim::micromotion::{
    modulation_index, monitor_series, simulate_scan, CarrierResponse, Interpolation, ScanSettings,
    StrayFieldTrajectory,
};
use trapsim::ms_gate::{self, apply_confusion, propagate, sample_curve};
use trapsim::raman::{fit_carrier_sinusoid, fit_nbar, rabi_curve, RabiSample};
use trapsim::trap::{
    calibrate_layout, compensation_gain, rf_null_and_frequencies, CalibrationTargets, CompensationGain,
    ElectrodeLayout, ElectrodeRole, SearchBox, TrapOperatingPoint,
};
use trapsim::types::{thermal, DriveParams, IonSpecies, ModeId, ModeSpec, RamanGeometry};

use crate::config::{effective_seed, load_config, load_json, Beams, Grid, MsConfig, RabiConfig, ScanConfig};
use crate::io::{self, emit, json_bytes};
use crate::{CliError, DcScanArgs, FitRabiArgs, HeatingArgs, MsGateArgs, RabiArgs, SbcArgs};

fn parse_mode(s: &str) -> Result<ModeId, CliError> {
    serde_json::from_value(serde_json::Value::String(s.to_lowercase()))
        .map_err(|_| CliError::Usage(format!("unknown mode {s:?}; expected r1, r2, com, tilt or axial")))
}

fn pair(values: &[f64], name: &str) -> Result<[f64; 2], CliError> {
    match values {
        [a, b] => Ok([*a, *b]),
        _ => Err(CliError::Usage(format!("{name} needs exactly two comma-separated values"))),
    }
}

fn radial_modes(geometry: &RamanGeometry, frequencies: [f64; 2]) -> Result<Vec<ModeSpec>, CliError> {
    let yb = IonSpecies::yb171();
    Ok(vec![
        ModeSpec::from_geometry(&yb, geometry, ModeId::R1, frequencies[0])?,
        ModeSpec::from_geometry(&yb, geometry, ModeId::R2, frequencies[1])?,
    ])
}

/// Strict parse of a library type after dropping a top-level `provenance` note.
fn load_annotated<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let mut v: serde_json::Value = load_json(path)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("provenance");
    }
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn load_layout(path: Option<&Path>) -> Result<ElectrodeLayout, CliError> {
    match path {
        Some(p) => {
            let layout: ElectrodeLayout = load_json(p)?;
            layout.validate().map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            Ok(layout)
        }
        None => Ok(ElectrodeLayout::default_calibrated()),
    }
}

fn idc_gain(layout: &ElectrodeLayout, op: &TrapOperatingPoint) -> Result<CompensationGain, CliError> {
    let idc = layout.indices_by_role(ElectrodeRole::Idc);
    if idc.is_empty() {
        return Err(CliError::Usage("layout has no IDC electrodes to scan; pass --gain".into()));
    }
    Ok(compensation_gain(layout, &idc, &op.null())?)
}

#[derive(Serialize)]
struct TrapReport {
    operating_point: TrapOperatingPoint,
    idc_gain: Option<CompensationGain>,
    provenance: Option<String>,
}

pub fn trap(layout: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let layout = load_layout(layout)?;
    let op = rf_null_and_frequencies(&layout, &IonSpecies::yb171(), &SearchBox::default())?;
    let idc_gain = idc_gain(&layout, &op).ok();
    emit(out, &json_bytes(&TrapReport { operating_point: op, idc_gain, provenance: layout.provenance.clone() })?)
}

pub fn calibrate(targets: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let targets: CalibrationTargets = match targets {
        Some(p) => load_annotated(p)?,
        None => CalibrationTargets::default(),
    };
    emit(out, &json_bytes(&calibrate_layout(&targets)?)?)
}

fn parse_shots(s: &str) -> Result<Option<u64>, CliError> {
    if s.eq_ignore_ascii_case("inf") {
        return Ok(None);
    }
    match s.parse::<u64>() {
        Ok(n) if n > 0 => Ok(Some(n)),
        _ => Err(CliError::Usage(format!("--shots must be a positive integer or inf, got {s:?}"))),
    }
}

/// Config file (if any) with command-line overrides applied.
fn scan_config(a: &DcScanArgs) -> Result<ScanConfig, CliError> {
    let mut c = match &a.config {
        Some(p) => load_config::<ScanConfig>(p)?,
        None => {
            let grid = a.grid.as_deref().ok_or_else(|| CliError::Usage("--grid or --config is required".into()))?;
            let grid = Grid::parse(grid).map_err(CliError::Usage)?;
            serde_json::from_value(serde_json::json!({ "grid": grid, "stray": a.stray.unwrap_or(0.0) }))
                .expect("minimal scan config")
        }
    };
    if let Some(g) = &a.grid {
        c.grid = Grid::parse(g).map_err(CliError::Usage)?;
    }
    if let Some(s) = a.stray {
        c.stray = Some(s);
        c.charging = None;
    }
    if let Some(s) = &a.shots {
        c.shots = parse_shots(s)?;
    }
    if let Some(t) = &a.times {
        c.times = t.clone();
    }
    if a.gain.is_some() {
        c.gain = a.gain;
    }
    if a.layout.is_some() {
        c.layout = a.layout.clone();
    }
    c.seed = effective_seed(a.seed, c.seed)?;
    crate::config::Config::validate(&c).map_err(CliError::Usage)?;
    Ok(c)
}

/// Scan gain, β per V/m and carrier response for a scan config.
fn scan_chain(c: &ScanConfig) -> Result<(f64, f64, CarrierResponse), CliError> {
    let yb = IonSpecies::yb171();
    let geo = RamanGeometry::counter_propagating_355();
    let layout = load_layout(c.layout.as_deref())?;
    let op = rf_null_and_frequencies(&layout, &yb, &SearchBox::default())?;
    let gain = match c.gain {
        Some(g) => g,
        None => idc_gain(&layout, &op)?.normal(),
    };
    let normal = ModeSpec::from_geometry(&yb, &geo, ModeId::R2, op.normal_frequency())?;
    let beta_per_field = modulation_index(1.0, &yb, &normal, &geo, op.normal_mathieu_q())?;
    let modes = radial_modes(&geo, c.frequencies)?;
    let dists = [thermal(c.nbar[0])?, thermal(c.nbar[1])?];
    // π time calibrated on the most populated Fock configuration
    let probe = CarrierResponse::new(DriveParams::pi_pulse(c.rabi)?, &geo, &modes, &dists)?;
    let pulse = DriveParams::new(c.rabi, 0.5 / (c.rabi * probe.dominant_coupling()), 0.0)?;
    Ok((gain, beta_per_field, CarrierResponse::new(pulse, &geo, &modes, &dists)?))
}

pub fn dc_scan(a: &DcScanArgs) -> Result<(), CliError> {
    let c = scan_config(a)?;
    let (gain, beta_per_field, response) = scan_chain(&c)?;
    let trajectory = match (&c.charging, c.stray) {
        (Some(model), _) => {
            let mut times = c.times.clone();
            times.sort_by(f64::total_cmp);
            times.dedup();
            StrayFieldTrajectory::sampled(model, &times, Interpolation::Linear)?
        }
        (None, Some(e)) => StrayFieldTrajectory::constant(e),
        (None, None) => unreachable!("validated"),
    };
    let settings = ScanSettings { grid: c.grid.points(), gain, beta_per_field, shots: c.shots, seed: c.seed };
    let records = simulate_scan(&trajectory, &c.times, &settings, &response)?;
    emit(a.output.out.as_deref(), &io::scan_csv(&records)?)
}

fn default_gain() -> Result<f64, CliError> {
    let layout = ElectrodeLayout::default_calibrated();
    let op = rf_null_and_frequencies(&layout, &IonSpecies::yb171(), &SearchBox::default())?;
    Ok(idc_gain(&layout, &op)?.normal())
}

pub fn fit_scan(input: &Path, gain: Option<f64>, out: Option<&Path>) -> Result<(), CliError> {
    let gain = match gain {
        Some(g) => g,
        None => default_gain()?,
    };
    let records = io::read_scan(input, gain)?;
    emit(out, &json_bytes(&monitor_series(&records)?)?)
}

pub fn rabi(a: &RabiArgs) -> Result<(), CliError> {
    let mut c = match &a.config {
        Some(p) => load_config::<RabiConfig>(p)?,
        None => RabiConfig::default(),
    };
    if let Some(b) = a.beams {
        c.beams = b;
    }
    if a.shots.is_some() {
        c.shots = a.shots;
    }
    c.seed = effective_seed(a.seed, c.seed)?;
    crate::config::Config::validate(&c).map_err(CliError::Usage)?;

    let geo = c.beams.geometry();
    let modes = radial_modes(&geo, c.frequencies)?;
    let dists = [thermal(c.nbar[0])?, thermal(c.nbar[1])?];
    let times: Vec<f64> = (0..c.points).map(|i| c.t_max * i as f64 / (c.points - 1) as f64).collect();
    let drive = DriveParams::new(c.rabi, 0.0, 0.0)?;
    let p = rabi_curve(&times, &drive, &geo, &modes, &dists)?;
    let mut rng = montecarlo::rng(c.seed);
    let samples: Vec<RabiSample> = times
        .iter()
        .zip(p)
        .map(|(&t, p1)| match c.shots {
            Some(n) => RabiSample { t, p1: montecarlo::sample_fraction(&mut rng, n, p1), shots: Some(n) },
            None => RabiSample { t, p1, shots: None },
        })
        .collect();
    emit(a.output.out.as_deref(), &io::rabi_csv(&samples)?)
}

pub fn fit_rabi(a: &FitRabiArgs) -> Result<(), CliError> {
    let curve = io::read_rabi(&a.input, a.shots)?;
    let geo = a.beams.geometry();
    let out = a.output.out.as_deref();
    match Beams::from_geometry(&geo) {
        Beams::Co => emit(out, &json_bytes(&fit_carrier_sinusoid(&curve, a.rabi_guess)?)?),
        Beams::Counter => {
            let modes = radial_modes(&geo, pair(&a.frequencies, "--frequencies")?)?;
            let guess = pair(&a.nbar_guess, "--nbar-guess")?;
            let drive = DriveParams::new(a.rabi_guess, 0.0, 0.0)?;
            emit(out, &json_bytes(&fit_nbar(&curve, &drive, &geo, &modes, &guess)?)?)
        }
    }
}

#[derive(Serialize)]
struct ModeCooling {
    mode_id: ModeId,
    frequency: f64,
    nbar_before: f64,
    nbar_after: f64,
    populations_after: Vec<f64>,
}

pub fn sbc(a: &SbcArgs) -> Result<(), CliError> {
    let geo = RamanGeometry::counter_propagating_355();
    let modes = radial_modes(&geo, pair(&a.frequencies, "--frequencies")?)?;
    let nbar = pair(&a.nbar, "--nbar")?;
    let dists = vec![thermal(nbar[0])?, thermal(nbar[1])?];
    let schedule = match &a.schedule {
        Some(p) => {
            let s: PulseSchedule = load_annotated(p)?;
            s.validate().map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            s
        }
        None => {
            let mut pulses = Vec::new();
            for m in &modes {
                pulses.extend(PulseSchedule::default_stand_in(m.mode_id, a.rabi, m.lamb_dicke)?.pulses);
            }
            PulseSchedule::new(pulses, true)?
        }
    };
    let after = run_schedule(&schedule, &modes, &dists)?;
    let report: Vec<ModeCooling> = modes
        .iter()
        .zip(dists.iter().zip(&after))
        .map(|(m, (b, d))| ModeCooling {
            mode_id: m.mode_id,
            frequency: m.frequency,
            nbar_before: b.mean(),
            nbar_after: d.mean(),
            populations_after: d.populations().to_vec(),
        })
        .collect();
    emit(a.output.out.as_deref(), &json_bytes(&report)?)
}

pub fn heating(a: &HeatingArgs) -> Result<(), CliError> {
    let mode = parse_mode(&a.mode)?;
    let rate = HeatingRate::new(a.rate, mode)?;
    let start = thermal(a.nbar0)?;
    if let Some(s) = a.sigma {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(CliError::Usage(format!("--sigma must be >= 0, got {s}")));
        }
    }
    let mut rng = montecarlo::rng(effective_seed(a.seed, 0)?);
    let mut series = Vec::with_capacity(a.times.len());
    for &t in &a.times {
        let mean = evolve_heating(&start, &rate, t)?.mean();
        let value = match a.sigma {
            Some(s) => montecarlo::normal(&mut rng, mean, s),
            None => mean,
        };
        series.push((t, value));
    }
    emit(a.output.out.as_deref(), &io::heating_csv(&series)?)
}

pub fn fit_heating(input: &Path, sigma: f64, mode: &str, out: Option<&Path>) -> Result<(), CliError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(CliError::Usage(format!("--sigma must be > 0, got {sigma}")));
    }
    let mode = parse_mode(mode)?;
    let samples: Vec<(f64, f64, f64)> = io::read_heating(input)?.into_iter().map(|(t, n)| (t, n, sigma)).collect();
    emit(out, &json_bytes(&fit_heating_rate(&samples, mode)?)?)
}

pub fn ms_gate(a: &MsGateArgs) -> Result<(), CliError> {
    let c: MsConfig = load_config(&a.params)?;
    let params = c.params()?;
    let times = params.time_grid(c.points);
    let mut curve = propagate(&params, &times)?;
    if !a.ideal_readout {
        curve = apply_confusion(&curve, &c.confusion()?)?;
    }
    let shots = a.shots.or(c.shots);
    if shots == Some(0) {
        return Err(CliError::Usage("--shots must be >= 1".into()));
    }
    if let Some(n) = shots {
        curve = sample_curve(&curve, n, effective_seed(a.seed, c.seed)?)?;
    }
    emit(a.output.out.as_deref(), &io::ms_csv(&curve)?)
}

pub fn fit_ms(input: &Path, shots: Option<u64>, guess: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let curve = io::read_ms(input)?;
    let c: MsConfig = match guess {
        Some(p) => load_config(p)?,
        None => {
            let t_end = curve.times.iter().copied().fold(0.0, f64::max);
            serde_json::from_value(serde_json::json!({
                "rabi": 49.9e3, "detuning": -9.4e3, "initial_nbar": 0.2, "heating_rate": 62.0,
                "gate_duration": t_end, "p10": 0.04, "p01": 0.06
            }))
            .expect("built-in guess")
        }
    };
    let fit = ms_gate::fit_ms(&curve, shots, &c.params()?, &c.confusion()?)?;
    emit(out, &json_bytes(&fit)?)
}
