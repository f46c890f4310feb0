//! JSON configuration files. Every struct rejects unknown keys; values are SI
//! (Hz, s, V, V/m, m) unless the field says otherwise.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use trapsim::micromotion::ChargingModel;
use trapsim::ms_gate::{tilt_mode, ConfusionMatrix, MSGateParams};
use trapsim::types::{BeamConfiguration, IonSpecies, RamanGeometry};

use crate::CliError;

/// Reads and strictly parses a JSON file.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Usage(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column()))
    })
}

/// Loads a config, resolves relative file references against its directory
/// and validates it.
pub fn load_config<T: Config>(path: &Path) -> Result<T, CliError> {
    let mut config: T = load_json(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    config.resolve(base)?;
    config.validate().map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(config)
}

pub trait Config: DeserializeOwned {
    fn resolve(&mut self, _base: &Path) -> Result<(), CliError> {
        Ok(())
    }
    fn validate(&self) -> Result<(), String>;
}

fn resolve_file(base: &Path, file: &mut Option<PathBuf>) -> Result<(), CliError> {
    if let Some(f) = file {
        if f.is_relative() {
            *f = base.join(&*f);
        }
        if !f.is_file() {
            return Err(CliError::Usage(format!("referenced file {} does not exist", f.display())));
        }
    }
    Ok(())
}

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg.into()) }
}

fn nonneg(v: f64, name: &str) -> Result<(), String> {
    check(v >= 0.0 && v.is_finite(), format!("{name} must be >= 0, got {v}"))
}

fn positive(v: f64, name: &str) -> Result<(), String> {
    check(v > 0.0 && v.is_finite(), format!("{name} must be > 0, got {v}"))
}

/// Seed precedence: command-line flag, then `TRAPSIM_SEED`, then the config.
pub fn effective_seed(flag: Option<u64>, config: u64) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("TRAPSIM_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("TRAPSIM_SEED = {v:?} is not an unsigned integer"))),
        Err(_) => Ok(config),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Grid {
    /// Parses `start:stop:step`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("grid {s:?} is not start:stop:step"));
        }
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("grid {s:?}: {p:?} is not a number")))
            .collect::<Result<_, _>>()?;
        let g = Self { start: v[0], stop: v[1], step: v[2] };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), String> {
        check(
            self.start.is_finite() && self.stop.is_finite() && self.step > 0.0 && self.stop >= self.start,
            format!("grid needs start <= stop and step > 0, got {self:?}"),
        )?;
        check((self.stop - self.start) / self.step <= 1e6, "grid has more than 10⁶ points")
    }

    /// Points start, start + step, … up to stop (inclusive within step/1000).
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-3).floor() as usize;
        (0..=n).map(|i| self.start + self.step * i as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Beams {
    #[default]
    Counter,
    Co,
}

impl Beams {
    pub fn geometry(self) -> RamanGeometry {
        match self {
            Beams::Counter => RamanGeometry::counter_propagating_355(),
            Beams::Co => RamanGeometry::co_propagating_355(),
        }
    }

    pub fn from_geometry(g: &RamanGeometry) -> Self {
        match g.configuration {
            BeamConfiguration::CounterPropagating => Beams::Counter,
            BeamConfiguration::CoPropagating => Beams::Co,
        }
    }
}

fn default_rabi() -> f64 {
    545e3
}

fn default_radial() -> [f64; 2] {
    [1.84e6, 2.11e6]
}

fn default_doppler_nbar() -> [f64; 2] {
    [15.0, 14.0]
}

fn default_times() -> Vec<f64> {
    vec![0.0]
}

/// `dc-scan` settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default)]
    pub provenance: Option<String>,
    /// Electrode layout JSON; the calibrated default chip when absent.
    #[serde(default)]
    pub layout: Option<PathBuf>,
    /// Constant stray field along the chip normal, V/m.
    #[serde(default)]
    pub stray: Option<f64>,
    /// Time-dependent stray field; overrides `stray`.
    #[serde(default)]
    pub charging: Option<ChargingModel>,
    /// Scan instants, s.
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    /// Compensation voltages, V.
    pub grid: Grid,
    /// Shots per point; absent for expected values.
    #[serde(default)]
    pub shots: Option<u64>,
    /// V/m per V; derived from the layout when absent.
    #[serde(default)]
    pub gain: Option<f64>,
    #[serde(default = "default_rabi")]
    pub rabi: f64,
    /// Radial secular frequencies (r1, r2), Hz.
    #[serde(default = "default_radial")]
    pub frequencies: [f64; 2],
    #[serde(default = "default_doppler_nbar")]
    pub nbar: [f64; 2],
    #[serde(default)]
    pub seed: u64,
}

impl Config for ScanConfig {
    fn resolve(&mut self, base: &Path) -> Result<(), CliError> {
        resolve_file(base, &mut self.layout)
    }

    fn validate(&self) -> Result<(), String> {
        self.grid.validate()?;
        check(self.stray.is_some() || self.charging.is_some(), "one of stray or charging is required")?;
        check(!self.times.is_empty(), "times must not be empty")?;
        check(self.shots != Some(0), "shots must be >= 1")?;
        positive(self.rabi, "rabi")?;
        for f in self.frequencies {
            positive(f, "frequency")?;
        }
        for n in self.nbar {
            nonneg(n, "nbar")?;
        }
        if let Some(g) = self.gain {
            check(g.is_finite() && g != 0.0, "gain must be finite and non-zero")?;
        }
        Ok(())
    }
}

/// `rabi` settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RabiConfig {
    #[serde(default)]
    pub provenance: Option<String>,
    #[serde(default = "default_rabi")]
    pub rabi: f64,
    #[serde(default)]
    pub beams: Beams,
    #[serde(default = "default_radial")]
    pub frequencies: [f64; 2],
    #[serde(default = "default_doppler_nbar")]
    pub nbar: [f64; 2],
    /// Last pulse duration, s.
    #[serde(default = "default_rabi_t_max")]
    pub t_max: f64,
    #[serde(default = "default_rabi_points")]
    pub points: usize,
    #[serde(default)]
    pub shots: Option<u64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_rabi_t_max() -> f64 {
    12e-6
}

fn default_rabi_points() -> usize {
    61
}

impl Default for RabiConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl Config for RabiConfig {
    fn validate(&self) -> Result<(), String> {
        positive(self.rabi, "rabi")?;
        positive(self.t_max, "t_max")?;
        check(self.points >= 2, "points must be >= 2")?;
        check(self.shots != Some(0), "shots must be >= 1")?;
        for f in self.frequencies {
            positive(f, "frequency")?;
        }
        for n in self.nbar {
            nonneg(n, "nbar")?;
        }
        Ok(())
    }
}

fn default_tilt_frequency() -> f64 {
    2.11e6
}

fn default_ms_points() -> usize {
    61
}

/// `ms-gate` parameters; also the initial guess for `fit-ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsConfig {
    #[serde(default)]
    pub provenance: Option<String>,
    /// Ω/2π per ion, Hz.
    pub rabi: f64,
    /// δ/2π from the tilt mode, Hz (signed).
    pub detuning: f64,
    /// Tilt-mode frequency, Hz.
    #[serde(default = "default_tilt_frequency")]
    pub mode_frequency: f64,
    /// Per-ion η; derived from counter-propagating 355 nm beams when absent.
    #[serde(default)]
    pub lamb_dicke: Option<f64>,
    pub initial_nbar: f64,
    /// quanta/s
    #[serde(default)]
    pub heating_rate: f64,
    /// s
    pub gate_duration: f64,
    #[serde(default)]
    pub n_max: Option<usize>,
    #[serde(default = "default_ms_points")]
    pub points: usize,
    /// P(1|0)
    #[serde(default)]
    pub p10: f64,
    /// P(0|1)
    #[serde(default)]
    pub p01: f64,
    #[serde(default)]
    pub shots: Option<u64>,
    #[serde(default)]
    pub seed: u64,
}

impl Config for MsConfig {
    fn validate(&self) -> Result<(), String> {
        nonneg(self.rabi, "rabi")?;
        check(self.detuning.is_finite(), "detuning must be finite")?;
        positive(self.mode_frequency, "mode_frequency")?;
        if let Some(eta) = self.lamb_dicke {
            nonneg(eta, "lamb_dicke")?;
        }
        nonneg(self.initial_nbar, "initial_nbar")?;
        nonneg(self.heating_rate, "heating_rate")?;
        nonneg(self.gate_duration, "gate_duration")?;
        check(self.points >= 2, "points must be >= 2")?;
        check(self.shots != Some(0), "shots must be >= 1")?;
        ConfusionMatrix::new(self.p10, self.p01).map_err(|e| e.to_string())?;
        if let Some(n) = self.n_max {
            let min = MSGateParams::min_n_max(self.initial_nbar);
            check(n >= min, format!("n_max = {n} too small for n̄ = {}; need >= {min}", self.initial_nbar))?;
        }
        Ok(())
    }
}

impl MsConfig {
    pub fn params(&self) -> Result<MSGateParams, trapsim::Error> {
        let mut mode = tilt_mode(&IonSpecies::yb171(), &RamanGeometry::counter_propagating_355(), self.mode_frequency)?;
        if let Some(eta) = self.lamb_dicke {
            mode.lamb_dicke = eta;
        }
        let p = MSGateParams {
            rabi: self.rabi,
            detuning: self.detuning,
            mode,
            initial_nbar: self.initial_nbar,
            heating_rate: self.heating_rate,
            gate_duration: self.gate_duration,
            n_max: self.n_max.unwrap_or_else(|| MSGateParams::min_n_max(self.initial_nbar)),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn confusion(&self) -> Result<ConfusionMatrix, trapsim::Error> {
        ConfusionMatrix::new(self.p10, self.p01)
    }
}
