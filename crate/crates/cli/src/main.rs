//! `trapsim` command-line front end.
//!
//! Exit codes: 0 success, 1 physics or fit failure (JSON report on stderr),
//! 2 usage or configuration error.

mod commands;
mod config;
mod io;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::Beams;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Physics(#[from] trapsim::Error),
    #[error("{0}")]
    Selftest(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        use trapsim::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Selftest(_) => "selftest",
            CliError::Physics(e) => match e {
                E::Domain(_) => "domain",
                E::Truncation { .. } => "truncation",
                E::SearchFailed(_) => "search_failed",
                E::Unstable(_) => "unstable",
                E::DegenerateGeometry(_) => "degenerate_geometry",
                E::DegenerateFit(_) => "degenerate_fit",
                E::OutOfValidity(_) => "out_of_validity",
                E::Integration(_) => "integration",
                E::Usage(_) => "usage",
                E::Fit(_) => "fit",
            },
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Physics(trapsim::Error::Usage(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

#[derive(Parser, Debug)]
#[command(name = "trapsim", version, about = "Surface-trap ion simulation and estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Output {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Locate the trapping minimum of a layout and report frequencies, axes and q.
    Trap {
        /// Layout JSON; the calibrated default chip when omitted.
        #[arg(long)]
        layout: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Solve electrode voltages of the default chip for target frequencies.
    Calibrate {
        /// CalibrationTargets JSON; defaults when omitted.
        #[arg(long)]
        targets: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Simulate DC compensation scans; CSV `timestamp_s,delta_v_V,p1,shots`.
    DcScan(DcScanArgs),
    /// Fit every scan in a CSV; JSON list of `{t, e_y_estimate, sigma, chi2red}`.
    FitScan {
        #[arg(long = "in")]
        input: PathBuf,
        /// V/m per V; from the default chip when omitted.
        #[arg(long, allow_hyphen_values = true)]
        gain: Option<f64>,
        #[command(flatten)]
        output: Output,
    },
    /// Simulate carrier Rabi flops; CSV `t_us,p1`.
    Rabi(RabiArgs),
    /// Fit thermal n̄ (counter-propagating) or a sinusoid (co-propagating).
    FitRabi(FitRabiArgs),
    /// Apply a sideband-cooling schedule to thermal radial modes.
    Sbc(SbcArgs),
    /// Mean phonon number under heating; CSV `t_s,nbar`.
    Heating(HeatingArgs),
    /// Fit a heating rate to a `t_s,nbar` CSV.
    FitHeating {
        #[arg(long = "in")]
        input: PathBuf,
        /// 1σ uncertainty of every n̄ value.
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        #[arg(long, default_value = "r2")]
        mode: String,
        #[command(flatten)]
        output: Output,
    },
    /// Two-ion Mølmer–Sørensen populations; CSV `t_us,p00,p01,p10,p11`.
    MsGate(MsGateArgs),
    /// Fit Ω, δ, n̄ and read-out errors to an MS population CSV.
    FitMs {
        #[arg(long = "in")]
        input: PathBuf,
        /// Shots per time point; expected values when omitted.
        #[arg(long)]
        shots: Option<u64>,
        /// Initial guess in the ms-gate parameter format.
        #[arg(long)]
        guess: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Run the built-in oracle checks and print PASS/FAIL per check.
    Selftest,
}

#[derive(Args, Debug)]
pub struct DcScanArgs {
    /// Scan config JSON; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Constant stray field E_y, V/m.
    #[arg(long, allow_hyphen_values = true)]
    stray: Option<f64>,
    /// Compensation voltages start:stop:step, V.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Shots per point, or `inf` for expected values.
    #[arg(long)]
    shots: Option<String>,
    /// Scan instants, s, comma separated.
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    /// V/m per V; derived from the layout when omitted.
    #[arg(long, allow_hyphen_values = true)]
    gain: Option<f64>,
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
pub struct RabiArgs {
    /// Rabi config JSON; Doppler-cooled 545 kHz defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    beams: Option<Beams>,
    /// Shots per point; expected values when omitted.
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
pub struct FitRabiArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Shots per point; expected values when omitted.
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long, value_enum, default_value = "counter")]
    beams: Beams,
    /// Initial Ω/2π, Hz.
    #[arg(long, default_value_t = 545e3)]
    rabi_guess: f64,
    /// Initial (n̄₁, n̄₂).
    #[arg(long, value_delimiter = ',', default_values_t = vec![5.0, 5.0])]
    nbar_guess: Vec<f64>,
    /// Radial frequencies (f₁, f₂), Hz.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.84e6, 2.11e6])]
    frequencies: Vec<f64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
pub struct SbcArgs {
    /// Pulse schedule JSON (list of pulses or {pulses, repump_after_each});
    /// the stand-in schedule on both modes when omitted.
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// Initial (n̄₁, n̄₂).
    #[arg(long, value_delimiter = ',', default_values_t = vec![15.0, 14.0])]
    nbar: Vec<f64>,
    /// Radial frequencies (f₁, f₂), Hz.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.84e6, 2.11e6])]
    frequencies: Vec<f64>,
    /// Sideband Rabi drive for the stand-in schedule, Hz.
    #[arg(long, default_value_t = 545e3)]
    rabi: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
pub struct HeatingArgs {
    /// quanta/s
    #[arg(long, allow_hyphen_values = true)]
    rate: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    nbar0: f64,
    /// Delay times, s, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    times: Vec<f64>,
    #[arg(long, default_value = "r2")]
    mode: String,
    /// Gaussian read-out noise on each n̄; exact means when omitted.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
pub struct MsGateArgs {
    /// MS parameter JSON.
    #[arg(long)]
    params: PathBuf,
    /// Skip the read-out confusion map.
    #[arg(long)]
    ideal_readout: bool,
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: Output,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Trap { layout, output } => commands::trap(layout.as_deref(), output.out.as_deref()),
        Command::Calibrate { targets, output } => commands::calibrate(targets.as_deref(), output.out.as_deref()),
        Command::DcScan(a) => commands::dc_scan(&a),
        Command::FitScan { input, gain, output } => commands::fit_scan(&input, gain, output.out.as_deref()),
        Command::Rabi(a) => commands::rabi(&a),
        Command::FitRabi(a) => commands::fit_rabi(&a),
        Command::Sbc(a) => commands::sbc(&a),
        Command::Heating(a) => commands::heating(&a),
        Command::FitHeating { input, sigma, mode, output } => {
            commands::fit_heating(&input, sigma, &mode, output.out.as_deref())
        }
        Command::MsGate(a) => commands::ms_gate(&a),
        Command::FitMs { input, shots, guess, output } => {
            commands::fit_ms(&input, shots, guess.as_deref(), output.out.as_deref())
        }
        Command::Selftest => selftest::run(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap exits 2 for usage errors and 0 for --help / --version
            e.exit()
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport { error: e.kind(), message: e.to_string() };
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_else(|_| e.to_string()));
            ExitCode::from(e.exit_code())
        }
    }
}
