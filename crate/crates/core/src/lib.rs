//! Surface-electrode ion-trap simulator and estimation toolkit.
//!
//! * [`types`]: species, beams, modes and phonon distributions
//! * [`trap`]: analytic gapless-plane electrostatics and operating point
//! * [`micromotion`]: DC-scan micromotion patterns and stray-field monitoring
//! * [`raman`]: carrier/sideband Rabi dynamics and phonon-number fitting
//! * [`cooling`]: pulsed sideband cooling, heating and thermometry
//! * [`ms_gate`]: two-ion Mølmer–Sørensen dynamics with detection errors
//! * [`fitkit`]: special functions and least-squares machinery

pub mod cooling;
pub mod error;
pub mod fitkit;
pub mod micromotion;
pub mod ms_gate;
pub mod ode;
pub mod raman;
pub mod trap;
pub mod types;

pub use error::{Error, Result};
