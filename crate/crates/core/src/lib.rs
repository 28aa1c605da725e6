//! Natural-language control of a small differential-drive robot.
//!
//! Text is translated into a compact command language ([`command`]), compiled
//! through calibration models ([`calibration`], [`drivetrain`]) into timed
//! motor actions, relayed over an emulated access point and serial link
//! ([`bridge`]) and executed by a kinematic simulator ([`simulator`]) whose
//! ultrasonic ranger is smoothed by a moving average ([`ultrasonic`]).
//! [`translator`] hosts the language-model backends and [`eval`] the
//! pass/fail harness.

pub mod bridge;
pub mod calibration;
pub mod command;
pub mod config;
pub mod drivetrain;
pub mod eval;
pub mod simulator;
pub mod translator;
pub mod ultrasonic;

pub use command::{parse_sequence, serialize, validate, Command, CommandSequence, ParseDiagnostic};
