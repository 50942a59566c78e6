//! L0-penalized weighted least squares for the high-dimensional accelerated
//! failure time model.
//!
//! Censored log survival times are turned into an ordinary least squares
//! problem through Kaplan-Meier jump weights ([`survival_data`]), solved for
//! a fixed support size by support detection and root finding ([`sdar`]),
//! and tuned over the support size by HBIC or cross-validation ([`tuner`]).
//! [`simgen`] and [`bench`] reproduce simulation studies; [`cli`] is the
//! command-line front end.

pub mod bench;
pub mod cli;
pub mod error;
pub mod io;
pub mod sdar;
pub mod simgen;
pub mod survival_data;
pub mod tuner;

pub use error::{AftError, CsvError, Result};
pub use sdar::{sdar_fit, SdarConfig, SdarFit, Termination};
pub use survival_data::{prepare_design, StandardizedDesign, SurvivalDataset};
pub use tuner::{asdar_tune, Criterion, TuningConfig};
