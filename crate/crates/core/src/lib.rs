//! Readout of spin populations from time-resolved single-photon fluorescence traces.
//!
//! Two estimators are provided side by side:
//!
//! * [`gate`]: the traditional time-gated count sum, calibrated against two
//!   boundary traces, with contrast / total-variance metrics and a gate-width sweep.
//! * [`regression`]: a per-bin weighted linear estimator with nonnegative
//!   weights, trained by projected gradient descent on a loss that combines a
//!   heavily weighted prediction error with the Poisson variance of the estimate.
//!
//! [`trace`] simulates Poisson photon traces from a phenomenological emission
//! model and acts as ground truth, [`rabi`] fits Rabi oscillations and assigns
//! regression targets, and [`eval`] compares the methods. File formats live in [`io`].

pub mod error;
pub mod eval;
pub mod gate;
pub mod io;
pub mod rabi;
pub mod regression;
pub mod stats;
pub mod trace;

pub use error::{Error, Result};
pub use gate::{GateCalibration, GateMetrics, GateWindow, SweepResult};
pub use rabi::{RabiDataset, RabiPoint, SinusoidFit};
pub use regression::{InitStrategy, LossBreakdown, ReadoutModel, TrainConfig, TrainingExample};
pub use trace::{EmissionProfile, PhotodynamicsParams, TimeTrace};

/// Version of every on-disk schema written by this crate.
pub const FORMAT_VERSION: u32 = 1;
