//! Fault detection, diagnosis and out-of-distribution monitoring for the
//! multichannel telemetry of an electrically actuated valve.
//!
//! The crate is organised along the data flow of the monitoring pipeline:
//!
//! - [`sim`]: labeled synthetic trajectories from a toy dq-frame motor model
//! - [`data`]: min-max scaling, sliding windows, splits and class-imbalance resampling
//! - [`tcae`]: temporal convolutional autoencoder producing the latent vector `z`,
//!   the residual vector `r` and the reconstruction error `e`
//! - [`gbt`]: histogram gradient-boosted trees for fault detection and diagnosis
//! - [`calib`]: Platt and isotonic calibration, one-vs-all extension, ECE/MCE/Brier
//! - [`detect`]: CUSUM gating of the calibrated failure probability
//! - [`ood`]: inductive conformal anomaly detection on `e`
//! - [`eval`]: metrics, benchmark grids and reports
//! - [`pipeline`]: configuration, artifact management and the stages behind the CLI
//!
//! Runnable walkthroughs for each capability live in the crate's `examples/`
//! directory.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod container;
pub mod data;
pub mod detect;
pub mod error;
pub mod eval;
pub mod gbt;
pub mod ood;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod tcae;

pub use error::{Error, Result};
