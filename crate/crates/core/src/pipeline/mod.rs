//! Configuration, artifact management and the stages behind the CLI.
//!
//! Every stage reads its inputs from the data root, checks that they were
//! produced by the current configuration (a chained hash stored in each
//! artifact) and writes its own outputs; stages never touch upstream
//! artifacts, so any of them can be re-run in isolation.

pub mod artifacts;
pub mod bench;
pub mod config;
pub mod monitor;
pub mod report;
pub(crate) mod stages;

pub use artifacts::{FeatureSet, FeatureSetName, Layout, Manifest};
pub use config::{FeatureInput, PipelineConfig, StageHashes, DATA_ROOT_ENV};
pub use monitor::{Deployment, Event, FaultEvent, OodWarning, StepOutput, StreamMonitor};
pub use report::{EvalReport, SetReport, TrajectoryOutcome};
pub use stages::{CalibrationArtifact, Pipeline};
