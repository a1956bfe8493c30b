//! Online inference: window assembly, CUSUM-gated detection, diagnosis of
//! the triggering window and the OOD trajectory warning.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::calib::{Calibrator, MulticlassCalibrator};
use crate::data::Scaler;
use crate::detect::{CusumDetector, CusumParams};
use crate::error::{Error, Result};
use crate::gbt::{argmax, GbtEnsemble};
use crate::ood::{ConformalThreshold, OodTrajectoryMonitor};
use crate::sim::{N_CHANNELS, SAMPLE_RATE};
use crate::tcae::{Features, TcaeModel};

use super::config::FeatureInput;

/// Everything needed to monitor a stream, loaded from the artifacts.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub scaler: Scaler,
    pub tcae: TcaeModel,
    pub detector: GbtEnsemble,
    pub detector_input: FeatureInput,
    pub detector_calibration: Calibrator,
    pub diagnoser: GbtEnsemble,
    pub diagnoser_input: FeatureInput,
    pub diagnoser_calibration: MulticlassCalibrator,
    pub ood: ConformalThreshold,
    pub cusum: CusumParams,
    pub max_flagged: usize,
    pub step: usize,
}

impl Deployment {
    pub fn window_len(&self) -> usize {
        self.tcae.config.window_len
    }

    /// Calibrated failure probability of one window.
    pub fn failure_probability(&self, f: &Features) -> Result<f64> {
        let raw = self.detector.predict_row(&self.detector_input.select(f))?;
        Ok(self.detector_calibration.apply(raw[1]).clamp(0.0, 1.0))
    }

    /// Calibrated class probabilities of one window.
    pub fn diagnose(&self, f: &Features) -> Result<(u32, f64, Vec<f64>)> {
        let raw = self.diagnoser.predict_row(&self.diagnoser_input.select(f))?;
        let probs = self.diagnoser_calibration.apply(&raw);
        let k = argmax(&probs);
        Ok((self.diagnoser.classes[k], probs[k], probs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub traj_id: u32,
    /// Window start plus window length, in seconds.
    pub time_s: f64,
    pub window_index: usize,
    pub probability: f64,
    pub class: u32,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodWarning {
    pub traj_id: u32,
    pub time_s: f64,
    pub window_index: usize,
    pub flagged_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Fault(FaultEvent),
    OodWarning(OodWarning),
}

/// Result of processing one window.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub window_index: usize,
    pub start_index: usize,
    pub probability: f64,
    pub ood_flag: bool,
    /// Events raised by this window (at most one of each kind per stream).
    pub events: Vec<Event>,
}

/// Per-stream state. Windows must be fed strictly in time order.
#[derive(Debug, Clone)]
pub struct StreamMonitor<'a> {
    deployment: &'a Deployment,
    traj_id: u32,
    cusum: CusumDetector,
    ood: OodTrajectoryMonitor,
    windows: usize,
    samples: usize,
    buffer: VecDeque<[f32; N_CHANNELS]>,
}

impl<'a> StreamMonitor<'a> {
    pub fn new(deployment: &'a Deployment, traj_id: u32) -> Result<Self> {
        Ok(StreamMonitor {
            deployment,
            traj_id,
            cusum: CusumDetector::new(deployment.cusum)?,
            ood: OodTrajectoryMonitor::new(deployment.max_flagged),
            windows: 0,
            samples: 0,
            buffer: VecDeque::with_capacity(deployment.window_len()),
        })
    }

    pub fn detector(&self) -> &CusumDetector {
        &self.cusum
    }

    pub fn ood_monitor(&self) -> &OodTrajectoryMonitor {
        &self.ood
    }

    /// Feeds the features of the window starting at sample `start_index`.
    pub fn step_features(&mut self, f: &Features, start_index: usize) -> Result<StepOutput> {
        let d = self.deployment;
        let probability = d.failure_probability(f)?;
        let was_triggered = self.cusum.triggered();
        let was_warned = self.ood.warned();
        let mut events = Vec::new();
        let time_s = (start_index + d.window_len()) as f64 / SAMPLE_RATE;
        if self.cusum.step(probability)? && !was_triggered {
            let (class, confidence, _) = d.diagnose(f)?;
            events.push(Event::Fault(FaultEvent {
                traj_id: self.traj_id,
                time_s,
                window_index: self.windows,
                probability,
                class,
                confidence,
            }));
        }
        // The OOD warning is informational and never halts detection.
        let ood_flag = d.ood.is_ood(f.e);
        if self.ood.step(ood_flag) && !was_warned {
            events.push(Event::OodWarning(OodWarning {
                traj_id: self.traj_id,
                time_s,
                window_index: self.windows,
                flagged_windows: self.ood.flagged(),
            }));
        }
        let out = StepOutput { window_index: self.windows, start_index, probability, ood_flag, events };
        self.windows += 1;
        Ok(out)
    }

    /// Feeds one scaled, unclamped window (`values[c * len + t]`).
    pub fn step_window(&mut self, values: &[f32], start_index: usize) -> Result<StepOutput> {
        let f = self.deployment.tcae.features_unclamped(values)?;
        self.step_features(&f, start_index)
    }

    /// Feeds one raw multichannel sample; emits an output whenever a window
    /// completes (every `step` samples once the first window is full).
    pub fn push_sample(&mut self, sample: &[f32]) -> Result<Option<StepOutput>> {
        if sample.len() != N_CHANNELS {
            return Err(Error::shape(format!("{N_CHANNELS} channels"), sample.len()));
        }
        let len = self.deployment.window_len();
        if self.buffer.len() == len {
            self.buffer.pop_front();
        }
        let mut row = [0.0f32; N_CHANNELS];
        row.copy_from_slice(sample);
        self.buffer.push_back(row);
        self.samples += 1;
        if self.samples < len || !(self.samples - len).is_multiple_of(self.deployment.step) {
            return Ok(None);
        }
        let scaler = &self.deployment.scaler;
        let mut values = Vec::with_capacity(N_CHANNELS * len);
        for c in 0..N_CHANNELS {
            values.extend(self.buffer.iter().map(|s| scaler.scale(c, s[c] as f64) as f32));
        }
        self.step_window(&values, self.samples - len).map(Some)
    }
}

/// Parses one CSV line of a trajectory export (`time_s,<channels…>`).
pub fn parse_csv_sample(line: &str) -> Result<Vec<f32>> {
    let mut fields = line.split(',');
    fields.next();
    let values = fields
        .map(|v| v.trim().parse::<f32>().map_err(|e| Error::Format(format!("bad value '{v}': {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != N_CHANNELS {
        return Err(Error::shape(format!("{N_CHANNELS} channel values"), values.len()));
    }
    Ok(values)
}
