//! Online fault triggering: a one-sided CUSUM on the calibrated failure
//! probability, plus threshold moving for class imbalance and prevalence
//! shift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CusumParams {
    /// Probability threshold `T_fp`.
    pub prob_threshold: f64,
    /// Trigger threshold `T_cs`; zero reduces the detector to `x > T_fp`.
    pub trigger_threshold: f64,
    /// Slack `κ` subtracted on every step.
    pub slack: f64,
}

impl Default for CusumParams {
    fn default() -> Self {
        CusumParams { prob_threshold: 0.75, trigger_threshold: 4.0, slack: 0.02 }
    }
}

impl CusumParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prob_threshold) {
            return Err(Error::Config("detector.prob_threshold must lie in [0, 1]".into()));
        }
        if !(self.trigger_threshold >= 0.0) || !(self.slack >= 0.0) {
            return Err(Error::Config("detector.trigger_threshold and detector.slack must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// `C_i = max(0, C_{i−1} + x_i − (T_fp + κ))`, triggering once `C_i > T_cs`.
/// After triggering the state is frozen until [`reset`](Self::reset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CusumDetector {
    pub params: CusumParams,
    sum: f64,
    steps: usize,
    trigger_index: Option<usize>,
}

impl CusumDetector {
    pub fn new(params: CusumParams) -> Result<Self> {
        params.validate()?;
        Ok(CusumDetector { params, sum: 0.0, steps: 0, trigger_index: None })
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }

    pub fn triggered(&self) -> bool {
        self.trigger_index.is_some()
    }

    /// Zero-based index of the step that triggered.
    pub fn trigger_index(&self) -> Option<usize> {
        self.trigger_index
    }

    /// Feeds one calibrated failure probability; returns whether the
    /// detector has triggered.
    pub fn step(&mut self, prob: f64) -> Result<bool> {
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::invalid(format!("failure probability {prob} outside [0, 1]")));
        }
        if self.triggered() {
            return Ok(true);
        }
        let p = &self.params;
        self.sum = (self.sum + (prob - (p.prob_threshold + p.slack))).max(0.0);
        if self.sum > p.trigger_threshold {
            self.trigger_index = Some(self.steps);
        }
        self.steps += 1;
        Ok(self.triggered())
    }

    /// Runs a whole sequence from a fresh state; returns the trigger index.
    pub fn first_trigger(params: CusumParams, probs: &[f64]) -> Result<Option<usize>> {
        let mut d = CusumDetector::new(params)?;
        for &p in probs {
            if d.step(p)? {
                break;
            }
        }
        Ok(d.trigger_index)
    }

    pub fn reset(&mut self) {
        self.sum = 0.0;
        self.steps = 0;
        self.trigger_index = None;
    }
}

/// Probability threshold after a prevalence shift from `train_prevalence`
/// to `deploy_prevalence`: `r / (r + r′)`.
pub fn adapt_threshold(train_prevalence: f64, deploy_prevalence: f64) -> Result<f64> {
    let open = |v: f64| v > 0.0 && v < 1.0;
    if !open(train_prevalence) || !open(deploy_prevalence) {
        return Err(Error::invalid("prevalences must lie strictly between 0 and 1"));
    }
    Ok(train_prevalence / (train_prevalence + deploy_prevalence))
}

/// Threshold-moving default: with balanced per-class data the faulty share
/// of the binary training set is `n/(n+1)`, which becomes the threshold.
pub fn default_threshold(n_fault_classes: usize, balanced: bool) -> Result<f64> {
    if n_fault_classes == 0 {
        return Err(Error::invalid("need at least one fault class"));
    }
    if !balanced {
        return Ok(0.5);
    }
    let n = n_fault_classes as f64;
    Ok(n / (n + 1.0))
}
