//! Inductive conformal anomaly detection on the reconstruction error `e`.
//!
//! A window is out-of-distribution when its error exceeds the conformal
//! threshold; a trajectory raises a warning once more than a configured
//! number of its windows were flagged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rank `⌈(n + 1)(1 − α)⌉` (1-based). The product is nudged down by a few
/// ulps so that exact integers such as `100 · 0.99` are not pushed up by
/// floating-point noise.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    let x = (n as f64 + 1.0) * (1.0 - alpha);
    (x - x.abs() * 4.0 * f64::EPSILON).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalThreshold {
    pub threshold: f64,
    pub alpha: f64,
    pub n: usize,
    pub rank: usize,
}

impl ConformalThreshold {
    /// Threshold = order statistic of the calibration errors at
    /// [`conformal_rank`].
    pub fn calibrate(errors: &[f64], alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!("significance level {alpha} must lie in (0, 1)")));
        }
        if errors.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("non-finite calibration error"));
        }
        let n = errors.len();
        let rank = conformal_rank(n, alpha);
        if n == 0 || rank > n {
            return Err(Error::InsufficientData(format!(
                "{n} calibration errors are too few for α = {alpha} (rank {rank})"
            )));
        }
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(ConformalThreshold { threshold: sorted[rank - 1], alpha, n, rank })
    }

    /// Strictly above the threshold.
    pub fn is_ood(&self, error: f64) -> bool {
        error > self.threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodTrajectoryMonitor {
    /// Warn once the flagged-window count exceeds this.
    pub max_flagged: usize,
    flagged: usize,
    warned_at: Option<usize>,
    steps: usize,
}

impl OodTrajectoryMonitor {
    pub const DEFAULT_MAX_FLAGGED: usize = 100;

    pub fn new(max_flagged: usize) -> Self {
        OodTrajectoryMonitor { max_flagged, flagged: 0, warned_at: None, steps: 0 }
    }

    /// Records one window; returns whether the trajectory is warned.
    pub fn step(&mut self, flagged: bool) -> bool {
        if flagged {
            self.flagged += 1;
        }
        if self.warned_at.is_none() && self.flagged > self.max_flagged {
            self.warned_at = Some(self.steps);
        }
        self.steps += 1;
        self.warned()
    }

    pub fn warned(&self) -> bool {
        self.warned_at.is_some()
    }

    /// Zero-based index of the window that raised the warning.
    pub fn warned_at(&self) -> Option<usize> {
        self.warned_at
    }

    pub fn flagged(&self) -> usize {
        self.flagged
    }
}

impl Default for OodTrajectoryMonitor {
    fn default() -> Self {
        Self::new(Self::DEFAULT_MAX_FLAGGED)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn order_statistic_examples() {
        assert_eq!(conformal_rank(99, 0.01), 99);
        assert_eq!(conformal_rank(199, 0.05), 190);
        assert_eq!(conformal_rank(3, 0.5), 2);

        let errs: Vec<f64> = (1..=99).map(|i| i as f64).rev().collect();
        assert_eq!(ConformalThreshold::calibrate(&errs, 0.01).unwrap().threshold, 99.0);
        let errs: Vec<f64> = (1..=199).map(|i| i as f64 * 0.5).collect();
        assert_eq!(ConformalThreshold::calibrate(&errs, 0.05).unwrap().threshold, 95.0);
        assert_eq!(ConformalThreshold::calibrate(&[3.0, 1.0, 2.0], 0.5).unwrap().threshold, 2.0);
    }

    #[test]
    fn too_few_samples() {
        assert!(ConformalThreshold::calibrate(&[1.0; 98], 0.01).is_err());
        assert!(ConformalThreshold::calibrate(&[], 0.5).is_err());
        assert!(ConformalThreshold::calibrate(&[1.0], 0.0).is_err());
    }

    #[test]
    fn strict_boundary() {
        let t = ConformalThreshold::calibrate(&[0.1, 0.2, 0.3], 0.5).unwrap();
        assert!(!t.is_ood(0.0));
        assert!(!t.is_ood(t.threshold));
        assert!(t.is_ood(t.threshold + 1e-12));
    }

    #[test]
    fn trajectory_warning_is_strict() {
        let mut m = OodTrajectoryMonitor::new(100);
        for _ in 0..100 {
            assert!(!m.step(true));
        }
        assert!(m.step(true));
        assert_eq!(m.warned_at(), Some(100));

        let mut quiet = OodTrajectoryMonitor::default();
        for _ in 0..1000 {
            assert!(!quiet.step(false));
        }
    }

    proptest! {
        #[test]
        fn smaller_alpha_never_lowers_threshold(errs in prop::collection::vec(0.0f64..10.0, 200..400), a in 0.01f64..0.5, b in 0.01f64..0.5) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let t_lo = ConformalThreshold::calibrate(&errs, lo).unwrap();
            let t_hi = ConformalThreshold::calibrate(&errs, hi).unwrap();
            prop_assert!(t_lo.threshold >= t_hi.threshold);
        }

        #[test]
        fn warning_is_monotone_in_flags(flags in prop::collection::vec(any::<bool>(), 0..60), extra in prop::collection::vec(any::<usize>(), 0..10)) {
            let run = |f: &[bool]| {
                let mut m = OodTrajectoryMonitor::new(5);
                f.iter().fold(false, |_, &x| m.step(x))
            };
            let mut more = flags.clone();
            for i in extra {
                if !more.is_empty() {
                    let k = i % more.len();
                    more[k] = true;
                }
            }
            prop_assert!(!run(&flags) || run(&more));
        }

        #[test]
        fn rank_matches_rational_ceiling(n in 1usize..5000, pct in 1u32..99) {
            // α = pct/100 exactly in rationals: ceil((n+1)(100−pct)/100).
            let want = ((n + 1) * (100 - pct as usize)).div_ceil(100);
            prop_assert_eq!(conformal_rank(n, pct as f64 / 100.0), want);
        }
    }
}
