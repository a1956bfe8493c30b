use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calib::{self, CalibrationMetrics, ReliabilityData};
use crate::error::Result;
use crate::eval::{self, BinaryMetrics, Confusion, MulticlassMetrics, Summary};
use crate::gbt::argmax;
use crate::sim::{Label, TrajType};

use super::artifacts::FeatureSet;
use super::monitor::{Deployment, Event, StreamMonitor};

/// Outcome of monitoring one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutcome {
    pub traj_id: u32,
    pub label: Label,
    pub traj_type: TrajType,
    pub windows: usize,
    pub triggered: bool,
    pub detection_time_s: Option<f64>,
    pub diagnosed_class: Option<u32>,
    pub diagnosis_confidence: Option<f64>,
    pub ood_flagged_windows: usize,
    pub ood_warned: bool,
}

/// Replays the precomputed window features of every trajectory through a
/// fresh [`StreamMonitor`].
pub fn monitor_set(d: &Deployment, set: &FeatureSet) -> Result<Vec<TrajectoryOutcome>> {
    set.trajectories()
        .into_iter()
        .map(|range| {
            let first = range.start;
            let mut m = StreamMonitor::new(d, set.traj_ids[first])?;
            let mut out = TrajectoryOutcome {
                traj_id: set.traj_ids[first],
                label: set.labels[first],
                traj_type: set.traj_types[first],
                windows: range.len(),
                triggered: false,
                detection_time_s: None,
                diagnosed_class: None,
                diagnosis_confidence: None,
                ood_flagged_windows: 0,
                ood_warned: false,
            };
            for i in range {
                for ev in m.step_features(&set.features(i), set.starts[i])?.events {
                    if let Event::Fault(f) = ev {
                        out.triggered = true;
                        out.detection_time_s = Some(f.time_s);
                        out.diagnosed_class = Some(f.class);
                        out.diagnosis_confidence = Some(f.confidence);
                    }
                }
            }
            out.ood_flagged_windows = m.ood_monitor().flagged();
            out.ood_warned = m.ood_monitor().warned();
            Ok(out)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionTimeRow {
    pub class: u32,
    /// `None` aggregates all trajectory types.
    pub traj_type: Option<TrajType>,
    pub detected: usize,
    pub total: usize,
    pub seconds: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub bins: usize,
    pub uncalibrated: CalibrationMetrics,
    pub calibrated: CalibrationMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRow {
    pub correct: bool,
    pub class: u32,
    pub traj_type: TrajType,
    pub count: usize,
    pub mean_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetReport {
    pub name: String,
    pub trajectories: usize,
    pub windows: usize,
    /// Trajectory level: positive iff the CUSUM triggered.
    pub detection: BinaryMetrics,
    /// Window level, on the uncalibrated detector score.
    pub window_auroc: Option<f64>,
    /// Detected true faults only; `None` when there are none.
    pub diagnosis: Option<MulticlassMetrics>,
    /// This set's trajectories against the OOD trajectories.
    pub ood: BinaryMetrics,
    pub detection_times: Vec<DetectionTimeRow>,
    pub detector_calibration: Vec<CalibrationRow>,
    pub diagnoser_calibration: Vec<CalibrationRow>,
    pub confidence: Vec<ConfidenceRow>,
    pub outcomes: Vec<TrajectoryOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSummary {
    pub threshold: f64,
    pub alpha: f64,
    pub calibration_windows: usize,
    pub max_flagged: usize,
    pub flagged_fraction: BTreeMap<String, f64>,
    pub outcomes: Vec<TrajectoryOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub model_hashes: BTreeMap<String, String>,
    pub sets: Vec<SetReport>,
    pub ood: OodSummary,
}

/// Reliability diagrams kept out of the JSON report and written as CSV.
#[derive(Debug, Clone)]
pub struct ReliabilityExport {
    pub name: String,
    pub data: ReliabilityData,
}

fn detection_times(outcomes: &[TrajectoryOutcome]) -> Vec<DetectionTimeRow> {
    let mut classes: Vec<u32> = outcomes.iter().filter(|o| o.label.is_fault()).map(|o| o.label.0 as u32).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut rows = Vec::new();
    for class in classes {
        for tt in [None, Some(TrajType::T1), Some(TrajType::T2), Some(TrajType::T3)] {
            let group: Vec<&TrajectoryOutcome> = outcomes
                .iter()
                .filter(|o| o.label.0 as u32 == class && tt.is_none_or(|t| o.traj_type == t))
                .collect();
            if group.is_empty() {
                continue;
            }
            let times: Vec<f64> = group.iter().filter_map(|o| o.detection_time_s).collect();
            rows.push(DetectionTimeRow {
                class,
                traj_type: tt,
                detected: times.len(),
                total: group.len(),
                seconds: eval::summarize(&times),
            });
        }
    }
    rows
}

fn confidence_rows(set: &FeatureSet, idx: &[usize], predicted: &[(u32, f64)]) -> Vec<ConfidenceRow> {
    let mut groups: BTreeMap<(bool, u32, TrajType), (usize, f64)> = BTreeMap::new();
    for (&i, &(class, conf)) in idx.iter().zip(predicted) {
        let truth = set.labels[i].0 as u32;
        let g = groups.entry((class == truth, truth, set.traj_types[i])).or_default();
        g.0 += 1;
        g.1 += conf;
    }
    groups
        .into_iter()
        .map(|((correct, class, traj_type), (count, sum))| ConfidenceRow {
            correct,
            class,
            traj_type,
            count,
            mean_confidence: sum / count as f64,
        })
        .collect()
}

/// Evaluates one labeled set; `ood` holds the outcomes of the OOD
/// trajectories used as positives of the OOD task.
pub fn evaluate_set(
    name: &str,
    d: &Deployment,
    set: &FeatureSet,
    ood: &[TrajectoryOutcome],
    bins: &[usize],
    plot_bins: usize,
) -> Result<(SetReport, Vec<ReliabilityExport>)> {
    let outcomes = monitor_set(d, set)?;
    let predicted: Vec<bool> = outcomes.iter().map(|o| o.triggered).collect();
    let truth: Vec<bool> = outcomes.iter().map(|o| o.label.is_fault()).collect();
    let detection = Confusion::from_predictions(&predicted, &truth)?.metrics();

    let diag: Vec<&TrajectoryOutcome> = outcomes.iter().filter(|o| o.label.is_fault() && o.triggered).collect();
    let diagnosis = if diag.is_empty() {
        None
    } else {
        let p: Vec<u32> = diag.iter().map(|o| o.diagnosed_class.unwrap_or(0)).collect();
        let t: Vec<u32> = diag.iter().map(|o| o.label.0 as u32).collect();
        Some(eval::multiclass_metrics(&p, &t, &d.diagnoser.classes)?)
    };

    let ood_pred: Vec<bool> = outcomes.iter().chain(ood).map(|o| o.ood_warned).collect();
    let ood_truth: Vec<bool> = outcomes.iter().chain(ood).map(|o| o.label.is_ood()).collect();
    let ood_metrics = Confusion::from_predictions(&ood_pred, &ood_truth)?.metrics();

    // Window-level detector scores.
    let rows = set.rows(d.detector_input);
    let raw = d.detector.positive_scores(&rows)?;
    let cal: Vec<f64> = raw.iter().map(|&s| d.detector_calibration.apply(s).clamp(0.0, 1.0)).collect();
    let win_truth: Vec<bool> = set.labels.iter().map(|l| l.is_fault()).collect();
    let both = win_truth.contains(&true) && win_truth.contains(&false);
    let window_auroc = if both { Some(eval::auroc(&raw, &win_truth)?) } else { None };
    let mut exports = Vec::new();
    let mut detector_calibration = Vec::new();
    if both {
        for &b in bins {
            detector_calibration.push(CalibrationRow {
                bins: b,
                uncalibrated: calib::metrics(&raw, &win_truth, b)?,
                calibrated: calib::metrics(&cal, &win_truth, b)?,
            });
        }
        for (tag, p) in [("raw", &raw), ("calibrated", &cal)] {
            exports.push(ReliabilityExport {
                name: format!("reliability_{name}_detector_{tag}.csv"),
                data: calib::reliability(p, &win_truth, plot_bins)?,
            });
        }
    }

    // Window-level diagnoser scores on faulty windows of known classes.
    let classes = &d.diagnoser.classes;
    let idx: Vec<usize> = (0..set.len()).filter(|&i| classes.contains(&(set.labels[i].0 as u32))).collect();
    let mut diagnoser_calibration = Vec::new();
    let mut confidence = Vec::new();
    if !idx.is_empty() {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| set.row(i, d.diagnoser_input)).collect();
        let labels: Vec<u32> = idx.iter().map(|&i| set.labels[i].0 as u32).collect();
        let raw = d.diagnoser.predict_scores(&rows)?;
        let cal = d.diagnoser_calibration.apply_all(&raw);
        for &b in bins {
            diagnoser_calibration.push(CalibrationRow {
                bins: b,
                uncalibrated: calib::multiclass_metrics(&raw, &labels, classes, b)?,
                calibrated: calib::multiclass_metrics(&cal, &labels, classes, b)?,
            });
        }
        for (tag, p) in [("raw", &raw), ("calibrated", &cal)] {
            let (top, hit) = calib::top_label(p, &labels, classes);
            exports.push(ReliabilityExport {
                name: format!("reliability_{name}_diagnoser_{tag}.csv"),
                data: calib::reliability(&top, &hit, plot_bins)?,
            });
        }
        let predicted: Vec<(u32, f64)> = cal
            .iter()
            .map(|row| {
                let k = argmax(row);
                (classes[k], row[k])
            })
            .collect();
        confidence = confidence_rows(set, &idx, &predicted);
    }

    let report = SetReport {
        name: name.to_string(),
        trajectories: outcomes.len(),
        windows: set.len(),
        detection,
        window_auroc,
        diagnosis,
        ood: ood_metrics,
        detection_times: detection_times(&outcomes),
        detector_calibration,
        diagnoser_calibration,
        confidence,
        outcomes,
    };
    Ok((report, exports))
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn opt(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.4}"))
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "evaluation report (seed {})", self.seed);
        for (k, v) in &self.model_hashes {
            let _ = writeln!(s, "  {k:<10} {v}");
        }
        for set in &self.sets {
            let d = &set.detection;
            let _ = writeln!(s, "\n[{}] {} trajectories, {} windows", set.name, set.trajectories, set.windows);
            let _ = writeln!(
                s,
                "  detection  acc {}  prec {}  rec {}  f1 {}  fpr {}  fnr {}  window auroc {}",
                pct(d.accuracy),
                pct(d.precision),
                pct(d.recall),
                pct(d.f1),
                pct(d.fpr),
                pct(d.fnr),
                opt(set.window_auroc)
            );
            match &set.diagnosis {
                Some(m) => {
                    let _ = writeln!(
                        s,
                        "  diagnosis  acc {}  macro prec {}  macro rec {}  macro f1 {}",
                        pct(m.accuracy),
                        pct(m.macro_precision),
                        pct(m.macro_recall),
                        pct(m.macro_f1)
                    );
                }
                None => {
                    let _ = writeln!(s, "  diagnosis  (no detected faults)");
                }
            }
            let o = &set.ood;
            let _ = writeln!(s, "  ood        acc {}  prec {}  rec {}  fpr {}", pct(o.accuracy), pct(o.precision), pct(o.recall), pct(o.fpr));
            for r in &set.detection_times {
                let tt = r.traj_type.map_or("all".to_string(), |t| t.to_string());
                let stats = r.seconds.as_ref().map_or("-".to_string(), |m| {
                    format!("min {:.3}  max {:.3}  mean {:.3}  std {:.3}", m.min, m.max, m.mean, m.std)
                });
                let _ = writeln!(s, "  time  class {:>3} {:<3} {}/{}  {}", r.class, tt, r.detected, r.total, stats);
            }
            for (task, rows) in [("detector", &set.detector_calibration), ("diagnoser", &set.diagnoser_calibration)] {
                for r in rows {
                    let _ = writeln!(
                        s,
                        "  calib {task:<9} bins {:>2}  ece {:.4} -> {:.4}  mce {:.4} -> {:.4}  brier {:.4} -> {:.4}",
                        r.bins,
                        r.uncalibrated.ece,
                        r.calibrated.ece,
                        r.uncalibrated.mce,
                        r.calibrated.mce,
                        r.uncalibrated.brier,
                        r.calibrated.brier
                    );
                }
            }
        }
        let o = &self.ood;
        let _ = writeln!(s, "\nood threshold {:.6} (alpha {}, {} calibration windows)", o.threshold, o.alpha, o.calibration_windows);
        for (k, v) in &o.flagged_fraction {
            let _ = writeln!(s, "  flagged windows {k:<6} {}", pct(*v));
        }
        let warned = o.outcomes.iter().filter(|t| t.ood_warned).count();
        let _ = writeln!(s, "  ood trajectories warned {warned}/{}", o.outcomes.len());
        s
    }

    /// Writes the trajectory-level detection times of every set.
    pub fn detection_times_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut rows = Vec::new();
        for set in &self.sets {
            for r in &set.detection_times {
                let m = r.seconds.as_ref();
                let f = |g: fn(&Summary) -> f64| m.map_or(String::new(), |m| format!("{}", g(m)));
                rows.push(vec![
                    set.name.clone(),
                    r.class.to_string(),
                    r.traj_type.map_or("all".into(), |t| t.to_string()),
                    r.detected.to_string(),
                    r.total.to_string(),
                    f(|m| m.min),
                    f(|m| m.max),
                    f(|m| m.mean),
                    f(|m| m.std),
                ]);
            }
        }
        eval::write_csv(w, &["set", "class", "traj_type", "detected", "total", "min_s", "max_s", "mean_s", "std_s"], &rows)
    }

    pub fn confidence_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .sets
            .iter()
            .flat_map(|set| {
                set.confidence.iter().map(|r| {
                    vec![
                        set.name.clone(),
                        r.correct.to_string(),
                        r.class.to_string(),
                        r.traj_type.to_string(),
                        r.count.to_string(),
                        format!("{}", r.mean_confidence),
                    ]
                })
            })
            .collect();
        eval::write_csv(w, &["set", "correct", "class", "traj_type", "count", "mean_confidence"], &rows)
    }

    pub fn calibration_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut rows = Vec::new();
        for set in &self.sets {
            for (task, list) in [("detector", &set.detector_calibration), ("diagnoser", &set.diagnoser_calibration)] {
                for r in list {
                    for (kind, m) in [("uncalibrated", &r.uncalibrated), ("calibrated", &r.calibrated)] {
                        rows.push(vec![
                            set.name.clone(),
                            task.to_string(),
                            r.bins.to_string(),
                            kind.to_string(),
                            format!("{}", m.ece),
                            format!("{}", m.mce),
                            format!("{}", m.brier),
                        ]);
                    }
                }
            }
        }
        eval::write_csv(w, &["set", "task", "bins", "model", "ece", "mce", "brier"], &rows)
    }

    pub fn confusion_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut rows = Vec::new();
        for set in &self.sets {
            let c = &set.detection.confusion;
            for (k, v) in [("tp", c.tp), ("fp", c.fp), ("tn", c.tn), ("fn", c.fn_)] {
                rows.push(vec![set.name.clone(), "detection".into(), k.into(), String::new(), v.to_string()]);
            }
            if let Some(m) = &set.diagnosis {
                for (i, truth) in m.classes.iter().enumerate() {
                    for (j, pred) in m.classes.iter().enumerate() {
                        rows.push(vec![
                            set.name.clone(),
                            "diagnosis".into(),
                            truth.to_string(),
                            pred.to_string(),
                            m.matrix[i][j].to_string(),
                        ]);
                    }
                }
            }
        }
        eval::write_csv(w, &["set", "task", "truth", "predicted", "count"], &rows)
    }
}
