//! Classification metrics, summaries and the class-imbalance benchmark.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calib::{self, CalibrationMetrics, Method};
use crate::data::{resample, sample_weights, Resampler};
use crate::error::{Error, Result};
use crate::gbt::{self, GbtConfig};

/// Area under the ROC curve by trapezoidal integration over tied-score
/// groups. Equals the probability that a random positive scores above a
/// random negative, counting ties as one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} labels", scores.len()), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InsufficientData("AUROC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // Twice the area, in units of (1 positive × 1 negative); exact integers.
    let (mut tp, mut fp, mut area2) = (0u128, 0u128, 0u128);
    let mut i = 0;
    while i < idx.len() {
        let (tp0, fp0) = (tp, fp);
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp0) * (tp + tp0);
    }
    Ok(area2 as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl Confusion {
    pub fn from_predictions(predicted: &[bool], truth: &[bool]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::shape(format!("{} labels", predicted.len()), truth.len()));
        }
        let mut c = Confusion::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Metrics derived from the counts; undefined ratios are reported as 0.
    pub fn metrics(&self) -> BinaryMetrics {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        BinaryMetrics {
            confusion: *self,
            fpr: ratio(self.fp, self.fp + self.tn),
            fnr: ratio(self.fn_, self.fn_ + self.tp),
            accuracy: ratio(self.tp + self.tn, self.total()),
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub confusion: Confusion,
    pub fpr: f64,
    pub fnr: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u32,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Multiclass confusion matrix (`matrix[true][predicted]`) with one-vs-rest
/// per-class metrics and their unweighted (macro) means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassMetrics {
    pub classes: Vec<u32>,
    pub matrix: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

pub fn multiclass_metrics(predicted: &[u32], truth: &[u32], classes: &[u32]) -> Result<MulticlassMetrics> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(format!("{} labels", predicted.len()), truth.len()));
    }
    let pos = |c: u32| {
        classes
            .iter()
            .position(|&k| k == c)
            .ok_or_else(|| Error::invalid(format!("label {c} is not among the evaluated classes")))
    };
    let k = classes.len();
    let mut matrix = vec![vec![0usize; k]; k];
    for (&p, &t) in predicted.iter().zip(truth) {
        matrix[pos(t)?][pos(p)?] += 1;
    }
    let total = predicted.len();
    let correct: usize = (0..k).map(|i| matrix[i][i]).sum();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|i| {
            let tp = matrix[i][i];
            let support: usize = matrix[i].iter().sum();
            let predicted_i: usize = (0..k).map(|r| matrix[r][i]).sum();
            let precision = ratio(tp, predicted_i);
            let recall = ratio(tp, support);
            ClassMetrics { class: classes[i], support, precision, recall, f1: f1(precision, recall) }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| if k == 0 { 0.0 } else { per_class.iter().map(f).sum::<f64>() / k as f64 };
    Ok(MulticlassMetrics {
        classes: classes.to_vec(),
        accuracy: ratio(correct, total),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        matrix,
        per_class,
    })
}

/// min/max/mean/sample standard deviation (0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(Summary {
        count: values.len(),
        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        mean,
        std,
    })
}

/// Writes rows of displayable cells as CSV.
pub fn write_csv<W: Write>(mut w: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        writeln!(w, "{}", r.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImbalanceMethod {
    Base,
    Weighting,
    RandomOver,
    RandomUnder,
    Smote,
    ThresholdMoving,
}

impl ImbalanceMethod {
    pub const ALL: [ImbalanceMethod; 6] = [
        ImbalanceMethod::Base,
        ImbalanceMethod::Weighting,
        ImbalanceMethod::RandomOver,
        ImbalanceMethod::RandomUnder,
        ImbalanceMethod::Smote,
        ImbalanceMethod::ThresholdMoving,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ImbalanceMethod::Base => "base",
            ImbalanceMethod::Weighting => "weighting",
            ImbalanceMethod::RandomOver => "ros",
            ImbalanceMethod::RandomUnder => "rus",
            ImbalanceMethod::Smote => "smote",
            ImbalanceMethod::ThresholdMoving => "threshold-moving",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceRow {
    pub method: ImbalanceMethod,
    pub threshold: f64,
    pub auroc: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    /// Test-set calibration metrics of the raw scores and after Platt and
    /// isotonic calibration fitted on the calibration set.
    pub calibration: BTreeMap<String, CalibrationMetrics>,
}

/// Labeled feature matrix with binary labels (1 = faulty).
#[derive(Debug, Clone, Copy)]
pub struct LabeledSet<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [u32],
}

impl LabeledSet<'_> {
    fn truth(&self) -> Vec<bool> {
        self.y.iter().map(|&v| v == 1).collect()
    }
}

/// Fits one binary classifier per imbalance-handling method and scores it
/// on the test set. Threshold moving reuses the base model with the
/// decision threshold `moved_threshold`.
pub fn benchmark_imbalance(
    train: LabeledSet,
    calibration: LabeledSet,
    test: LabeledSet,
    config: &GbtConfig,
    moved_threshold: f64,
    n_bins: usize,
    seed: u64,
) -> Result<Vec<ImbalanceRow>> {
    let truth = test.truth();
    let cal_truth = calibration.truth();
    let mut base: Option<gbt::GbtEnsemble> = None;
    let mut rows = Vec::new();
    for method in ImbalanceMethod::ALL {
        let model = match method {
            ImbalanceMethod::Base | ImbalanceMethod::ThresholdMoving => match &base {
                Some(m) => m.clone(),
                None => {
                    let m = gbt::fit(train.x, train.y, None, config)?;
                    base = Some(m.clone());
                    m
                }
            },
            ImbalanceMethod::Weighting => gbt::fit(train.x, train.y, Some(&sample_weights(train.y)?), config)?,
            ImbalanceMethod::RandomOver | ImbalanceMethod::RandomUnder | ImbalanceMethod::Smote => {
                let r = match method {
                    ImbalanceMethod::RandomOver => Resampler::RandomOver,
                    ImbalanceMethod::RandomUnder => Resampler::RandomUnder,
                    _ => Resampler::SMOTE_DEFAULT,
                };
                let (x, y) = resample(train.x, train.y, r, seed)?;
                gbt::fit(&x, &y, None, config)?
            }
        };
        let threshold = if method == ImbalanceMethod::ThresholdMoving { moved_threshold } else { 0.5 };
        let scores = model.positive_scores(test.x)?;
        let cal_scores = model.positive_scores(calibration.x)?;
        let predicted: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
        let m = Confusion::from_predictions(&predicted, &truth)?.metrics();
        let mut calibration_metrics = BTreeMap::new();
        for cm in [Method::Identity, Method::Platt, Method::Isotonic] {
            let c = calib::fit(cm, &cal_scores, &cal_truth)?;
            let name = match cm {
                Method::Identity => "base",
                Method::Platt => "platt",
                Method::Isotonic => "isotonic",
            };
            calibration_metrics.insert(name.to_string(), calib::metrics(&c.apply_all(&scores), &truth, n_bins)?);
        }
        rows.push(ImbalanceRow {
            method,
            threshold,
            auroc: auroc(&scores, &truth)?,
            precision: m.precision,
            recall: m.recall,
            accuracy: m.accuracy,
            calibration: calibration_metrics,
        });
    }
    Ok(rows)
}

pub fn imbalance_csv<W: Write>(w: W, rows: &[ImbalanceRow]) -> Result<()> {
    let header = [
        "method", "threshold", "auroc", "precision", "recall", "accuracy", "ece_base", "mce_base", "mse_base",
        "ece_platt", "mce_platt", "mse_platt", "ece_isotonic", "mce_isotonic", "mse_isotonic",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![
                r.method.name().to_string(),
                r.threshold.to_string(),
                r.auroc.to_string(),
                r.precision.to_string(),
                r.recall.to_string(),
                r.accuracy.to_string(),
            ];
            for k in ["base", "platt", "isotonic"] {
                let c = &r.calibration[k];
                v.extend([c.ece.to_string(), c.mce.to_string(), c.brier.to_string()]);
            }
            v
        })
        .collect();
    write_csv(w, &header, &body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn pair_count(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auroc_extremes() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
        let mut rng = stream_rng(1, 0);
        let s: Vec<f64> = (0..20000).map(|_| rng.random()).collect();
        let y: Vec<bool> = (0..20000).map(|_| rng.random()).collect();
        assert!((auroc(&s, &y).unwrap() - 0.5).abs() < 0.02);
    }

    #[test]
    fn auroc_matches_pair_counting_on_all_six_sample_instances() {
        let levels = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        // Every label pattern × a spread of score assignments (with ties).
        for labels_code in 1..63u32 {
            let labels: Vec<bool> = (0..6).map(|i| labels_code & (1 << i) != 0).collect();
            for score_code in (0..6u32.pow(6)).step_by(7) {
                let scores: Vec<f64> = (0..6).map(|i| levels[(score_code / 6u32.pow(i) % 6) as usize]).collect();
                let a = auroc(&scores, &labels).unwrap();
                assert!((a - pair_count(&scores, &labels)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn confusion_metrics() {
        let pred = [true, true, false, false, true];
        let truth = [true, false, false, true, true];
        let m = Confusion::from_predictions(&pred, &truth).unwrap().metrics();
        assert_eq!(m.confusion, Confusion { tp: 2, fp: 1, tn: 1, fn_: 1 });
        assert!((m.fpr - 0.5).abs() < 1e-15);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() < 1e-12);
        let none = Confusion::from_predictions(&[false; 3], &[false; 3]).unwrap().metrics();
        assert_eq!((none.fpr, none.precision, none.recall), (0.0, 0.0, 0.0));
    }

    #[test]
    fn multiclass_macro_metrics() {
        let m = multiclass_metrics(&[1, 2, 2, 4], &[1, 2, 4, 4], &[1, 2, 4]).unwrap();
        assert_eq!(m.matrix, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 1, 1]]);
        assert_eq!(m.accuracy, 0.75);
        assert!((m.macro_recall - (1.0 + 1.0 + 0.5) / 3.0).abs() < 1e-15);
        assert!(multiclass_metrics(&[9], &[1], &[1, 2]).is_err());
    }

    #[test]
    fn summaries() {
        assert_eq!(summarize(&[]), None);
        let s = summarize(&[2.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 0.0));
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!((s.min, s.max), (1.0, 4.0));
    }

    #[test]
    fn imbalance_benchmark_structure() {
        let mut rng = stream_rng(3, 0);
        let mut make = |n: usize| {
            let y: Vec<u32> = (0..n).map(|i| (i % 4 != 0) as u32).collect();
            let x: Vec<Vec<f64>> = y
                .iter()
                .map(|&c| vec![c as f64 * 0.8 + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect();
            (x, y)
        };
        let (tx, ty) = make(300);
        let (cx, cy) = make(200);
        let (sx, sy) = make(200);
        let cfg = GbtConfig { max_iter: 10, min_samples_leaf: 5.0, ..GbtConfig::detector() };
        let rows = benchmark_imbalance(
            LabeledSet { x: &tx, y: &ty },
            LabeledSet { x: &cx, y: &cy },
            LabeledSet { x: &sx, y: &sy },
            &cfg,
            0.75,
            10,
            0,
        )
        .unwrap();
        assert_eq!(rows.len(), 6);
        let base = &rows[0];
        let moved = &rows[5];
        assert_eq!(base.auroc, moved.auroc);
        assert_eq!(base.calibration, moved.calibration);
        assert_eq!(moved.threshold, 0.75);
        let mut csv = Vec::new();
        imbalance_csv(&mut csv, &rows).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 7);
    }

    proptest! {
        #[test]
        fn auroc_invariant_under_monotone_transform(data in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..80)) {
            let (s, y): (Vec<f64>, Vec<bool>) = data.into_iter().unzip();
            prop_assume!(y.contains(&true) && y.contains(&false));
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(auroc(&s, &y).unwrap(), auroc(&t, &y).unwrap());
            prop_assert!((auroc(&s, &y).unwrap() - pair_count(&s, &y)).abs() < 1e-12);
        }

        #[test]
        fn f1_consistent_with_confusion(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
            let m = Confusion { tp, fp, tn, fn_ }.metrics();
            let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            prop_assert!((m.f1 - f).abs() < 1e-12);
        }
    }
}
