//! Post-hoc probability calibration and calibration metrics.
//!
//! Binary scores are mapped through a Platt sigmoid or an isotonic step
//! function fitted on held-out data. Multiclass scores are calibrated
//! one-vs-all and renormalized. Reliability data uses quantile bins.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Identity,
    Platt,
    Isotonic,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "none" => Ok(Method::Identity),
            "platt" | "sigmoid" => Ok(Method::Platt),
            "isotonic" => Ok(Method::Isotonic),
            other => Err(Error::Config(format!("unknown calibration method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Calibrator {
    Identity,
    /// `p = σ(a·s + b)`.
    Platt { a: f64, b: f64 },
    /// Piecewise-linear interpolation through `(x, y)`, constant outside.
    Isotonic { x: Vec<f64>, y: Vec<f64> },
}

impl Calibrator {
    pub fn apply(&self, s: f64) -> f64 {
        match self {
            Calibrator::Identity => s,
            Calibrator::Platt { a, b } => sigmoid(a * s + b),
            Calibrator::Isotonic { x, y } => interpolate(x, y, s),
        }
    }

    pub fn apply_all(&self, s: &[f64]) -> Vec<f64> {
        s.iter().map(|&v| self.apply(v)).collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn interpolate(x: &[f64], y: &[f64], s: f64) -> f64 {
    if s <= x[0] {
        return y[0];
    }
    let last = x.len() - 1;
    if s >= x[last] {
        return y[last];
    }
    let i = x.partition_point(|&v| v <= s);
    let (x0, x1, y0, y1) = (x[i - 1], x[i], y[i - 1], y[i]);
    y0 + (y1 - y0) * (s - x0) / (x1 - x0)
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} labels", scores.len()), labels.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite calibration score"));
    }
    if !labels.contains(&true) || !labels.contains(&false) {
        return Err(Error::InsufficientData("calibration data must contain both classes".into()));
    }
    Ok(())
}

/// Platt scaling by Newton's method on the log-loss, using Platt's
/// smoothed targets `(N₊+1)/(N₊+2)` and `1/(N₋+2)`.
pub fn fit_platt(scores: &[f64], labels: &[bool]) -> Result<Calibrator> {
    check_binary(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let t: Vec<f64> = labels.iter().map(|&l| if l { hi } else { lo }).collect();
    let loss = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&t)
            .map(|(&s, &ti)| {
                // log(1 + e^z) − t·z, computed stably.
                let z = a * s + b;
                let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                softplus - ti * z
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, ((n_pos + 1.0) / (n_neg + 1.0)).ln());
    let mut f = loss(a, b);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&s, &ti) in scores.iter().zip(&t) {
            let p = sigmoid(a * s + b);
            let d = p - ti;
            let w = p * (1.0 - p);
            ga += d * s;
            gb += d;
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        if ga.abs() < 1e-10 && gb.abs() < 1e-10 {
            break;
        }
        // Levenberg-style damping keeps the Hessian positive definite.
        let ridge = 1e-12;
        let (haa, hbb) = (haa + ridge, hbb + ridge);
        let det = haa * hbb - hab * hab;
        let da = -(hbb * ga - hab * gb) / det;
        let db = -(haa * gb - hab * ga) / det;
        let mut step = 1.0;
        loop {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = loss(na, nb);
            if nf <= f + 1e-4 * step * (ga * da + gb * db) {
                a = na;
                b = nb;
                f = nf;
                break;
            }
            step /= 2.0;
            if step < 1e-10 {
                return Ok(Calibrator::Platt { a, b });
            }
        }
    }
    Ok(Calibrator::Platt { a, b })
}

/// Weighted least-squares monotone (non-decreasing) fit of `y` ordered as
/// given, by pool-adjacent-violators. Returns one fitted value per input.
pub fn pava(y: &[f64], w: &[f64]) -> Vec<f64> {
    struct Block {
        sum_wy: f64,
        sum_w: f64,
        len: usize,
    }
    let mut blocks: Vec<Block> = Vec::with_capacity(y.len());
    for (&yi, &wi) in y.iter().zip(w) {
        blocks.push(Block { sum_wy: wi * yi, sum_w: wi, len: 1 });
        while blocks.len() > 1 {
            let b = &blocks[blocks.len() - 1];
            let a = &blocks[blocks.len() - 2];
            // a.mean > b.mean, without division.
            if a.sum_wy * b.sum_w > b.sum_wy * a.sum_w {
                let b = blocks.pop().expect("two blocks");
                let a = blocks.last_mut().expect("two blocks");
                a.sum_wy += b.sum_wy;
                a.sum_w += b.sum_w;
                a.len += b.len;
            } else {
                break;
            }
        }
    }
    blocks
        .iter()
        .flat_map(|b| std::iter::repeat_n(if b.sum_w > 0.0 { b.sum_wy / b.sum_w } else { 0.0 }, b.len))
        .collect()
}

/// Isotonic calibration. Equal scores are pooled before PAVA.
pub fn fit_isotonic(scores: &[f64], labels: &[bool]) -> Result<Calibrator> {
    check_binary(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut ws: Vec<f64> = Vec::new();
    for &i in &idx {
        let yi = labels[i] as u8 as f64;
        if xs.last() == Some(&scores[i]) {
            let k = xs.len() - 1;
            ys[k] += yi;
            ws[k] += 1.0;
        } else {
            xs.push(scores[i]);
            ys.push(yi);
            ws.push(1.0);
        }
    }
    let means: Vec<f64> = ys.iter().zip(&ws).map(|(s, w)| s / w).collect();
    let fitted = pava(&means, &ws);
    // Keep only the end points of each constant run.
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..xs.len() {
        let same_prev = i > 0 && fitted[i - 1] == fitted[i];
        let same_next = i + 1 < xs.len() && fitted[i + 1] == fitted[i];
        if !(same_prev && same_next) {
            x.push(xs[i]);
            y.push(fitted[i]);
        }
    }
    Ok(Calibrator::Isotonic { x, y })
}

pub fn fit(method: Method, scores: &[f64], labels: &[bool]) -> Result<Calibrator> {
    match method {
        Method::Identity => {
            check_binary(scores, labels)?;
            Ok(Calibrator::Identity)
        }
        Method::Platt => fit_platt(scores, labels),
        Method::Isotonic => fit_isotonic(scores, labels),
    }
}

/// One-vs-all calibration of multiclass scores followed by renormalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassCalibrator {
    pub classes: Vec<u32>,
    pub per_class: Vec<Calibrator>,
}

impl MulticlassCalibrator {
    pub fn identity(classes: &[u32]) -> Self {
        MulticlassCalibrator { classes: classes.to_vec(), per_class: vec![Calibrator::Identity; classes.len()] }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        let mut p: Vec<f64> = row.iter().zip(&self.per_class).map(|(&s, c)| c.apply(s)).collect();
        let sum: f64 = p.iter().sum();
        if sum > 0.0 {
            p.iter_mut().for_each(|v| *v /= sum);
        } else {
            let u = 1.0 / p.len() as f64;
            p.iter_mut().for_each(|v| *v = u);
        }
        p
    }

    pub fn apply_all(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.apply(r)).collect()
    }
}

/// `scores[i][k]` is the score of `classes[k]` for sample `i`.
pub fn calibrate_multiclass(
    scores: &[Vec<f64>],
    labels: &[u32],
    classes: &[u32],
    method: Method,
) -> Result<MulticlassCalibrator> {
    if classes.len() < 2 {
        return Err(Error::invalid("multiclass calibration needs at least 2 classes"));
    }
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} labels", scores.len()), labels.len()));
    }
    if let Some(r) = scores.iter().find(|r| r.len() != classes.len()) {
        return Err(Error::shape(format!("{} scores per row", classes.len()), r.len()));
    }
    let per_class = classes
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let col: Vec<f64> = scores.iter().map(|r| r[k]).collect();
            let y: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            if !y.contains(&true) {
                return Err(Error::InsufficientData(format!("class {c} absent from calibration data")));
            }
            fit(method, &col, &y)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MulticlassCalibrator { classes: classes.to_vec(), per_class })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    /// Mean predicted probability `e_i`.
    pub mean_predicted: f64,
    /// Fraction of positives `o_i`.
    pub fraction_positive: f64,
    /// Share of samples in the bin `π_i`.
    pub mass: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityData {
    pub n_bins: usize,
    /// Non-empty bins in increasing probability order.
    pub bins: Vec<ReliabilityBin>,
}

impl ReliabilityData {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin,mean_predicted,fraction_positive,mass,count")?;
        for (i, b) in self.bins.iter().enumerate() {
            writeln!(w, "{i},{},{},{},{}", b.mean_predicted, b.fraction_positive, b.mass, b.count)?;
        }
        Ok(())
    }
}

fn linear_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Reliability data with quantile bin edges; sample `p` falls into the bin
/// given by the number of interior edges strictly below it.
pub fn reliability(probs: &[f64], labels: &[bool], n_bins: usize) -> Result<ReliabilityData> {
    if probs.is_empty() {
        return Err(Error::InsufficientData("reliability data needs samples".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::shape(format!("{} labels", probs.len()), labels.len()));
    }
    if n_bins == 0 {
        return Err(Error::invalid("n_bins must be positive"));
    }
    let mut sorted = probs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let interior: Vec<f64> = (1..n_bins).map(|i| linear_quantile(&sorted, i as f64 / n_bins as f64)).collect();
    let mut sum_p = vec![0.0; n_bins];
    let mut sum_y = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&p, &y) in probs.iter().zip(labels) {
        let b = interior.partition_point(|&e| e < p);
        sum_p[b] += p;
        sum_y[b] += y as u8 as f64;
        count[b] += 1;
    }
    let n = probs.len() as f64;
    let bins = (0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| ReliabilityBin {
            mean_predicted: sum_p[b] / count[b] as f64,
            fraction_positive: sum_y[b] / count[b] as f64,
            mass: count[b] as f64 / n,
            count: count[b],
        })
        .collect();
    Ok(ReliabilityData { n_bins, bins })
}

/// Expected calibration error `Σ π_i |o_i − e_i|`.
pub fn ece(r: &ReliabilityData) -> Result<f64> {
    if r.bins.is_empty() {
        return Err(Error::InsufficientData("no reliability bins".into()));
    }
    Ok(r.bins.iter().map(|b| b.mass * (b.fraction_positive - b.mean_predicted).abs()).sum())
}

/// Maximum calibration error `max_i |o_i − e_i|`.
pub fn mce(r: &ReliabilityData) -> Result<f64> {
    if r.bins.is_empty() {
        return Err(Error::InsufficientData("no reliability bins".into()));
    }
    Ok(r.bins.iter().map(|b| (b.fraction_positive - b.mean_predicted).abs()).fold(0.0, f64::max))
}

/// Brier score `(1/N) Σ (y_i − p_i)²`.
pub fn brier(probs: &[f64], labels: &[bool]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::InsufficientData("Brier score needs samples".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::shape(format!("{} labels", probs.len()), labels.len()));
    }
    Ok(probs.iter().zip(labels).map(|(&p, &y)| (y as u8 as f64 - p).powi(2)).sum::<f64>() / probs.len() as f64)
}

/// Top-label view of multiclass probabilities: the confidence of the
/// predicted class and whether that prediction is correct.
pub fn top_label(probs: &[Vec<f64>], labels: &[u32], classes: &[u32]) -> (Vec<f64>, Vec<bool>) {
    probs
        .iter()
        .zip(labels)
        .map(|(row, &l)| {
            let k = crate::gbt::argmax(row);
            (row[k], classes[k] == l)
        })
        .unzip()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMetrics {
    pub ece: f64,
    pub mce: f64,
    pub brier: f64,
}

pub fn metrics(probs: &[f64], labels: &[bool], n_bins: usize) -> Result<CalibrationMetrics> {
    let r = reliability(probs, labels, n_bins)?;
    Ok(CalibrationMetrics { ece: ece(&r)?, mce: mce(&r)?, brier: brier(probs, labels)? })
}

/// Top-label calibration metrics of multiclass probabilities.
pub fn multiclass_metrics(probs: &[Vec<f64>], labels: &[u32], classes: &[u32], n_bins: usize) -> Result<CalibrationMetrics> {
    let (conf, correct) = top_label(probs, labels, classes);
    metrics(&conf, &correct, n_bins)
}
