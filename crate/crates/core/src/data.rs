//! Splitting, scaling, windowing and class-imbalance resampling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::sim::{Label, TrajType, Trajectory, N_CHANNELS};

/// Per-channel min-max scaler fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    /// Channel-wise extrema over every sample of every training trajectory.
    pub fn fit(train: &[Trajectory]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InsufficientData("cannot fit a scaler on an empty training split".into()));
        }
        let mut min = vec![f64::INFINITY; N_CHANNELS];
        let mut max = vec![f64::NEG_INFINITY; N_CHANNELS];
        for traj in train {
            traj.validate()?;
            for (c, ch) in traj.channels.iter().enumerate() {
                for &x in ch {
                    let x = x as f64;
                    min[c] = min[c].min(x);
                    max[c] = max[c].max(x);
                }
            }
        }
        Ok(Scaler { min, max })
    }

    pub fn n_channels(&self) -> usize {
        self.min.len()
    }

    /// Maps into `[0, 1]`, clamping values outside the training range.
    /// Constant channels map to 0.
    pub fn transform(&self, channel: usize, x: f64) -> f64 {
        self.scale(channel, x).clamp(0.0, 1.0)
    }

    /// Min-max scaling without clamping.
    pub fn scale(&self, channel: usize, x: f64) -> f64 {
        let span = self.max[channel] - self.min[channel];
        if span > 0.0 {
            (x - self.min[channel]) / span
        } else {
            0.0
        }
    }

    pub fn inverse(&self, channel: usize, y: f64) -> f64 {
        self.min[channel] + y * (self.max[channel] - self.min[channel])
    }

    /// Stable fingerprint recorded by downstream artifacts.
    pub fn hash(&self) -> String {
        let bytes: Vec<u8> = self.min.iter().chain(&self.max).flat_map(|v| v.to_le_bytes()).collect();
        crate::container::sha256_hex(&bytes)
    }
}

/// A scaled slice of one trajectory: `values[c * len + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub values: Vec<f32>,
    pub label: Label,
    pub traj_id: u32,
    pub traj_type: TrajType,
    pub start_index: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.values.len() / N_CHANNELS
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Time, in seconds, at which the window is complete.
    pub fn end_time(&self, sample_rate: f64) -> f64 {
        (self.start_index + self.len()) as f64 / sample_rate
    }
}

/// Number of windows of length `len` with stride `step` over `n` samples.
pub fn window_count(n: usize, len: usize, step: usize) -> usize {
    if len == 0 || step == 0 || n < len {
        0
    } else {
        (n - len) / step + 1
    }
}

fn check_window_args(traj: &Trajectory, len: usize, step: usize) -> Result<()> {
    if len == 0 || step == 0 {
        return Err(Error::invalid("window length and step must be at least 1"));
    }
    if traj.len() < len {
        return Err(Error::InsufficientData(format!(
            "trajectory {} has {} samples, shorter than the window length {len}",
            traj.id,
            traj.len()
        )));
    }
    Ok(())
}

/// Scales the window of `traj` starting at `start`.
pub fn window_at(traj: &Trajectory, scaler: &Scaler, len: usize, start: usize) -> Window {
    let mut values = Vec::with_capacity(N_CHANNELS * len);
    for (c, ch) in traj.channels.iter().enumerate() {
        values.extend(ch[start..start + len].iter().map(|&x| scaler.transform(c, x as f64) as f32));
    }
    Window { values, label: traj.label, traj_id: traj.id, traj_type: traj.traj_type, start_index: start }
}

/// Like [`window_at`] but without clamping; see
/// [`TcaeModel::features_unclamped`](crate::tcae::TcaeModel::features_unclamped).
pub fn unclamped_window_at(traj: &Trajectory, scaler: &Scaler, len: usize, start: usize) -> Vec<f32> {
    let mut values = Vec::with_capacity(N_CHANNELS * len);
    for (c, ch) in traj.channels.iter().enumerate() {
        values.extend(ch[start..start + len].iter().map(|&x| scaler.scale(c, x as f64) as f32));
    }
    values
}

/// All overlapping windows of a trajectory, in time order.
pub fn windows(traj: &Trajectory, scaler: &Scaler, len: usize, step: usize) -> Result<Vec<Window>> {
    check_window_args(traj, len, step)?;
    if scaler.n_channels() != traj.channels.len() {
        return Err(Error::shape(format!("{} channels", scaler.n_channels()), traj.channels.len()));
    }
    Ok((0..window_count(traj.len(), len, step))
        .map(|k| window_at(traj, scaler, len, k * step))
        .collect())
}

/// Start indices of the windows of a trajectory.
pub fn window_starts(n: usize, len: usize, step: usize) -> impl Iterator<Item = usize> {
    (0..window_count(n, len, step)).map(move |k| k * step)
}

/// Split ratios at trajectory level. Calibration uses `val` ∪ `val2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub val2: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train: 0.6, val: 0.1, val2: 0.1, test: 0.2 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.val2, self.test];
        if parts.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || self.train <= 0.0 {
            return Err(Error::Config("split ratios must be non-negative with a positive train share".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split ratios must sum to 1".into()));
        }
        Ok(())
    }
}

/// Trajectory ids per split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub val2: Vec<u32>,
    pub test: Vec<u32>,
}

impl Splits {
    pub fn calibration(&self) -> Vec<u32> {
        let mut ids = self.val.clone();
        ids.extend(&self.val2);
        ids
    }
}

/// Stratified split by (label, trajectory type); every trajectory lands in
/// exactly one split.
pub fn split_trajectories(trajs: &[Trajectory], spec: &SplitSpec, seed: u64) -> Result<Splits> {
    spec.validate()?;
    let mut strata: BTreeMap<(Label, TrajType), Vec<u32>> = BTreeMap::new();
    for t in trajs {
        strata.entry((t.label, t.traj_type)).or_default().push(t.id);
    }
    let mut splits = Splits::default();
    for (k, ((label, tt), mut ids)) in strata.into_iter().enumerate() {
        ids.sort_unstable();
        ids.shuffle(&mut stream_rng(seed, ((label.0 as u64) << 8) | tt.index() as u64 | (k as u64) << 32));
        let n = ids.len() as f64;
        let cut = |r: f64| (n * r).round() as usize;
        let c1 = cut(spec.train).max(1).min(ids.len());
        let c2 = cut(spec.train + spec.val).clamp(c1, ids.len());
        let c3 = cut(spec.train + spec.val + spec.val2).clamp(c2, ids.len());
        splits.train.extend(&ids[..c1]);
        splits.val.extend(&ids[c1..c2]);
        splits.val2.extend(&ids[c2..c3]);
        splits.test.extend(&ids[c3..]);
    }
    for v in [&mut splits.train, &mut splits.val, &mut splits.val2, &mut splits.test] {
        v.sort_unstable();
    }
    Ok(splits)
}

/// Class-imbalance resampling strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resampler {
    /// Random oversampling of every class up to the majority count.
    RandomOver,
    /// Random undersampling of every class down to the minority count.
    RandomUnder,
    /// Synthetic minority oversampling by interpolation towards one of the
    /// `k_neighbors` nearest same-class samples.
    Smote { k_neighbors: usize },
}

impl Resampler {
    pub const SMOTE_DEFAULT: Resampler = Resampler::Smote { k_neighbors: 5 };
}

fn class_indices(labels: &[u32]) -> BTreeMap<u32, Vec<usize>> {
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    by_class
}

/// Rebalances `(rows, labels)` so that every class has the same count.
///
/// ROS and RUS only copy or drop rows. SMOTE keeps every original row and
/// appends `x + λ (x_nn − x)` with `λ ~ U(0, 1)`, where `x_nn` is one of the
/// `k` nearest neighbours of `x` within its class (Euclidean distance).
pub fn resample(rows: &[Vec<f64>], labels: &[u32], method: Resampler, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<u32>)> {
    if rows.len() != labels.len() {
        return Err(Error::shape(rows.len(), labels.len()));
    }
    let by_class = class_indices(labels);
    if by_class.len() < 2 {
        return Err(Error::InsufficientData("resampling needs at least two classes".into()));
    }
    let max_count = by_class.values().map(Vec::len).max().unwrap_or(0);
    let min_count = by_class.values().map(Vec::len).min().unwrap_or(0);
    let mut rng = stream_rng(seed, 0xBA1A);
    let mut out_rows = Vec::new();
    let mut out_labels = Vec::new();
    match method {
        Resampler::RandomOver => {
            for (&y, idx) in &by_class {
                for &i in idx {
                    out_rows.push(rows[i].clone());
                    out_labels.push(y);
                }
                for _ in idx.len()..max_count {
                    let i = idx[rng.random_range(0..idx.len())];
                    out_rows.push(rows[i].clone());
                    out_labels.push(y);
                }
            }
        }
        Resampler::RandomUnder => {
            for (&y, idx) in &by_class {
                let mut keep = idx.clone();
                keep.shuffle(&mut rng);
                keep.truncate(min_count);
                keep.sort_unstable();
                for i in keep {
                    out_rows.push(rows[i].clone());
                    out_labels.push(y);
                }
            }
        }
        Resampler::Smote { k_neighbors } => {
            if k_neighbors == 0 {
                return Err(Error::invalid("SMOTE needs k_neighbors >= 1"));
            }
            for (&y, idx) in &by_class {
                if idx.len() < max_count && idx.len() < k_neighbors + 1 {
                    return Err(Error::InsufficientData(format!(
                        "SMOTE needs at least {} samples of class {y}, found {}",
                        k_neighbors + 1,
                        idx.len()
                    )));
                }
            }
            for (&y, idx) in &by_class {
                for &i in idx {
                    out_rows.push(rows[i].clone());
                    out_labels.push(y);
                }
                if idx.len() == max_count {
                    continue;
                }
                let neighbours: Vec<Vec<usize>> = idx.iter().map(|&i| nearest(rows, idx, i, k_neighbors)).collect();
                for _ in idx.len()..max_count {
                    let a = rng.random_range(0..idx.len());
                    let nn = &neighbours[a];
                    let b = nn[rng.random_range(0..nn.len())];
                    let lambda: f64 = rng.random();
                    let x = &rows[idx[a]];
                    let synthetic = x.iter().zip(&rows[b]).map(|(p, q)| p + lambda * (q - p)).collect();
                    out_rows.push(synthetic);
                    out_labels.push(y);
                }
            }
        }
    }
    Ok((out_rows, out_labels))
}

fn nearest(rows: &[Vec<f64>], pool: &[usize], i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = pool
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| (rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, j)| j).collect()
}

/// "Balanced" class weights: `N / (n_classes * count_c)`.
pub fn class_weights(labels: &[u32]) -> Result<BTreeMap<u32, f64>> {
    if labels.is_empty() {
        return Err(Error::InsufficientData("class weights need at least one label".into()));
    }
    let by_class = class_indices(labels);
    let n = labels.len() as f64;
    let k = by_class.len() as f64;
    Ok(by_class.into_iter().map(|(y, idx)| (y, n / (k * idx.len() as f64))).collect())
}

/// Per-sample weights from [`class_weights`].
pub fn sample_weights(labels: &[u32]) -> Result<Vec<f64>> {
    let w = class_weights(labels)?;
    Ok(labels.iter().map(|y| w[y]).collect())
}
