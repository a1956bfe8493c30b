//! Architecture sweep and class-imbalance benchmark.

use std::fs;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{self, Scaler};
use crate::error::{Error, Result};
use crate::eval::{self, ImbalanceRow, LabeledSet};
use crate::gbt::{self, GbtConfig};
use crate::rng::{derive_seed, stream_rng};
use crate::sim::{Label, Trajectory};
use crate::tcae::{self, Features, TcaeConfig, TcaeModel};

use super::artifacts::{CorpusSet, FeatureSetName};
use super::stages::{Pipeline, STREAM_TCAE_INIT, STREAM_TCAE_SAMPLE, STREAM_TCAE_TRAIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchRow {
    pub kernel_size: usize,
    pub latent_channels: usize,
    pub blocks: usize,
    pub receptive_field: usize,
    pub params: usize,
    /// Weights stored as `f32`.
    pub memory_bytes: usize,
    /// Mean over consecutive windows of one trajectory.
    pub inference_ms: f64,
    pub auroc_e: f64,
    pub auroc_z: f64,
    pub auroc_r: f64,
    pub accuracy_z: f64,
    pub accuracy_r: f64,
}

const TIMED_WINDOWS: usize = 100;

struct Sample {
    features: Vec<Features>,
    labels: Vec<Label>,
}

impl Sample {
    fn rows(&self, pick: impl Fn(&Features) -> Vec<f64>, faults_only: bool) -> (Vec<Vec<f64>>, Vec<u32>) {
        self.features
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| !faults_only || l.is_fault())
            .map(|(f, l)| (pick(f), if faults_only { l.0 as u32 } else { u32::from(l.is_fault()) }))
            .unzip()
    }
}

/// Window starts of every trajectory, uniformly subsampled to `cap`.
fn sampled_starts(trajs: &[&Trajectory], len: usize, step: usize, cap: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut all: Vec<(usize, usize)> = trajs
        .iter()
        .enumerate()
        .flat_map(|(k, t)| data::window_starts(t.len(), len, step).map(move |s| (k, s)))
        .collect();
    if all.len() > cap {
        all.shuffle(&mut stream_rng(seed, 0));
        all.truncate(cap);
        all.sort_unstable();
    }
    all
}

fn sample(model: &TcaeModel, scaler: &Scaler, trajs: &[&Trajectory], starts: &[(usize, usize)]) -> Result<Sample> {
    let len = model.config.window_len;
    let windows: Vec<Vec<f32>> = starts.iter().map(|&(k, s)| data::unclamped_window_at(trajs[k], scaler, len, s)).collect();
    let refs: Vec<&[f32]> = windows.iter().map(Vec::as_slice).collect();
    Ok(Sample {
        features: model.features_batch_unclamped(&refs)?,
        labels: starts.iter().map(|&(k, _)| trajs[k].label).collect(),
    })
}

fn binary_auroc(train: &Sample, test: &Sample, pick: impl Fn(&Features) -> Vec<f64> + Copy, cfg: &GbtConfig) -> Result<f64> {
    let (x, y) = train.rows(pick, false);
    let (tx, ty) = test.rows(pick, false);
    let m = gbt::fit(&x, &y, None, cfg)?;
    let truth: Vec<bool> = ty.iter().map(|&v| v == 1).collect();
    eval::auroc(&m.positive_scores(&tx)?, &truth)
}

fn multiclass_accuracy(train: &Sample, test: &Sample, pick: impl Fn(&Features) -> Vec<f64> + Copy, cfg: &GbtConfig) -> Result<f64> {
    let (x, y) = train.rows(pick, true);
    let (tx, ty) = test.rows(pick, true);
    let m = gbt::fit(&x, &y, None, cfg)?;
    let pred = m.predict_classes(&tx)?;
    Ok(pred.iter().zip(&ty).filter(|(a, b)| a == b).count() as f64 / ty.len().max(1) as f64)
}

impl Pipeline {
    /// Trains one autoencoder per (kernel size, latent channels) pair and
    /// scores its features. Needs the corpus, splits and scaler.
    pub fn bench_arch(&self) -> Result<Vec<ArchRow>> {
        let c = &self.config;
        let dev = self.corpus(CorpusSet::Development)?;
        let splits = self.splits()?;
        let scaler = self.scaler()?;
        let of = |ids: &[u32]| dev.iter().filter(|t| ids.contains(&t.id)).collect::<Vec<_>>();
        let (train_trajs, val_trajs, test_trajs) = (of(&splits.train), of(&splits.val), of(&splits.test));
        let cap = c.window.max_tcae_windows;
        let train_windows = self.nominal_windows(&train_trajs, &scaler, cap, STREAM_TCAE_SAMPLE)?;
        let val_windows = self.nominal_windows(&val_trajs, &scaler, cap.div_ceil(4), STREAM_TCAE_SAMPLE + 100)?;
        let len = c.window.len;
        let train_starts = sampled_starts(&train_trajs, len, c.window.step, cap, derive_seed(c.seed, 40));
        let test_starts = sampled_starts(&test_trajs, len, c.window.step, cap, derive_seed(c.seed, 41));
        let timed = test_trajs
            .iter()
            .max_by_key(|t| t.len())
            .ok_or_else(|| Error::InsufficientData("empty test split".into()))?;

        let mut rows = Vec::new();
        for &kernel_size in &c.bench.kernel_sizes {
            for &latent_channels in &c.bench.latent_channels {
                let cfg = TcaeConfig { kernel_size, latent_channels, blocks: None, ..c.tcae.clone() };
                cfg.validate()?;
                let model = TcaeModel::new(cfg.clone(), derive_seed(c.seed, STREAM_TCAE_INIT))?;
                let opts = tcae::TrainOptions {
                    max_epochs: c.bench.epochs,
                    seed: derive_seed(c.seed, STREAM_TCAE_TRAIN),
                    ..c.training.clone()
                };
                let model = tcae::train(model, &train_windows, &val_windows, &opts)?;

                let n = data::window_count(timed.len(), len, 1).min(TIMED_WINDOWS);
                let windows: Vec<Vec<f32>> = (0..n).map(|s| data::unclamped_window_at(timed, &scaler, len, s)).collect();
                let t0 = Instant::now();
                for w in &windows {
                    std::hint::black_box(model.features_unclamped(w)?);
                }
                let inference_ms = t0.elapsed().as_secs_f64() * 1e3 / n.max(1) as f64;

                let train = sample(&model, &scaler, &train_trajs, &train_starts)?;
                let test = sample(&model, &scaler, &test_trajs, &test_starts)?;
                let truth: Vec<bool> = test.labels.iter().map(|l| l.is_fault()).collect();
                let e: Vec<f64> = test.features.iter().map(|f| f.e).collect();
                let z = |f: &Features| f.z.clone();
                let r = |f: &Features| f.r.clone();
                rows.push(ArchRow {
                    kernel_size,
                    latent_channels,
                    blocks: cfg.block_count()?,
                    receptive_field: cfg.receptive_field()?,
                    params: model.n_params(),
                    memory_bytes: model.n_params() * 4,
                    inference_ms,
                    auroc_e: eval::auroc(&e, &truth)?,
                    auroc_z: binary_auroc(&train, &test, z, &c.detector.gbt)?,
                    auroc_r: binary_auroc(&train, &test, r, &c.detector.gbt)?,
                    accuracy_z: multiclass_accuracy(&train, &test, z, &c.diagnoser.gbt)?,
                    accuracy_r: multiclass_accuracy(&train, &test, r, &c.diagnoser.gbt)?,
                });
            }
        }
        let dir = self.layout.report("");
        fs::create_dir_all(dir)?;
        arch_csv(fs::File::create(self.layout.report("bench_arch.csv"))?, &rows)?;
        Ok(rows)
    }

    /// Base, weighting, resampling and threshold-moving variants of the
    /// detector on the extracted features.
    pub fn bench_imbalance(&self) -> Result<Vec<ImbalanceRow>> {
        let train = self.detector_data(&self.features(FeatureSetName::Train)?);
        let cal = self.detector_data(&self.calibration_features()?);
        let test = self.detector_data(&self.features(FeatureSetName::Test)?);
        let rows = eval::benchmark_imbalance(
            LabeledSet { x: &train.x, y: &train.y },
            LabeledSet { x: &cal.x, y: &cal.y },
            LabeledSet { x: &test.x, y: &test.y },
            &self.config.detector.gbt,
            self.config.bench.moved_threshold,
            self.config.eval.plot_bins,
            derive_seed(self.config.seed, 50),
        )?;
        fs::create_dir_all(self.layout.report(""))?;
        eval::imbalance_csv(fs::File::create(self.layout.report("bench_imbalance.csv"))?, &rows)?;
        Ok(rows)
    }
}

pub fn arch_csv<W: Write>(w: W, rows: &[ArchRow]) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.kernel_size.to_string(),
                r.latent_channels.to_string(),
                r.blocks.to_string(),
                r.receptive_field.to_string(),
                r.params.to_string(),
                r.memory_bytes.to_string(),
                format!("{:.4}", r.inference_ms),
                format!("{:.4}", r.auroc_e),
                format!("{:.4}", r.auroc_z),
                format!("{:.4}", r.auroc_r),
                format!("{:.4}", r.accuracy_z),
                format!("{:.4}", r.accuracy_r),
            ]
        })
        .collect();
    eval::write_csv(
        w,
        &[
            "kernel_size",
            "latent_channels",
            "blocks",
            "receptive_field",
            "params",
            "memory_bytes",
            "inference_ms",
            "auroc_e",
            "auroc_z",
            "auroc_r",
            "accuracy_z",
            "accuracy_r",
        ],
        &body,
    )
}
