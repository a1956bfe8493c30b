use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::calib::Method;
use crate::container::sha256_hex;
use crate::data::SplitSpec;
use crate::detect::CusumParams;
use crate::error::{Error, Result};
use crate::gbt::GbtConfig;
use crate::ood::OodTrajectoryMonitor;
use crate::tcae::{TcaeConfig, TrainOptions};

/// Environment variable that overrides `data_root`.
pub const DATA_ROOT_ENV: &str = "VFDD_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Trajectories in the development corpus (split into train/val/val2/test).
    pub development: usize,
    /// Trajectories in the final-validation corpus (`test2`).
    pub final_validation: usize,
    /// Source trajectories per synthetic OOD class.
    pub ood_per_class: usize,
    /// Multiplies the default duration of each trajectory type.
    pub duration_scale: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { development: 60, final_validation: 20, ood_per_class: 2, duration_scale: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub len: usize,
    /// Step between windows, shared by offline extraction and streaming.
    pub step: usize,
    /// Cap on nominal windows used to train the autoencoder (sampled).
    pub max_tcae_windows: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { len: 100, step: 10, max_tcae_windows: 2000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureInput {
    Z,
    R,
    Zr,
}

impl FeatureInput {
    pub fn select(self, f: &crate::tcae::Features) -> Vec<f64> {
        match self {
            FeatureInput::Z => f.z.clone(),
            FeatureInput::R => f.r.clone(),
            FeatureInput::Zr => f.z.iter().chain(&f.r).copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub input: FeatureInput,
    pub calibration: Method,
    /// Weight classes inversely to their frequency during fitting.
    #[serde(default)]
    pub class_weighting: bool,
    pub gbt: GbtConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OodConfig {
    pub alpha: f64,
    /// A trajectory is warned once more than this many windows were flagged.
    pub max_flagged: usize,
}

impl Default for OodConfig {
    fn default() -> Self {
        OodConfig { alpha: 0.01, max_flagged: OodTrajectoryMonitor::DEFAULT_MAX_FLAGGED }
    }
}

/// Optional acceptance thresholds checked by `evaluate` on the `test` set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Requirements {
    pub max_false_positive_rate: Option<f64>,
    pub min_recall: Option<f64>,
    pub min_diagnosis_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub reliability_bins: Vec<usize>,
    /// Bin count of the exported reliability diagrams.
    pub plot_bins: usize,
    pub require: Requirements,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { reliability_bins: vec![5, 10, 15, 20], plot_bins: 5, require: Requirements::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Kernel sizes of the window-100 architecture grid.
    pub kernel_sizes: Vec<usize>,
    pub latent_channels: Vec<usize>,
    /// Training epochs per architecture.
    pub epochs: usize,
    /// Decision threshold of the threshold-moving row.
    pub moved_threshold: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { kernel_sizes: vec![9, 5], latent_channels: vec![16, 4], epochs: 5, moved_threshold: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data_root: PathBuf,
    pub corpus: CorpusConfig,
    pub window: WindowConfig,
    pub split: SplitSpec,
    pub tcae: TcaeConfig,
    pub training: TrainOptions,
    pub detector: ClassifierConfig,
    pub diagnoser: ClassifierConfig,
    pub cusum: CusumParams,
    pub ood: OodConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            data_root: PathBuf::from("run"),
            corpus: CorpusConfig::default(),
            window: WindowConfig::default(),
            split: SplitSpec::default(),
            tcae: TcaeConfig::default(),
            training: TrainOptions { batch_size: 64, max_epochs: 15, ..TrainOptions::default() },
            detector: ClassifierConfig {
                input: FeatureInput::Z,
                calibration: Method::Isotonic,
                class_weighting: false,
                gbt: GbtConfig::detector(),
            },
            diagnoser: ClassifierConfig {
                input: FeatureInput::R,
                calibration: Method::Isotonic,
                class_weighting: false,
                gbt: GbtConfig::diagnoser(),
            },
            cusum: CusumParams::default(),
            ood: OodConfig::default(),
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

/// Provenance hashes of every stage, each chained to its inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageHashes {
    pub corpus: String,
    pub split: String,
    pub tcae: String,
    pub features: String,
    pub detector: String,
    pub diagnoser: String,
    pub calibration: String,
    pub ood: String,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn hash_json(v: &serde_json::Value) -> String {
    sha256_hex(v.to_string().as_bytes())[..16].to_string()
}

impl PipelineConfig {
    /// Parses a (possibly partial) config; every table, including nested
    /// ones such as `[detector.gbt]`, is laid over the defaults key by key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let err = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let user: toml::Table = toml::from_str(text).map_err(|e| err(&e))?;
        let mut merged = toml::Table::try_from(Self::default()).map_err(|e| err(&e))?;
        merge(&mut merged, user);
        merged.try_into().map_err(|e| err(&e))
    }

    /// Reads a config file (or the defaults when `path` is `None`) and
    /// applies the data-root environment override.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        if let Some(root) = std::env::var_os(DATA_ROOT_ENV) {
            cfg.data_root = PathBuf::from(root);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.development < 8 {
            return Err(Error::Config("corpus.development must be at least 8 trajectories".into()));
        }
        if !(c.duration_scale > 0.0) {
            return Err(Error::Config("corpus.duration_scale must be positive".into()));
        }
        if self.window.len == 0 || self.window.step == 0 || self.window.max_tcae_windows == 0 {
            return Err(Error::Config("window.len, window.step and window.max_tcae_windows must be positive".into()));
        }
        if self.tcae.window_len != self.window.len {
            return Err(Error::Config(format!(
                "tcae.window_len ({}) must equal window.len ({})",
                self.tcae.window_len, self.window.len
            )));
        }
        if self.tcae.channels != crate::sim::N_CHANNELS {
            return Err(Error::Config(format!("tcae.channels must be {}", crate::sim::N_CHANNELS)));
        }
        self.split.validate()?;
        self.tcae.validate()?;
        self.detector.gbt.validate()?;
        self.diagnoser.gbt.validate()?;
        if self.detector.gbt.loss != crate::gbt::Loss::Logistic {
            return Err(Error::Config("detector.gbt.loss must be logistic".into()));
        }
        self.cusum.validate()?;
        if !(self.ood.alpha > 0.0 && self.ood.alpha < 1.0) {
            return Err(Error::Config("ood.alpha must lie in (0, 1)".into()));
        }
        if self.eval.reliability_bins.iter().chain([&self.eval.plot_bins]).any(|&b| b == 0) {
            return Err(Error::Config("reliability bin counts must be positive".into()));
        }
        Ok(())
    }

    pub fn hashes(&self) -> StageHashes {
        let corpus = hash_json(&json!({"seed": self.seed, "corpus": self.corpus}));
        let split = hash_json(&json!({"up": corpus, "split": self.split}));
        let tcae = hash_json(&json!({"up": split, "window": self.window, "tcae": self.tcae, "training": self.training}));
        let features = hash_json(&json!({"up": tcae, "step": self.window.step}));
        let detector = hash_json(&json!({"up": features, "detector": self.detector}));
        let diagnoser = hash_json(&json!({"up": features, "diagnoser": self.diagnoser}));
        let calibration = hash_json(&json!({"detector": detector, "diagnoser": diagnoser}));
        let ood = hash_json(&json!({"up": features, "ood": self.ood}));
        StageHashes { corpus, split, tcae, features, detector, diagnoser, calibration, ood }
    }
}
