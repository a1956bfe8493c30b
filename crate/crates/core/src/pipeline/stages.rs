use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::calib::{self, Calibrator, MulticlassCalibrator};
use crate::data::{self, Scaler, Splits, Window};
use crate::error::{Error, Result};
use crate::gbt::{self, GbtEnsemble};
use crate::ood::ConformalThreshold;
use crate::rng::{derive_seed, stream_rng};
use crate::sim::{self, DatasetSpec, Label, OodTransform, TrajType, Trajectory};
use crate::tcae::{self, TcaeModel};

use super::artifacts::*;
use super::config::{ClassifierConfig, PipelineConfig, StageHashes};
use super::monitor::{parse_csv_sample, Deployment, Event, StreamMonitor};
use super::report::{evaluate_set, monitor_set, EvalReport, OodSummary};

// Id ranges of the generated corpora.
const TEST2_FIRST_ID: u32 = 100_000;
const OOD_SOURCE_FIRST_ID: u32 = 200_000;
const OOD_FIRST_ID: u32 = 300_000;

// Seed streams of the individual stages.
const STREAM_SPLIT: u64 = 1;
pub(super) const STREAM_TCAE_INIT: u64 = 2;
pub(super) const STREAM_TCAE_TRAIN: u64 = 3;
pub(super) const STREAM_TCAE_SAMPLE: u64 = 4;
const STREAM_DEV: u64 = 10;
const STREAM_TEST2: u64 = 11;
const STREAM_OOD: u64 = 12;

/// A configured pipeline rooted at its data directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub layout: Layout,
    pub hashes: StageHashes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub detector: Calibrator,
    pub diagnoser: MulticlassCalibrator,
    pub calibration_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplitArtifact {
    splits: Splits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScalerArtifact {
    scaler: Scaler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OodArtifact {
    threshold: ConformalThreshold,
}

/// Windows and labels of one set, reduced to classifier inputs.
pub(super) struct Labeled {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u32>,
}

fn binary_target(l: Label) -> u32 {
    u32::from(l.is_fault())
}

fn weights_for(y: &[u32], enabled: bool) -> Result<Option<Vec<f64>>> {
    if !enabled {
        return Ok(None);
    }
    let w = data::class_weights(y)?;
    Ok(Some(y.iter().map(|c| w[c]).collect()))
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config.data_root.clone());
        let hashes = config.hashes();
        Ok(Pipeline { config, layout, hashes })
    }

    pub fn simulate(&self) -> Result<Manifest> {
        let c = &self.config;
        let seed = c.seed;
        let dev_spec = DatasetSpec::development(c.corpus.development).with_duration_scale(c.corpus.duration_scale);
        let dev = sim::generate_dataset(&dev_spec, derive_seed(seed, STREAM_DEV))?;
        let test2_spec = DatasetSpec::final_validation(c.corpus.final_validation)
            .with_duration_scale(c.corpus.duration_scale)
            .with_first_id(TEST2_FIRST_ID);
        let test2 = sim::generate_dataset(&test2_spec, derive_seed(seed, STREAM_TEST2))?;

        // OOD trajectories: nominal sources cycling over the trajectory
        // types, corrupted by each transform.
        let mut src_spec = DatasetSpec::empty().with_duration_scale(c.corpus.duration_scale).with_first_id(OOD_SOURCE_FIRST_ID);
        for k in 0..c.corpus.ood_per_class {
            src_spec.entries.push(sim::CorpusEntry {
                label: Label::NOMINAL,
                traj_type: TrajType::ALL[k % 3],
                count: 1,
            });
        }
        let sources = sim::generate_dataset(&src_spec, derive_seed(seed, STREAM_OOD))?;
        let mut ood = Vec::new();
        for (t, transform) in OodTransform::TABLE.iter().enumerate() {
            for (k, src) in sources.iter().enumerate() {
                let mut traj = sim::make_ood(src, transform);
                traj.id = OOD_FIRST_ID + (t * sources.len() + k) as u32;
                ood.push(traj);
            }
        }

        let write = |set: CorpusSet, trajs: &[Trajectory]| -> Result<Vec<u32>> {
            let dir = self.layout.corpus_dir(set);
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
            fs::create_dir_all(&dir)?;
            trajs
                .iter()
                .map(|t| {
                    t.save(&trajectory_path(&self.layout, set, t.id))?;
                    Ok(t.id)
                })
                .collect()
        };
        let manifest = Manifest {
            dev: write(CorpusSet::Development, &dev)?,
            test2: write(CorpusSet::FinalValidation, &test2)?,
            ood: write(CorpusSet::Ood, &ood)?,
        };
        save_json(&self.layout.manifest(), &self.hashes.corpus, &manifest)?;
        Ok(manifest)
    }

    pub fn manifest(&self) -> Result<Manifest> {
        load_json(&self.layout.manifest(), &self.hashes.corpus)
    }

    pub(super) fn corpus(&self, set: CorpusSet) -> Result<Vec<Trajectory>> {
        load_corpus(&self.layout, &self.manifest()?, set)
    }

    pub fn split(&self) -> Result<Splits> {
        let dev = self.corpus(CorpusSet::Development)?;
        let splits = data::split_trajectories(&dev, &self.config.split, derive_seed(self.config.seed, STREAM_SPLIT))?;
        let train: Vec<Trajectory> = dev.into_iter().filter(|t| splits.train.contains(&t.id)).collect();
        let scaler = Scaler::fit(&train)?;
        save_json(&self.layout.artifact("splits.json"), &self.hashes.split, &SplitArtifact { splits: splits.clone() })?;
        save_json(&self.layout.artifact("scaler.json"), &self.hashes.split, &ScalerArtifact { scaler })?;
        Ok(splits)
    }

    pub fn splits(&self) -> Result<Splits> {
        Ok(load_json::<SplitArtifact>(&self.layout.artifact("splits.json"), &self.hashes.split)?.splits)
    }

    pub fn scaler(&self) -> Result<Scaler> {
        Ok(load_json::<ScalerArtifact>(&self.layout.artifact("scaler.json"), &self.hashes.split)?.scaler)
    }

    /// Nominal windows of the given trajectories, uniformly subsampled to at
    /// most `cap`.
    pub(super) fn nominal_windows(&self, trajs: &[&Trajectory], scaler: &Scaler, cap: usize, stream: u64) -> Result<Vec<Window>> {
        let w = &self.config.window;
        let mut all = Vec::new();
        for t in trajs.iter().filter(|t| t.label == Label::NOMINAL) {
            all.extend(data::windows(t, scaler, w.len, w.step)?);
        }
        if all.len() > cap {
            let mut rng = stream_rng(self.config.seed, stream);
            all.shuffle(&mut rng);
            all.truncate(cap);
        }
        Ok(all)
    }

    pub fn train_tcae(&self) -> Result<TcaeModel> {
        let dev = self.corpus(CorpusSet::Development)?;
        let splits = self.splits()?;
        let scaler = self.scaler()?;
        let of = |ids: &[u32]| dev.iter().filter(|t| ids.contains(&t.id)).collect::<Vec<_>>();
        let cap = self.config.window.max_tcae_windows;
        let train = self.nominal_windows(&of(&splits.train), &scaler, cap, STREAM_TCAE_SAMPLE)?;
        let val = self.nominal_windows(&of(&splits.val), &scaler, cap.div_ceil(4), STREAM_TCAE_SAMPLE + 100)?;
        if train.is_empty() {
            return Err(Error::InsufficientData("no nominal training windows".into()));
        }
        let mut model = TcaeModel::new(self.config.tcae.clone(), derive_seed(self.config.seed, STREAM_TCAE_INIT))?;
        model.scaler_hash = scaler.hash();
        let opts = tcae::TrainOptions { seed: derive_seed(self.config.seed, STREAM_TCAE_TRAIN), ..self.config.training.clone() };
        let model = tcae::train(model, &train, &val, &opts)?;
        save_container(&self.layout.artifact("tcae.vfdd"), &self.hashes.tcae, model.to_container())?;
        Ok(model)
    }

    pub fn tcae(&self) -> Result<TcaeModel> {
        let c = load_container(&self.layout.artifact("tcae.vfdd"), tcae::MODEL_KIND, tcae::MODEL_VERSION, &self.hashes.tcae)?;
        TcaeModel::from_container(&c)
    }

    /// Features of every window of every trajectory, in order.
    pub fn extract_trajectories(model: &TcaeModel, scaler: &Scaler, trajs: &[Trajectory], step: usize) -> Result<FeatureSet> {
        let mut set = FeatureSet::new(model.config.latent_channels, model.config.channels);
        let len = model.config.window_len;
        for t in trajs {
            let starts: Vec<usize> = data::window_starts(t.len(), len, step).collect();
            let windows: Vec<Vec<f32>> = starts.iter().map(|&s| data::unclamped_window_at(t, scaler, len, s)).collect();
            let refs: Vec<&[f32]> = windows.iter().map(Vec::as_slice).collect();
            for (&start, f) in starts.iter().zip(model.features_batch_unclamped(&refs)?) {
                set.push(&f, t.label, t.id, t.traj_type, start)?;
            }
        }
        Ok(set)
    }

    pub fn extract(&self) -> Result<BTreeMap<String, usize>> {
        let model = self.tcae()?;
        let scaler = self.scaler()?;
        if model.scaler_hash != scaler.hash() {
            return Err(Error::HashMismatch {
                artifact: "tcae.vfdd".into(),
                expected: scaler.hash(),
                found: model.scaler_hash.clone(),
            });
        }
        let manifest = self.manifest()?;
        let splits = self.splits()?;
        let dev = load_corpus(&self.layout, &manifest, CorpusSet::Development)?;
        let mut counts = BTreeMap::new();
        for name in FeatureSetName::ALL {
            let trajs: Vec<Trajectory> = match name {
                FeatureSetName::Test2 => load_corpus(&self.layout, &manifest, CorpusSet::FinalValidation)?,
                FeatureSetName::Ood => load_corpus(&self.layout, &manifest, CorpusSet::Ood)?,
                _ => {
                    let ids = match name {
                        FeatureSetName::Train => &splits.train,
                        FeatureSetName::Val => &splits.val,
                        FeatureSetName::Val2 => &splits.val2,
                        _ => &splits.test,
                    };
                    dev.iter().filter(|t| ids.contains(&t.id)).cloned().collect()
                }
            };
            let set = Self::extract_trajectories(&model, &scaler, &trajs, self.config.window.step)?;
            counts.insert(name.name().to_string(), set.len());
            save_container(&self.layout.features(name), &self.hashes.features, set.to_container())?;
        }
        Ok(counts)
    }

    pub fn features(&self, name: FeatureSetName) -> Result<FeatureSet> {
        let c = load_container(&self.layout.features(name), FEATURES_KIND, FEATURES_VERSION, &self.hashes.features)?;
        FeatureSet::from_container(&c)
    }

    /// Validation and second validation windows, used for calibration.
    pub fn calibration_features(&self) -> Result<FeatureSet> {
        let mut set = self.features(FeatureSetName::Val)?;
        set.extend(&self.features(FeatureSetName::Val2)?)?;
        Ok(set)
    }

    pub(super) fn detector_data(&self, set: &FeatureSet) -> Labeled {
        let input = self.config.detector.input;
        Labeled {
            x: set.rows(input),
            y: set.labels.iter().map(|&l| binary_target(l)).collect(),
        }
    }

    pub(super) fn diagnoser_data(&self, set: &FeatureSet) -> Labeled {
        let input = self.config.diagnoser.input;
        let idx: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i].is_fault()).collect();
        Labeled {
            x: idx.iter().map(|&i| set.row(i, input)).collect(),
            y: idx.iter().map(|&i| set.labels[i].0 as u32).collect(),
        }
    }

    fn fit_classifier(cfg: &ClassifierConfig, data: &Labeled) -> Result<GbtEnsemble> {
        let w = weights_for(&data.y, cfg.class_weighting)?;
        gbt::fit(&data.x, &data.y, w.as_deref(), &cfg.gbt)
    }

    pub fn train_detector(&self) -> Result<GbtEnsemble> {
        let train = self.features(FeatureSetName::Train)?;
        let model = Self::fit_classifier(&self.config.detector, &self.detector_data(&train))?;
        save_container(&self.layout.artifact("detector.vfdd"), &self.hashes.detector, model.to_container())?;
        Ok(model)
    }

    pub fn train_diagnoser(&self) -> Result<GbtEnsemble> {
        let train = self.features(FeatureSetName::Train)?;
        let model = Self::fit_classifier(&self.config.diagnoser, &self.diagnoser_data(&train))?;
        save_container(&self.layout.artifact("diagnoser.vfdd"), &self.hashes.diagnoser, model.to_container())?;
        Ok(model)
    }

    fn gbt_artifact(&self, name: &str, hash: &str) -> Result<GbtEnsemble> {
        let c = load_container(&self.layout.artifact(name), gbt::MODEL_KIND, gbt::MODEL_VERSION, hash)?;
        GbtEnsemble::from_container(&c)
    }

    pub fn detector(&self) -> Result<GbtEnsemble> {
        self.gbt_artifact("detector.vfdd", &self.hashes.detector)
    }

    pub fn diagnoser(&self) -> Result<GbtEnsemble> {
        self.gbt_artifact("diagnoser.vfdd", &self.hashes.diagnoser)
    }

    pub fn calibrate(&self) -> Result<CalibrationArtifact> {
        let set = self.calibration_features()?;
        let detector = self.detector()?;
        let diagnoser = self.diagnoser()?;
        let det = self.detector_data(&set);
        let truth: Vec<bool> = det.y.iter().map(|&y| y == 1).collect();
        let det_cal = calib::fit(self.config.detector.calibration, &detector.positive_scores(&det.x)?, &truth)?;
        let diag = self.diagnoser_data(&set);
        let diag_cal = calib::calibrate_multiclass(
            &diagnoser.predict_scores(&diag.x)?,
            &diag.y,
            &diagnoser.classes,
            self.config.diagnoser.calibration,
        )?;
        let art = CalibrationArtifact { detector: det_cal, diagnoser: diag_cal, calibration_windows: set.len() };
        save_json(&self.layout.artifact("calibration.json"), &self.hashes.calibration, &art)?;
        Ok(art)
    }

    pub fn calibration(&self) -> Result<CalibrationArtifact> {
        load_json(&self.layout.artifact("calibration.json"), &self.hashes.calibration)
    }

    pub fn calibrate_ood(&self) -> Result<ConformalThreshold> {
        let set = self.calibration_features()?;
        let t = ConformalThreshold::calibrate(&set.e, self.config.ood.alpha)?;
        save_json(&self.layout.artifact("ood.json"), &self.hashes.ood, &OodArtifact { threshold: t.clone() })?;
        Ok(t)
    }

    pub fn ood_threshold(&self) -> Result<ConformalThreshold> {
        Ok(load_json::<OodArtifact>(&self.layout.artifact("ood.json"), &self.hashes.ood)?.threshold)
    }

    /// Loads every model needed for online monitoring.
    pub fn deployment(&self) -> Result<Deployment> {
        let cal = self.calibration()?;
        Ok(Deployment {
            scaler: self.scaler()?,
            tcae: self.tcae()?,
            detector: self.detector()?,
            detector_input: self.config.detector.input,
            detector_calibration: cal.detector,
            diagnoser: self.diagnoser()?,
            diagnoser_input: self.config.diagnoser.input,
            diagnoser_calibration: cal.diagnoser,
            ood: self.ood_threshold()?,
            cusum: self.config.cusum,
            max_flagged: self.config.ood.max_flagged,
            step: self.config.window.step,
        })
    }

    /// Builds the report, writes it under `reports/`, then checks the
    /// configured requirements on the `test` set.
    pub fn evaluate(&self) -> Result<EvalReport> {
        let d = self.deployment()?;
        let ev = &self.config.eval;
        let ood_set = self.features(FeatureSetName::Ood)?;
        let ood_outcomes = monitor_set(&d, &ood_set)?;
        let mut sets = Vec::new();
        let mut exports = Vec::new();
        let mut flagged_fraction = BTreeMap::new();
        for name in [FeatureSetName::Test, FeatureSetName::Test2] {
            let set = self.features(name)?;
            let (r, e) = evaluate_set(name.name(), &d, &set, &ood_outcomes, &ev.reliability_bins, ev.plot_bins)?;
            flagged_fraction.insert(name.name().to_string(), flagged(&d, &set));
            sets.push(r);
            exports.extend(e);
        }
        flagged_fraction.insert("ood".into(), flagged(&d, &ood_set));
        let model_hashes = BTreeMap::from([
            ("tcae".to_string(), d.tcae.hash()),
            ("detector".to_string(), crate::container::sha256_hex(&container_bytes(&d.detector.to_container())?)),
            ("diagnoser".to_string(), crate::container::sha256_hex(&container_bytes(&d.diagnoser.to_container())?)),
        ]);
        let report = EvalReport {
            seed: self.config.seed,
            model_hashes,
            sets,
            ood: OodSummary {
                threshold: d.ood.threshold,
                alpha: d.ood.alpha,
                calibration_windows: d.ood.n,
                max_flagged: d.max_flagged,
                flagged_fraction,
                outcomes: ood_outcomes,
            },
        };
        self.write_report(&report, &exports)?;
        self.check_requirements(&report)?;
        Ok(report)
    }

    fn write_report(&self, report: &EvalReport, exports: &[super::report::ReliabilityExport]) -> Result<()> {
        let dir = self.layout.report("");
        fs::create_dir_all(&dir)?;
        fs::write(self.layout.report("report.json"), report.to_json()?)?;
        fs::write(self.layout.report("report.txt"), report.to_text())?;
        report.detection_times_csv(fs::File::create(self.layout.report("detection_times.csv"))?)?;
        report.confidence_csv(fs::File::create(self.layout.report("confidence.csv"))?)?;
        report.calibration_csv(fs::File::create(self.layout.report("calibration.csv"))?)?;
        report.confusion_csv(fs::File::create(self.layout.report("confusion.csv"))?)?;
        for e in exports {
            e.data.write_csv(fs::File::create(self.layout.report(&e.name))?)?;
        }
        Ok(())
    }

    fn check_requirements(&self, report: &EvalReport) -> Result<()> {
        let req = &self.config.eval.require;
        let Some(test) = report.sets.iter().find(|s| s.name == "test") else {
            return Ok(());
        };
        let mut failures = Vec::new();
        if let Some(max) = req.max_false_positive_rate {
            if test.detection.fpr > max {
                failures.push(format!("false positive rate {:.4} > {max}", test.detection.fpr));
            }
        }
        if let Some(min) = req.min_recall {
            if test.detection.recall < min {
                failures.push(format!("recall {:.4} < {min}", test.detection.recall));
            }
        }
        if let Some(min) = req.min_diagnosis_accuracy {
            let acc = test.diagnosis.as_ref().map_or(0.0, |m| m.accuracy);
            if acc < min {
                failures.push(format!("diagnosis accuracy {acc:.4} < {min}"));
            }
        }
        if failures.is_empty() {
            Ok(())
        } else {
            Err(Error::Acceptance(failures.join("; ")))
        }
    }

    /// Monitors one raw trajectory given as CSV lines (header first) and
    /// writes one JSON event per line. Returns the events.
    pub fn stream<R: BufRead, W: Write>(&self, input: R, mut output: W, traj_id: u32) -> Result<Vec<Event>> {
        let d = self.deployment()?;
        let mut m = StreamMonitor::new(&d, traj_id)?;
        let mut events = Vec::new();
        let mut lines = input.lines();
        match lines.next() {
            Some(header) => {
                let header = header?;
                if !header.starts_with("time_s") {
                    return Err(Error::Format("expected a trajectory CSV header starting with 'time_s'".into()));
                }
            }
            None => return Ok(events),
        }
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(out) = m.push_sample(&parse_csv_sample(&line)?)? {
                for ev in out.events {
                    writeln!(output, "{}", serde_json::to_string(&ev)?)?;
                    events.push(ev);
                }
            }
        }
        output.flush()?;
        Ok(events)
    }

    /// Runs every stage from simulation to evaluation.
    pub fn run_all(&self) -> Result<EvalReport> {
        self.simulate()?;
        self.split()?;
        self.train_tcae()?;
        self.extract()?;
        self.train_detector()?;
        self.train_diagnoser()?;
        self.calibrate()?;
        self.calibrate_ood()?;
        self.evaluate()
    }
}

fn flagged(d: &Deployment, set: &FeatureSet) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    set.e.iter().filter(|&&e| d.ood.is_ood(e)).count() as f64 / set.len() as f64
}

fn container_bytes(c: &crate::container::Container) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    c.write_to(&mut buf)?;
    Ok(buf)
}
