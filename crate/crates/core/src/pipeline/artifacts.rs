use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::container::{Container, Tensor};
use crate::error::{Error, Result};
use crate::sim::{Label, TrajType, Trajectory};
use crate::tcae::Features;

use super::config::FeatureInput;

/// Meta key holding the provenance hash of a stamped container.
const HASH_KEY: &str = "pipeline_hash";

/// File locations under the data root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn corpus_dir(&self, set: CorpusSet) -> PathBuf {
        self.root.join("corpus").join(set.name())
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("corpus/manifest.json")
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.root.join("artifacts").join(name)
    }

    pub fn features(&self, set: FeatureSetName) -> PathBuf {
        self.root.join("artifacts/features").join(format!("{}.vfdd", set.name()))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusSet {
    Development,
    FinalValidation,
    Ood,
}

impl CorpusSet {
    pub const ALL: [CorpusSet; 3] = [CorpusSet::Development, CorpusSet::FinalValidation, CorpusSet::Ood];

    pub fn name(self) -> &'static str {
        match self {
            CorpusSet::Development => "dev",
            CorpusSet::FinalValidation => "test2",
            CorpusSet::Ood => "ood",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSetName {
    Train,
    Val,
    Val2,
    Test,
    Test2,
    Ood,
}

impl FeatureSetName {
    pub const ALL: [FeatureSetName; 6] = [
        FeatureSetName::Train,
        FeatureSetName::Val,
        FeatureSetName::Val2,
        FeatureSetName::Test,
        FeatureSetName::Test2,
        FeatureSetName::Ood,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSetName::Train => "train",
            FeatureSetName::Val => "val",
            FeatureSetName::Val2 => "val2",
            FeatureSetName::Test => "test",
            FeatureSetName::Test2 => "test2",
            FeatureSetName::Ood => "ood",
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

fn check_hash(path: &Path, expected: &str, found: Option<&str>) -> Result<()> {
    match found {
        Some(h) if h == expected => Ok(()),
        other => Err(Error::HashMismatch {
            artifact: path.display().to_string(),
            expected: expected.to_string(),
            found: other.unwrap_or("<none>").to_string(),
        }),
    }
}

#[derive(Serialize, Deserialize)]
struct Stamped<T> {
    pipeline_hash: String,
    #[serde(flatten)]
    value: T,
}

pub fn save_json<T: Serialize>(path: &Path, hash: &str, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(&Stamped { pipeline_hash: hash.to_string(), value })?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path, hash: &str) -> Result<T> {
    require(path)?;
    let raw: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    check_hash(path, hash, raw.get(HASH_KEY).and_then(|v| v.as_str()))?;
    let s: Stamped<T> = serde_json::from_value(raw)?;
    Ok(s.value)
}

pub fn save_container(path: &Path, hash: &str, mut c: Container) -> Result<()> {
    ensure_parent(path)?;
    c.meta[HASH_KEY] = hash.into();
    c.save(path)
}

pub fn load_container(path: &Path, kind: &str, version: u32, hash: &str) -> Result<Container> {
    require(path)?;
    let c = Container::load(path, kind, version)?;
    check_hash(path, hash, c.meta.get(HASH_KEY).and_then(|v| v.as_str()))?;
    Ok(c)
}

/// Trajectory ids of each corpus, in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dev: Vec<u32>,
    pub test2: Vec<u32>,
    pub ood: Vec<u32>,
}

impl Manifest {
    pub fn ids(&self, set: CorpusSet) -> &[u32] {
        match set {
            CorpusSet::Development => &self.dev,
            CorpusSet::FinalValidation => &self.test2,
            CorpusSet::Ood => &self.ood,
        }
    }
}

pub fn trajectory_path(layout: &Layout, set: CorpusSet, id: u32) -> PathBuf {
    layout.corpus_dir(set).join(format!("traj_{id:06}.vfdd"))
}

pub fn load_corpus(layout: &Layout, manifest: &Manifest, set: CorpusSet) -> Result<Vec<Trajectory>> {
    manifest
        .ids(set)
        .iter()
        .map(|&id| {
            let p = trajectory_path(layout, set, id);
            require(&p)?;
            Trajectory::load(&p)
        })
        .collect()
}

pub const FEATURES_KIND: &str = "features";
pub const FEATURES_VERSION: u32 = 1;

/// Extracted features of every window of a set of trajectories, stored in
/// trajectory order and, within a trajectory, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub z_dim: usize,
    pub r_dim: usize,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub e: Vec<f64>,
    pub labels: Vec<Label>,
    pub traj_ids: Vec<u32>,
    pub traj_types: Vec<TrajType>,
    pub starts: Vec<usize>,
}

impl FeatureSet {
    pub fn new(z_dim: usize, r_dim: usize) -> Self {
        FeatureSet {
            z_dim,
            r_dim,
            z: Vec::new(),
            r: Vec::new(),
            e: Vec::new(),
            labels: Vec::new(),
            traj_ids: Vec::new(),
            traj_types: Vec::new(),
            starts: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }

    pub fn push(&mut self, f: &Features, label: Label, traj_id: u32, traj_type: TrajType, start: usize) -> Result<()> {
        if f.z.len() != self.z_dim || f.r.len() != self.r_dim {
            return Err(Error::shape(format!("z {} / r {}", self.z_dim, self.r_dim), f.z.len() + f.r.len()));
        }
        self.z.extend_from_slice(&f.z);
        self.r.extend_from_slice(&f.r);
        self.e.push(f.e);
        self.labels.push(label);
        self.traj_ids.push(traj_id);
        self.traj_types.push(traj_type);
        self.starts.push(start);
        Ok(())
    }

    pub fn features(&self, i: usize) -> Features {
        Features {
            z: self.z[i * self.z_dim..(i + 1) * self.z_dim].to_vec(),
            r: self.r[i * self.r_dim..(i + 1) * self.r_dim].to_vec(),
            e: self.e[i],
        }
    }

    pub fn row(&self, i: usize, input: FeatureInput) -> Vec<f64> {
        let z = &self.z[i * self.z_dim..(i + 1) * self.z_dim];
        let r = &self.r[i * self.r_dim..(i + 1) * self.r_dim];
        match input {
            FeatureInput::Z => z.to_vec(),
            FeatureInput::R => r.to_vec(),
            FeatureInput::Zr => z.iter().chain(r).copied().collect(),
        }
    }

    pub fn rows(&self, input: FeatureInput) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.row(i, input)).collect()
    }

    /// Index ranges of consecutive windows belonging to one trajectory.
    pub fn trajectories(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut a = 0;
        for i in 1..=self.len() {
            if i == self.len() || self.traj_ids[i] != self.traj_ids[a] {
                out.push(a..i);
                a = i;
            }
        }
        out
    }

    pub fn extend(&mut self, other: &FeatureSet) -> Result<()> {
        if other.z_dim != self.z_dim || other.r_dim != self.r_dim {
            return Err(Error::shape(format!("z {} / r {}", self.z_dim, self.r_dim), other.z_dim + other.r_dim));
        }
        self.z.extend_from_slice(&other.z);
        self.r.extend_from_slice(&other.r);
        self.e.extend_from_slice(&other.e);
        self.labels.extend_from_slice(&other.labels);
        self.traj_ids.extend_from_slice(&other.traj_ids);
        self.traj_types.extend_from_slice(&other.traj_types);
        self.starts.extend_from_slice(&other.starts);
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let n = self.len();
        let mut c = Container::new(FEATURES_KIND, FEATURES_VERSION, serde_json::json!({"windows": n}));
        c.push(Tensor::f64("z", vec![n, self.z_dim], self.z.clone()))
            .push(Tensor::f64("r", vec![n, self.r_dim], self.r.clone()))
            .push(Tensor::f64("e", vec![n], self.e.clone()))
            .push(Tensor::u32("label", vec![n], self.labels.iter().map(|l| l.0 as u32).collect()))
            .push(Tensor::u32("traj_id", vec![n], self.traj_ids.clone()))
            .push(Tensor::u32("traj_type", vec![n], self.traj_types.iter().map(|t| t.index()).collect()))
            .push(Tensor::u32("start", vec![n], self.starts.iter().map(|&s| s as u32).collect()));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let dim = |name: &str| -> Result<usize> {
            let t = c.tensor(name)?;
            t.shape.get(1).copied().ok_or_else(|| Error::Format(format!("tensor '{name}' must be 2-D")))
        };
        let e = c.f64s("e")?.to_vec();
        let n = e.len();
        let z_dim = dim("z")?;
        let r_dim = dim("r")?;
        let labels: Vec<Label> = c.u32s("label")?.iter().map(|&l| Label(l as u16)).collect();
        let traj_ids = c.u32s("traj_id")?.to_vec();
        let traj_types = c.u32s("traj_type")?.iter().map(|&t| TrajType::from_index(t)).collect::<Result<Vec<_>>>()?;
        let starts: Vec<usize> = c.u32s("start")?.iter().map(|&s| s as usize).collect();
        let z = c.f64s("z")?.to_vec();
        let r = c.f64s("r")?.to_vec();
        if [labels.len(), traj_ids.len(), traj_types.len(), starts.len()].iter().any(|&l| l != n)
            || z.len() != n * z_dim
            || r.len() != n * r_dim
        {
            return Err(Error::Format("inconsistent feature tensor lengths".into()));
        }
        Ok(FeatureSet { z_dim, r_dim, z, r, e, labels, traj_ids, traj_types, starts })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureSet {
        let mut s = FeatureSet::new(2, 3);
        for (i, id) in [4u32, 4, 9].iter().enumerate() {
            let f = Features { z: vec![i as f64, 1.0], r: vec![0.5; 3], e: 0.1 * i as f64 };
            s.push(&f, Label(16), *id, TrajType::T3, i * 10).unwrap();
        }
        s
    }

    #[test]
    fn feature_set_round_trip_and_grouping() {
        let s = sample();
        assert_eq!(FeatureSet::from_container(&s.to_container()).unwrap(), s);
        assert_eq!(s.trajectories(), vec![0..2, 2..3]);
        assert_eq!(s.row(1, FeatureInput::Zr), vec![1.0, 1.0, 0.5, 0.5, 0.5]);
        assert_eq!(s.features(2).e, 0.2);
    }

    #[test]
    fn stamped_artifacts_check_their_hash() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/x.json");
        save_json(&p, "abc", &Manifest { dev: vec![1], test2: vec![], ood: vec![] }).unwrap();
        let m: Manifest = load_json(&p, "abc").unwrap();
        assert_eq!(m.dev, vec![1]);
        assert!(matches!(load_json::<Manifest>(&p, "abd"), Err(Error::HashMismatch { .. })));
        assert!(matches!(load_json::<Manifest>(&dir.path().join("none"), "abc"), Err(Error::MissingArtifact(_))));

        let q = dir.path().join("f.vfdd");
        save_container(&q, "h1", sample().to_container()).unwrap();
        assert!(load_container(&q, FEATURES_KIND, FEATURES_VERSION, "h1").is_ok());
        assert!(matches!(
            load_container(&q, FEATURES_KIND, FEATURES_VERSION, "h2"),
            Err(Error::HashMismatch { .. })
        ));
        assert!(matches!(load_container(&q, FEATURES_KIND, 2, "h1"), Err(Error::Version(_))));
    }
}
