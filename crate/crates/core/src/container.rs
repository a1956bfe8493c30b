//! Versioned binary container shared by every persisted artifact.
//!
//! Layout:
//!
//! ```text
//! VFDD <kind> <version>\n
//! <header JSON on a single line>\n
//! <payload: tensors back to back, little-endian, in header order>
//! ```
//!
//! The header carries free-form metadata under `meta` and a `tensors` list
//! of `{name, dtype, shape}` entries describing the payload. Supported dtypes
//! are `f32`, `f64` and `u32`. Readers reject a kind or version they were not
//! asked for.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &str = "VFDD";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl TensorData {
    fn dtype(&self) -> &'static str {
        match self {
            TensorData::F32(_) => "f32",
            TensorData::F64(_) => "f64",
            TensorData::U32(_) => "u32",
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f32(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Tensor { name: name.into(), shape, data: TensorData::F32(data) }
    }

    pub fn f64(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Tensor { name: name.into(), shape, data: TensorData::F64(data) }
    }

    pub fn u32(name: impl Into<String>, shape: Vec<usize>, data: Vec<u32>) -> Self {
        Tensor { name: name.into(), shape, data: TensorData::U32(data) }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub version: u32,
    pub meta: Value,
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn new(kind: impl Into<String>, version: u32, meta: Value) -> Self {
        Container { kind: kind.into(), version, meta, tensors: Vec::new() }
    }

    pub fn push(&mut self, tensor: Tensor) -> &mut Self {
        self.tensors.push(tensor);
        self
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("{} container has no tensor '{name}'", self.kind)))
    }

    pub fn f32s(&self, name: &str) -> Result<&[f32]> {
        match &self.tensor(name)?.data {
            TensorData::F32(v) => Ok(v),
            other => Err(Error::Format(format!("tensor '{name}' is {}, expected f32", other.dtype()))),
        }
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64]> {
        match &self.tensor(name)?.data {
            TensorData::F64(v) => Ok(v),
            other => Err(Error::Format(format!("tensor '{name}' is {}, expected f64", other.dtype()))),
        }
    }

    pub fn u32s(&self, name: &str) -> Result<&[u32]> {
        match &self.tensor(name)?.data {
            TensorData::U32(v) => Ok(v),
            other => Err(Error::Format(format!("tensor '{name}' is {}, expected u32", other.dtype()))),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.tensors {
            let expected: usize = t.shape.iter().product();
            if expected != t.data.len() {
                return Err(Error::shape(
                    format!("{expected} elements for tensor '{}'", t.name),
                    t.data.len(),
                ));
            }
        }
        let header = Header {
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorEntry { name: t.name.clone(), dtype: t.data.dtype().into(), shape: t.shape.clone() })
                .collect(),
        };
        writeln!(w, "{MAGIC} {} {}", self.kind, self.version)?;
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for t in &self.tensors {
            match &t.data {
                TensorData::F32(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                TensorData::F64(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                TensorData::U32(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a container, checking kind and version.
    pub fn read_from<R: BufRead>(mut r: R, kind: &str, version: u32) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let mut parts = line.trim_end().split(' ');
        if parts.next() != Some(MAGIC) {
            return Err(Error::Format("not a VFDD container".into()));
        }
        let found_kind = parts.next().unwrap_or_default().to_string();
        let found_version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format("container version missing".into()))?;
        if found_kind != kind {
            return Err(Error::Format(format!("expected a '{kind}' container, found '{found_kind}'")));
        }
        if found_version != version {
            return Err(Error::Version(format!(
                "{kind} container is version {found_version}, this build reads version {version}"
            )));
        }
        line.clear();
        r.read_line(&mut line)?;
        let header: Header = serde_json::from_str(line.trim_end())?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let data = match entry.dtype.as_str() {
                "f32" => TensorData::F32(read_words::<4, _, _>(&mut r, n, f32::from_le_bytes)?),
                "f64" => TensorData::F64(read_words::<8, _, _>(&mut r, n, f64::from_le_bytes)?),
                "u32" => TensorData::U32(read_words::<4, _, _>(&mut r, n, u32::from_le_bytes)?),
                other => return Err(Error::Format(format!("unknown dtype '{other}'"))),
            };
            tensors.push(Tensor { name: entry.name, shape: entry.shape, data });
        }
        Ok(Container { kind: found_kind, version: found_version, meta: header.meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path, kind: &str, version: u32) -> Result<Self> {
        let file = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::read_from(BufReader::new(file), kind, version)
    }
}

fn read_words<const N: usize, R: Read, T>(r: &mut R, n: usize, conv: fn([u8; N]) -> T) -> Result<Vec<T>> {
    let mut bytes = vec![0u8; n * N];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("container payload truncated".into()))?;
    Ok(bytes
        .chunks_exact(N)
        .map(|c| conv(c.try_into().expect("chunk size")))
        .collect())
}

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    Ok(sha256_hex(&bytes))
}
