//! Binary checkpoint (`GVCK`) and dataset (`GVDS`) files, plus trajectory
//! directories.
//!
//! Checkpoint layout, all little-endian:
//!
//! ```text
//! "GVCK" | u32 version=1 | u64 count | f64 × count | u32 crc32
//! ```
//!
//! Dataset layout:
//!
//! ```text
//! "GVDS" | u32 version=1 | u64 samples | u32 ndims | u32 × ndims (sample dims)
//!        | u32 num_classes | [u32 target_dim  if num_classes == 0]
//!        | f64 × samples·Πdims (inputs)
//!        | u32 × samples (labels)  or  f64 × samples·target_dim (targets)
//!        | u32 crc32
//! ```
//!
//! The CRC covers every byte before it.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::data::{DataSpec, Dataset, Labels};
use super::models::ModelSpec;
use super::train::{OptimizerConfig, Snapshot, Trajectory};
use crate::autodiff::{FlatParams, ParamLayout};
use crate::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"GVCK";
const DATASET_MAGIC: &[u8; 4] = b"GVDS";
const VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn check_magic(buf: &[u8], magic: &[u8; 4]) -> Result<()> {
    if buf.len() < 4 || &buf[..4] != magic {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic, expected {:?}", std::str::from_utf8(magic).unwrap_or("")),
        });
    }
    Ok(())
}

fn check_version(r: &mut Reader) -> Result<()> {
    let at = r.pos as u64;
    let v = r.u32()?;
    if v != VERSION {
        return Err(Error::Format {
            offset: at,
            message: format!("unsupported version {v}"),
        });
    }
    Ok(())
}

fn check_crc(buf: &[u8], body_end: usize) -> Result<()> {
    let stored = u32::from_le_bytes(buf[body_end..body_end + 4].try_into().expect("4 bytes"));
    let actual = crc32fast::hash(&buf[..body_end]);
    if stored != actual {
        return Err(Error::Format {
            offset: body_end as u64,
            message: format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}"),
        });
    }
    Ok(())
}

fn finish_crc(mut out: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn encode_checkpoint(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + values.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    finish_crc(out)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Vec<f64>> {
    check_magic(buf, CHECKPOINT_MAGIC)?;
    let mut r = Reader { buf, pos: 4 };
    check_version(&mut r)?;
    let count = r.u64()?;
    let expected = 16 + count.saturating_mul(8) + 4;
    if buf.len() as u64 != expected {
        return Err(Error::Truncated {
            expected,
            actual: buf.len() as u64,
        });
    }
    let values = r.f64s(count as usize)?;
    check_crc(buf, r.pos)?;
    Ok(values)
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    out.extend_from_slice(&(ds.sample_shape().len() as u32).to_le_bytes());
    for &d in ds.sample_shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match ds.labels() {
        Labels::Classes { num_classes, .. } => {
            out.extend_from_slice(&(*num_classes as u32).to_le_bytes());
        }
        Labels::Values { dim, .. } => {
            out.extend_from_slice(&0u32.to_le_bytes());
            out.extend_from_slice(&(*dim as u32).to_le_bytes());
        }
    }
    for v in ds.inputs() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    match ds.labels() {
        Labels::Classes { ids, .. } => {
            for y in ids {
                out.extend_from_slice(&y.to_le_bytes());
            }
        }
        Labels::Values { values, .. } => {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    finish_crc(out)
}

pub fn decode_dataset(buf: &[u8]) -> Result<Dataset> {
    check_magic(buf, DATASET_MAGIC)?;
    let mut r = Reader { buf, pos: 4 };
    check_version(&mut r)?;
    let samples = r.u64()? as usize;
    let ndims = r.u32()? as usize;
    let dims: Vec<usize> = (0..ndims).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
    let num_classes = r.u32()? as usize;
    let target_dim = if num_classes == 0 { r.u32()? as usize } else { 0 };
    let per: usize = dims.iter().product();
    let label_bytes = if num_classes == 0 {
        samples * target_dim * 8
    } else {
        samples * 4
    };
    let expected = (r.pos + samples * per * 8 + label_bytes + 4) as u64;
    if buf.len() as u64 != expected {
        return Err(Error::Truncated {
            expected,
            actual: buf.len() as u64,
        });
    }
    let inputs = r.f64s(samples * per)?;
    let labels = if num_classes == 0 {
        Labels::Values {
            dim: target_dim,
            values: r.f64s(samples * target_dim)?,
        }
    } else {
        let ids = (0..samples).map(|_| r.u32()).collect::<Result<_>>()?;
        Labels::Classes { ids, num_classes }
    };
    check_crc(buf, r.pos)?;
    Dataset::new(dims, inputs, labels)
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    fs::write(path, encode_dataset(ds))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    decode_dataset(&fs::read(path)?)
}

/// `foo.gvck` → `foo.layout.json`
pub fn layout_sidecar(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.layout.json"))
}

/// Writes the checkpoint and its layout sidecar.
pub fn save_params(path: &Path, params: &FlatParams) -> Result<()> {
    fs::write(path, encode_checkpoint(params.values()))?;
    fs::write(layout_sidecar(path), params.layout().to_json()?)?;
    Ok(())
}

/// Reads a checkpoint, taking the layout from `<stem>.layout.json` or, failing
/// that, `layout.json` in the same directory.
pub fn load_params(path: &Path) -> Result<FlatParams> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let values = decode_checkpoint(&fs::read(path)?)?;
    let sidecar = layout_sidecar(path);
    let shared = path.with_file_name("layout.json");
    let layout_path = if sidecar.exists() { sidecar } else { shared };
    if !layout_path.exists() {
        return Err(Error::Missing(layout_path));
    }
    let layout = ParamLayout::from_json(&fs::read_to_string(&layout_path)?)?;
    FlatParams::new(Arc::new(layout), values)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub iteration: usize,
    pub file: String,
    pub loss: f64,
    pub epoch: usize,
    pub batch_index: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub model: Option<ModelSpec>,
    pub optimizer: OptimizerConfig,
    pub data: Option<DataSpec>,
    pub snapshots: Vec<ManifestEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn checkpoint_name(iteration: usize) -> String {
    format!("iter_{iteration:06}.gvck")
}

/// Writes `iter_%06d.gvck` per snapshot, a shared `layout.json` and
/// `manifest.json`.
pub fn save_trajectory(dir: &Path, traj: &Trajectory, meta: serde_json::Value) -> Result<()> {
    traj.validate()?;
    fs::create_dir_all(dir)?;
    let layout = traj.layout().expect("validated");
    fs::write(dir.join("layout.json"), layout.to_json()?)?;
    let mut entries = Vec::with_capacity(traj.len());
    for s in &traj.snapshots {
        let file = checkpoint_name(s.iteration);
        fs::write(dir.join(&file), encode_checkpoint(s.params.values()))?;
        entries.push(ManifestEntry {
            iteration: s.iteration,
            file,
            loss: s.loss,
            epoch: s.epoch,
            batch_index: s.batch_index,
        });
    }
    let manifest = Manifest {
        model: traj.model.clone(),
        optimizer: traj.optimizer.clone(),
        data: traj.data.clone(),
        snapshots: entries,
        meta,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Err(Error::Missing(path));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn load_trajectory(dir: &Path) -> Result<Trajectory> {
    let manifest = load_manifest(dir)?;
    let layout_path = dir.join("layout.json");
    if !layout_path.exists() {
        return Err(Error::Missing(layout_path));
    }
    let layout = Arc::new(ParamLayout::from_json(&fs::read_to_string(layout_path)?)?);
    let mut snapshots = Vec::with_capacity(manifest.snapshots.len());
    for e in &manifest.snapshots {
        let path = dir.join(&e.file);
        if !path.exists() {
            return Err(Error::Missing(path));
        }
        let values = decode_checkpoint(&fs::read(&path)?)?;
        snapshots.push(Snapshot {
            iteration: e.iteration,
            params: FlatParams::new(layout.clone(), values)?,
            loss: e.loss,
            epoch: e.epoch,
            batch_index: e.batch_index,
        });
    }
    let traj = Trajectory {
        snapshots,
        model: manifest.model,
        optimizer: manifest.optimizer,
        data: manifest.data,
    };
    traj.validate()?;
    Ok(traj)
}
