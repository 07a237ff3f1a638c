//! Checkpoint directories:
//!
//! ```text
//! manifest.json   config echo, counters, rng state, parameter table
//! params.bin      little-endian f32 parameters in table order
//! optim.bin       RMSProp accumulators, same layout as params.bin
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::state::{RngState, TrainState};
use crate::error::{Error, Result};
use crate::fsutil::temp_sibling;
use crate::models::{ModelConfig, Networks, ParamStore};

pub const FORMAT: &str = "udasr-checkpoint-1";
const MANIFEST: &str = "manifest.json";
const PARAMS: &str = "params.bin";
const OPTIM: &str = "optim.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into both `params.bin` and `optim.bin`.
    pub offset: u64,
    pub nbytes: u64,
    /// SHA-256 of the parameter bytes.
    pub checksum: String,
    /// SHA-256 of the accumulator bytes.
    pub optim_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub model: ModelConfig,
    pub config: Option<RunConfig>,
    pub epoch: u64,
    pub step: u64,
    pub rng: RngState,
    pub stream_cursors: [u64; 2],
    pub params: Vec<ParamEntry>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub state: TrainState,
}

fn le_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(v.iter().flat_map(|x| x.to_le_bytes()).collect())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `state` to the directory `path`, replacing it if present. The
/// directory is assembled under a temporary name and renamed into place.
pub fn save_checkpoint(
    state: &TrainState,
    model: &ModelConfig,
    config: Option<&RunConfig>,
    path: &Path,
) -> Result<()> {
    let mut params_blob = Vec::new();
    let mut optim_blob = Vec::new();
    let mut entries = Vec::with_capacity(state.params.len());
    for (name, var) in state.params.iter() {
        let acc = state.accumulator(name).ok_or_else(|| {
            Error::checkpoint(path, format!("parameter `{name}` has no optimizer accumulator"))
        })?;
        let p = le_bytes(var.as_tensor())?;
        let o = le_bytes(acc)?;
        entries.push(ParamEntry {
            name: name.clone(),
            shape: var.dims().to_vec(),
            dtype: "f32".into(),
            offset: params_blob.len() as u64,
            nbytes: p.len() as u64,
            checksum: sha256_hex(&p),
            optim_checksum: sha256_hex(&o),
        });
        params_blob.extend_from_slice(&p);
        optim_blob.extend_from_slice(&o);
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        model: model.clone(),
        config: config.cloned(),
        epoch: state.epoch,
        step: state.global_step,
        rng: RngState::capture(&state.rng),
        stream_cursors: state.stream_cursors,
        params: entries,
    };

    let tmp = temp_sibling(path);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = tmp.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    write(PARAMS, &params_blob)?;
    write(OPTIM, &optim_blob)?;
    write(MANIFEST, serde_json::to_string_pretty(&manifest)?.as_bytes())?;

    if path.exists() {
        let old = path.with_file_name(format!(
            ".{}.old-{}",
            path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            std::process::id()
        ));
        fs::rename(path, &old).map_err(|e| Error::io(path, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    } else {
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let mpath = path.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::checkpoint(path, format!("unreadable manifest: {e}")))?;
    if m.format != FORMAT {
        return Err(Error::checkpoint(path, format!("unknown format `{}`", m.format)));
    }
    Ok(m)
}

/// Lines describing how the manifest's parameter table differs from the
/// shapes `expected`; empty when they agree.
pub fn shape_diff(manifest: &Manifest, expected: &BTreeMap<String, Vec<usize>>) -> Vec<String> {
    let found: BTreeMap<&str, &Vec<usize>> =
        manifest.params.iter().map(|e| (e.name.as_str(), &e.shape)).collect();
    let mut out = Vec::new();
    for (name, shape) in expected {
        match found.get(name.as_str()) {
            None => out.push(format!("missing `{name}` (expected {shape:?})")),
            Some(s) if *s != shape => {
                out.push(format!("`{name}`: checkpoint {s:?}, model {shape:?}"))
            }
            _ => {}
        }
    }
    for name in found.keys() {
        if !expected.contains_key(*name) {
            out.push(format!("unexpected `{name}`"));
        }
    }
    out
}

fn read_blob(path: &Path, name: &str) -> Result<Vec<u8>> {
    let p = path.join(name);
    fs::read(&p).map_err(|e| Error::io(&p, e))
}

fn slice_entry<'a>(
    path: &Path,
    blob: &'a [u8],
    file: &str,
    e: &ParamEntry,
    checksum: &str,
) -> Result<&'a [u8]> {
    let end = e.offset + e.nbytes;
    let expected_bytes = e.shape.iter().product::<usize>() as u64 * 4;
    if e.dtype != "f32" || e.nbytes != expected_bytes {
        return Err(Error::checkpoint(
            path,
            format!("parameter `{}`: table entry is inconsistent with its shape", e.name),
        ));
    }
    if end > blob.len() as u64 {
        return Err(Error::checkpoint(
            path,
            format!(
                "{file} is truncated: parameter `{}` needs bytes {}..{end}, file has {}",
                e.name,
                e.offset,
                blob.len()
            ),
        ));
    }
    let bytes = &blob[e.offset as usize..end as usize];
    if sha256_hex(bytes) != checksum {
        return Err(Error::checkpoint(
            path,
            format!("{file}: checksum mismatch for parameter `{}`", e.name),
        ));
    }
    Ok(bytes)
}

fn tensor_from_le(bytes: &[u8], shape: &[usize]) -> Result<Tensor> {
    let v: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor::from_vec(v, shape, &Device::Cpu)?)
}

/// Loads a checkpoint using the model config recorded in its manifest.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(path)?;
    let model = manifest.model.clone();
    load_with(path, manifest, &model)
}

/// Loads a checkpoint into `expected`, rejecting it with a per-parameter
/// report when names or shapes differ.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let manifest = read_manifest(path)?;
    load_with(path, manifest, expected)
}

fn load_with(path: &Path, manifest: Manifest, model: &ModelConfig) -> Result<Checkpoint> {
    let expected = Networks::new(model)?.parameter_shapes();
    let diff = shape_diff(&manifest, &expected);
    if !diff.is_empty() {
        return Err(Error::checkpoint(
            path,
            format!("does not match the model:\n  {}", diff.join("\n  ")),
        ));
    }
    let params_blob = read_blob(path, PARAMS)?;
    let optim_blob = read_blob(path, OPTIM)?;
    let mut params = ParamStore::new(DType::F32);
    let mut accs = Vec::with_capacity(manifest.params.len());
    for e in &manifest.params {
        let p = slice_entry(path, &params_blob, PARAMS, e, &e.checksum)?;
        let o = slice_entry(path, &optim_blob, OPTIM, e, &e.optim_checksum)?;
        params.insert(e.name.clone(), tensor_from_le(p, &e.shape)?)?;
        accs.push((e.name.clone(), tensor_from_le(o, &e.shape)?));
    }
    let rng = manifest.rng.restore()?;
    let mut state = TrainState::from_params(params, rng)?;
    for (name, acc) in accs {
        let slot = state.accumulator_mut(&name).ok_or_else(|| {
            Error::checkpoint(path, format!("no optimizer owns parameter `{name}`"))
        })?;
        *slot = acc;
    }
    state.epoch = manifest.epoch;
    state.global_step = manifest.step;
    state.stream_cursors = manifest.stream_cursors;
    Ok(Checkpoint { manifest, state })
}

/// SHA-256 over the manifest and both blobs.
pub fn checkpoint_checksum(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for name in [MANIFEST, PARAMS, OPTIM] {
        h.update(read_blob(path, name)?);
    }
    Ok(hex::encode(h.finalize()))
}

/// `out_dir/checkpoints/epoch-NNNN`
pub fn checkpoint_path(out_dir: &Path, epoch: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("epoch-{epoch:04}"))
}
