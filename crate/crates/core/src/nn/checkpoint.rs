//! Binary weight files with a JSON sidecar.
//!
//! Layout (little-endian): magic `TBXCKPT\0`, `u32` version, `u32` tensor
//! count, then per tensor `u32` name length, UTF-8 name, `u32` rank, `u64`
//! dims, `f32` values. The sidecar `<file>.json` carries the model kind, its
//! configuration, the normalization fingerprint, and the SHA-256 of the
//! binary.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Param, Scalar};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TBXCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub kind: String,
    pub config: serde_json::Value,
    pub norm_stats_id: String,
    pub training_hash: String,
    pub num_params: usize,
}

fn encode<T: Scalar>(params: &[&Param<T>]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &d in &p.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &p.value {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated weight file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    crate::volumes::sidecar_path(path)
}

pub fn hash_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes weights and sidecar; returns the metadata written.
pub fn write_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    kind: &str,
    config: serde_json::Value,
    norm_stats_id: &str,
    params: &[&Param<T>],
) -> Result<CheckpointMeta> {
    let path = path.as_ref();
    let bytes = encode(params);
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_VERSION,
        kind: kind.to_string(),
        config,
        norm_stats_id: norm_stats_id.to_string(),
        training_hash: hash_hex(&bytes),
        num_params: params.iter().map(|p| p.value.len()).sum(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar(path);
    fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(side, e))?;
    Ok(meta)
}

/// Reads metadata and copies stored values into `params`, matching by name
/// and shape.
pub fn read_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    expected_kind: &str,
    params: &mut [&mut Param<T>],
) -> Result<CheckpointMeta> {
    let path = path.as_ref();
    let side = sidecar(path);
    let meta: CheckpointMeta = serde_json::from_str(
        &fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?,
    )?;
    read_weights(path, &meta, expected_kind, params)?;
    Ok(meta)
}

/// Only the sidecar, to rebuild the architecture before loading weights.
pub(crate) fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let side = sidecar(path);
    Ok(serde_json::from_str(
        &fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?,
    )?)
}

pub(crate) fn read_weights<T: Scalar>(
    path: &Path,
    meta: &CheckpointMeta,
    expected_kind: &str,
    params: &mut [&mut Param<T>],
) -> Result<()> {
    if meta.kind != expected_kind {
        return Err(Error::Checkpoint(format!(
            "expected a `{expected_kind}` checkpoint, found `{}`",
            meta.kind
        )));
    }
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            meta.format_version
        )));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if hash_hex(&bytes) != meta.training_hash {
        return Err(Error::Checkpoint("weight file does not match its metadata hash".into()));
    }
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported weight version {version}")));
    }
    let count = r.u32()? as usize;
    if count != params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} tensors, model has {}",
            params.len()
        )));
    }
    for p in params.iter_mut() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if name != p.name || shape != p.shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` {shape:?} does not match model tensor `{}` {:?}",
                p.name, p.shape
            )));
        }
        let raw = r.take(p.value.len() * 4)?;
        for (v, b) in p.value.iter_mut().zip(raw.chunks_exact(4)) {
            *v = T::from_f64(f32::from_le_bytes(b.try_into().unwrap()) as f64);
        }
    }
    Ok(())
}
