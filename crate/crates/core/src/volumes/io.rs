//! Raw volume files: `<id>.vol` little-endian payload in `(Z, Y, X)` C-order,
//! described by a JSON sidecar `<id>.vol.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MaskVolume, Volume};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Float32,
    Uint8,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::Float32 => 4,
            Dtype::Uint8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub shape: [usize; 3],
    pub dtype: Dtype,
    pub spacing: [f64; 3],
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn id_from_path(path: &Path) -> Result<String> {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(|n| n.strip_suffix(".vol").unwrap_or(n).to_string())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            msg: "cannot derive an id from the file name".into(),
        })
}

fn read_raw(path: &Path, expect: Dtype) -> Result<(Sidecar, Vec<u8>)> {
    let side_path = sidecar_path(path);
    let side_text = match fs::read_to_string(&side_path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::Format {
                path: side_path,
                msg: "missing sidecar".into(),
            })
        }
        Err(e) => return Err(Error::io(side_path, e)),
    };
    let side: Sidecar = serde_json::from_str(&side_text).map_err(|e| Error::Format {
        path: side_path.clone(),
        msg: e.to_string(),
    })?;
    if side.dtype != expect {
        return Err(Error::field(
            "dtype",
            format!("expected {expect:?}, sidecar says {:?}", side.dtype),
        ));
    }
    let payload = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = side.shape.iter().product::<usize>() * side.dtype.width();
    if payload.len() != expected {
        return Err(Error::PayloadSize {
            expected,
            found: payload.len(),
        });
    }
    Ok((side, payload))
}

fn write_raw(path: &Path, side: &Sidecar, payload: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    let side_path = sidecar_path(path);
    let text = serde_json::to_string_pretty(side)?;
    fs::write(&side_path, text).map_err(|e| Error::io(side_path, e))
}

/// Loads a float32 volume. The id is the file name without `.vol`.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let (side, payload) = read_raw(path, Dtype::Float32)?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Volume::new(id_from_path(path)?, side.shape, side.spacing, data)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<MaskVolume> {
    let path = path.as_ref();
    let (side, payload) = read_raw(path, Dtype::Uint8)?;
    MaskVolume::new(id_from_path(path)?, side.shape, side.spacing, payload)
}

/// Writes `<dir>/<id>.vol` and its sidecar; returns the payload path.
pub fn save_volume(v: &Volume, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let path = dir.as_ref().join(format!("{}.vol", v.id()));
    let payload: Vec<u8> = v.data().iter().flat_map(|x| x.to_le_bytes()).collect();
    let side = Sidecar {
        shape: v.shape(),
        dtype: Dtype::Float32,
        spacing: v.spacing(),
    };
    write_raw(&path, &side, &payload)?;
    Ok(path)
}

pub fn save_mask(m: &MaskVolume, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let path = dir.as_ref().join(format!("{}.vol", m.id()));
    let side = Sidecar {
        shape: m.shape(),
        dtype: Dtype::Uint8,
        spacing: m.spacing(),
    };
    write_raw(&path, &side, m.data())?;
    Ok(path)
}

/// Image subdirectory of a dataset directory.
pub const IMAGES_DIR: &str = "images";
/// Label subdirectory; masks share the image file names.
pub const LABELS_DIR: &str = "labels";

/// Writes `<dir>/images/<id>.vol` and, when given, `<dir>/labels/<id>.vol`.
pub fn save_dataset(dir: impl AsRef<Path>, volumes: &[Volume], masks: &[MaskVolume]) -> Result<()> {
    let dir = dir.as_ref();
    for v in volumes {
        save_volume(v, dir.join(IMAGES_DIR))?;
    }
    for m in masks {
        save_mask(m, dir.join(LABELS_DIR))?;
    }
    Ok(())
}

fn vol_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "vol") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every image under `<dir>/images` in file-name order, and the mask of
/// the same name for each when `<dir>/labels` exists.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Vec<Volume>, Vec<MaskVolume>)> {
    let dir = dir.as_ref();
    let volumes = vol_files(&dir.join(IMAGES_DIR))?
        .into_iter()
        .map(load_volume)
        .collect::<Result<Vec<_>>>()?;
    let labels = dir.join(LABELS_DIR);
    let masks = if labels.is_dir() {
        volumes
            .iter()
            .map(|v| load_mask(labels.join(format!("{}.vol", v.id()))))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok((volumes, masks))
}
