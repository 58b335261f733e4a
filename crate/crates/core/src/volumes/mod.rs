//! Volumes, masks, intensity normalization, synthetic phantoms, dataset
//! splitting and 2.5D slice stacks.

mod io;
mod norm;
mod split;
mod stack;
mod synth;

pub use io::{
    load_dataset, load_mask, load_volume, save_dataset, save_mask, save_volume, sidecar_path, Dtype, Sidecar,
    IMAGES_DIR, LABELS_DIR,
};
pub use norm::{
    apply_normalization, compute_norm_stats, percentile, NormStats, CLIP_PERCENTILES, STD_EPS,
};
pub use split::{pixel_labeled_count_from_fraction, split_dataset, DatasetSplit};
pub use stack::{make_25d_stack, SliceStack};
pub use synth::{generate_background_volume, generate_synthetic_dataset, SynthConfig};

use crate::error::{Error, Result};
use crate::plane::Plane;

/// A scalar intensity volume stored in `(Z, Y, X)` C-order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    id: String,
    shape: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f32>,
}

/// A binary voxel mask paired with a [`Volume`] by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVolume {
    id: String,
    shape: [usize; 3],
    spacing: [FloatBits; 3],
    data: Vec<u8>,
}

/// `f64` spacing stored by bit pattern so masks stay `Eq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct FloatBits(u64);

fn check_shape(shape: [usize; 3], len: usize) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::field("shape", format!("all extents must be >= 1, got {shape:?}")));
    }
    let n = shape[0] * shape[1] * shape[2];
    if n != len {
        return Err(Error::Shape(format!(
            "shape {shape:?} holds {n} voxels, data has {len}"
        )));
    }
    Ok(())
}

fn check_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::field(
            "spacing",
            format!("components must be finite and > 0, got {spacing:?}"),
        ));
    }
    Ok(())
}

impl Volume {
    pub fn new(
        id: impl Into<String>,
        shape: [usize; 3],
        spacing: [f64; 3],
        data: Vec<f32>,
    ) -> Result<Self> {
        check_shape(shape, data.len())?;
        check_spacing(spacing)?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::field("data", format!("non-finite intensity at voxel {i}")));
        }
        Ok(Self {
            id: id.into(),
            shape,
            spacing,
            data,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn depth(&self) -> usize {
        self.shape[0]
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn slice_len(&self) -> usize {
        self.shape[1] * self.shape[2]
    }

    /// Raw pixels of slice `z`.
    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn plane(&self, z: usize) -> Plane<'_, f32> {
        Plane::new(self.slice(z), self.shape[1], self.shape[2]).expect("slice length matches shape")
    }

    /// Same geometry and id, new intensities.
    pub(crate) fn with_data(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            id: self.id.clone(),
            shape: self.shape,
            spacing: self.spacing,
            data,
        }
    }
}

impl MaskVolume {
    pub fn new(
        id: impl Into<String>,
        shape: [usize; 3],
        spacing: [f64; 3],
        data: Vec<u8>,
    ) -> Result<Self> {
        check_shape(shape, data.len())?;
        check_spacing(spacing)?;
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::field("data", format!("mask value {} at voxel {i}", data[i])));
        }
        Ok(Self {
            id: id.into(),
            shape,
            spacing: spacing.map(|s| FloatBits(s.to_bits())),
            data,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn depth(&self) -> usize {
        self.shape[0]
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing.map(|s| f64::from_bits(s.0))
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn slice(&self, z: usize) -> &[u8] {
        let n = self.shape[1] * self.shape[2];
        &self.data[z * n..(z + 1) * n]
    }

    pub fn plane(&self, z: usize) -> Plane<'_, u8> {
        Plane::new(self.slice(z), self.shape[1], self.shape[2]).expect("slice length matches shape")
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Errors unless `self` and `v` describe the same volume.
    pub fn check_pairs_with(&self, v: &Volume) -> Result<()> {
        if self.id != v.id() {
            return Err(Error::Shape(format!(
                "mask `{}` paired with volume `{}`",
                self.id,
                v.id()
            )));
        }
        if self.shape != v.shape() {
            return Err(Error::Shape(format!(
                "mask `{}` has shape {:?}, volume has {:?}",
                self.id,
                self.shape,
                v.shape()
            )));
        }
        Ok(())
    }
}
