//! Overlapping `p × p` patch grids over a cropped box, patch labels from
//! voxel masks, and the patch training set of the box corrector.
//!
//! Patches are laid out from the crop origin with stride `p/2`. When the
//! extent is not a whole number of strides past the first patch, one extra
//! patch is placed flush against the far edge, so the grid always covers the
//! crop. A crop narrower than `p` along an axis gets a single position on that
//! axis; its pixels are reflection-padded up to `p` and the grid is flagged
//! `padded`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boxgeom::{Box2D, BoxSeries};
use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::volumes::{MaskVolume, Volume};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    crop: Box2D,
    p: usize,
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
    padded: bool,
    labels: Vec<u8>,
}

/// Patch start offsets along one axis of length `extent`.
pub fn axis_offsets(extent: usize, p: usize) -> Vec<usize> {
    if extent <= p {
        return vec![0];
    }
    let stride = p / 2;
    let mut v: Vec<usize> = (0..=(extent - p) / stride).map(|i| i * stride).collect();
    if *v.last().unwrap() != extent - p {
        v.push(extent - p);
    }
    v
}

pub fn build_grid(crop: Box2D, p: usize) -> Result<PatchGrid> {
    if p < 4 || p % 2 != 0 {
        return Err(Error::invalid(format!("patch size must be even and >= 4, got {p}")));
    }
    let row_offsets = axis_offsets(crop.height(), p);
    let col_offsets = axis_offsets(crop.width(), p);
    let labels = vec![0; row_offsets.len() * col_offsets.len()];
    Ok(PatchGrid {
        crop,
        p,
        padded: crop.height() < p || crop.width() < p,
        row_offsets,
        col_offsets,
        labels,
    })
}

impl PatchGrid {
    pub fn crop(&self) -> Box2D {
        self.crop
    }

    pub fn patch_size(&self) -> usize {
        self.p
    }

    pub fn stride(&self) -> usize {
        self.p / 2
    }

    pub fn rows(&self) -> usize {
        self.row_offsets.len()
    }

    pub fn cols(&self) -> usize {
        self.col_offsets.len()
    }

    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn padded(&self) -> bool {
        self.padded
    }

    /// Extent of cell `(i, j)` in slice coordinates, clipped to the crop on
    /// padded axes.
    pub fn footprint(&self, i: usize, j: usize) -> Box2D {
        let r0 = self.crop.r0() + self.row_offsets[i];
        let c0 = self.crop.c0() + self.col_offsets[j];
        Box2D::new(
            r0,
            c0,
            (r0 + self.p).min(self.crop.r1()),
            (c0 + self.p).min(self.crop.c1()),
        )
        .expect("footprint inside a nonempty crop")
    }

    /// Footprints in row-major cell order.
    pub fn footprints(&self) -> Vec<Box2D> {
        (0..self.rows())
            .flat_map(|i| (0..self.cols()).map(move |j| (i, j)))
            .map(|(i, j)| self.footprint(i, j))
            .collect()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize, j: usize) -> u8 {
        self.labels[i * self.cols() + j]
    }

    pub fn set_labels(&mut self, labels: Vec<u8>) -> Result<()> {
        if labels.len() != self.len() || labels.iter().any(|&l| l > 1) {
            return Err(Error::Shape(format!(
                "{} binary labels expected for a {}x{} grid",
                self.len(),
                self.rows(),
                self.cols()
            )));
        }
        self.labels = labels;
        Ok(())
    }

    /// The `p × p` pixels of cell `(i, j)`, reflection-padded on short axes.
    pub fn extract<T: Copy>(&self, plane: Plane<'_, T>, i: usize, j: usize) -> Vec<T> {
        let fp = self.footprint(i, j);
        let rows = padded_indices(fp.r0(), fp.height(), self.p);
        let cols = padded_indices(fp.c0(), fp.width(), self.p);
        let mut out = Vec::with_capacity(self.p * self.p);
        for &r in &rows {
            let row = plane.row(r);
            out.extend(cols.iter().map(|&c| row[c]));
        }
        out
    }
}

/// `p` source indices for a segment `[start, start + len)`, mirrored
/// symmetrically (edge pixel repeated) on both sides when `len < p`.
fn padded_indices(start: usize, len: usize, p: usize) -> Vec<usize> {
    if len >= p {
        return (start..start + p).collect();
    }
    let before = (p - len) / 2;
    let period = 2 * len as isize;
    (0..p as isize)
        .map(|k| {
            let mut t = (k - before as isize).rem_euclid(period);
            if t >= len as isize {
                t = period - 1 - t;
            }
            start + t as usize
        })
        .collect()
}

/// 1 iff foreground strictly exceeds half of the footprint area.
pub fn label_patch(footprint: &Box2D, slice_mask: Plane<'_, u8>) -> u8 {
    let count: usize = (footprint.r0()..footprint.r1())
        .map(|r| {
            slice_mask.row(r)[footprint.c0()..footprint.c1()]
                .iter()
                .filter(|&&v| v != 0)
                .count()
        })
        .sum();
    (2 * count > footprint.area()) as u8
}

/// Label of an extracted (possibly padded) mask patch.
fn label_pixels(mask_patch: &[u8]) -> u8 {
    let count = mask_patch.iter().filter(|&&v| v != 0).count();
    (2 * count > mask_patch.len()) as u8
}

/// Ground-truth labels for every cell of `grid`.
pub fn label_grid(grid: &PatchGrid, slice_mask: Plane<'_, u8>) -> Vec<u8> {
    (0..grid.rows())
        .flat_map(|i| (0..grid.cols()).map(move |j| (i, j)))
        .map(|(i, j)| {
            if grid.padded() {
                label_pixels(&grid.extract(slice_mask, i, j))
            } else {
                label_patch(&grid.footprint(i, j), slice_mask)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSource {
    pub volume_id: String,
    pub z: usize,
    pub footprint: Box2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    /// Row-major `p × p` intensities.
    pub pixels: Vec<f32>,
    pub label: u8,
    pub source: PatchSource,
}

/// Every grid patch of every boxed slice, labeled from the masks, ordered by
/// (volume id, z, grid row, grid col).
pub fn build_patch_dataset(
    volumes: &[Volume],
    masks: &[MaskVolume],
    series: &[BoxSeries],
    p: usize,
) -> Result<Vec<PatchSample>> {
    if volumes.len() != masks.len() || volumes.len() != series.len() {
        return Err(Error::Shape(format!(
            "{} volumes, {} masks, {} box series",
            volumes.len(),
            masks.len(),
            series.len()
        )));
    }
    let mut order: Vec<usize> = (0..volumes.len()).collect();
    order.sort_by(|&a, &b| volumes[a].id().cmp(volumes[b].id()));
    let mut out = Vec::new();
    for idx in order {
        let (v, m, s) = (&volumes[idx], &masks[idx], &series[idx]);
        m.check_pairs_with(v)?;
        if s.volume_id != v.id() {
            return Err(Error::Shape(format!(
                "box series `{}` paired with volume `{}`",
                s.volume_id,
                v.id()
            )));
        }
        let [depth, rows, cols] = v.shape();
        s.check_fits(depth, rows, cols)?;
        for (z, crop) in s.entries.iter().enumerate() {
            let Some(crop) = crop else { continue };
            let grid = build_grid(*crop, p)?;
            let labels = label_grid(&grid, m.plane(z));
            for i in 0..grid.rows() {
                for j in 0..grid.cols() {
                    out.push(PatchSample {
                        pixels: grid.extract(v.plane(z), i, j),
                        label: labels[i * grid.cols() + j],
                        source: PatchSource {
                            volume_id: v.id().to_string(),
                            z,
                            footprint: grid.footprint(i, j),
                        },
                    });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct PatchIndex {
    p: usize,
    count: usize,
    sources: Vec<PatchSource>,
}

const PIXELS_FILE: &str = "patches.f32";
const LABELS_FILE: &str = "labels.u8";
const INDEX_FILE: &str = "index.json";

/// Writes `patches.f32` (stacked little-endian patches), `labels.u8` and
/// `index.json` into `dir`.
pub fn save_patch_dataset(samples: &[PatchSample], p: usize, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut pixels = Vec::with_capacity(samples.len() * p * p * 4);
    for s in samples {
        if s.pixels.len() != p * p {
            return Err(Error::Shape(format!("patch of {} pixels, expected {}", s.pixels.len(), p * p)));
        }
        pixels.extend(s.pixels.iter().flat_map(|x| x.to_le_bytes()));
    }
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let index = PatchIndex {
        p,
        count: samples.len(),
        sources: samples.iter().map(|s| s.source.clone()).collect(),
    };
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(path, e))
    };
    write(PIXELS_FILE, &pixels)?;
    write(LABELS_FILE, &labels)?;
    write(INDEX_FILE, serde_json::to_string(&index)?.as_bytes())
}

pub fn load_patch_dataset(dir: impl AsRef<Path>) -> Result<(Vec<PatchSample>, usize)> {
    let dir = dir.as_ref();
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(|e| Error::io(path, e))
    };
    let index: PatchIndex = serde_json::from_slice(&read(INDEX_FILE)?)?;
    let pixels = read(PIXELS_FILE)?;
    let labels = read(LABELS_FILE)?;
    let n = index.p * index.p;
    if index.sources.len() != index.count || labels.len() != index.count {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            msg: "label/index count mismatch".into(),
        });
    }
    if pixels.len() != index.count * n * 4 {
        return Err(Error::PayloadSize {
            expected: index.count * n * 4,
            found: pixels.len(),
        });
    }
    let samples = index
        .sources
        .into_iter()
        .zip(labels)
        .zip(pixels.chunks_exact(n * 4))
        .map(|((source, label), raw)| PatchSample {
            pixels: raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
            label,
            source,
        })
        .collect();
    Ok((samples, index.p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(r0: usize, c0: usize, r1: usize, c1: usize) -> Box2D {
        Box2D::new(r0, c0, r1, c1).unwrap()
    }

    #[test]
    fn grid_64_by_16_is_seven_by_seven() {
        let g = build_grid(bx(0, 0, 64, 64), 16).unwrap();
        assert_eq!((g.rows(), g.cols()), (7, 7));
        assert_eq!(axis_offsets(64, 16), vec![0, 8, 16, 24, 32, 40, 48]);
        assert!(!g.padded());
    }

    #[test]
    fn flush_edge_patch() {
        assert_eq!(axis_offsets(20, 16), vec![0, 4]);
        let g = build_grid(bx(3, 5, 23, 25), 16).unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g.footprint(1, 1), bx(7, 9, 23, 25));
    }

    #[test]
    fn crop_equal_to_patch() {
        let g = build_grid(bx(2, 2, 18, 18), 16).unwrap();
        assert_eq!(g.footprints(), vec![bx(2, 2, 18, 18)]);
    }

    #[test]
    fn small_crop_is_padded_by_reflection() {
        let crop = bx(1, 1, 4, 13);
        let g = build_grid(crop, 8).unwrap();
        assert!(g.padded());
        assert_eq!((g.rows(), g.cols()), (1, 2));
        assert_eq!(g.footprint(0, 1), bx(1, 5, 4, 13));
        assert_eq!(padded_indices(10, 3, 8), vec![11, 10, 10, 11, 12, 12, 11, 10]);
        let data: Vec<usize> = (0..10 * 16).collect();
        let patch = g.extract(Plane::new(&data, 10, 16).unwrap(), 0, 1);
        assert_eq!(patch.len(), 64);
        assert!(patch.iter().all(|&v| crop.contains_pixel(v / 16, v % 16)));
    }

    #[test]
    fn rejects_odd_or_tiny_patch() {
        assert!(build_grid(bx(0, 0, 32, 32), 15).is_err());
        assert!(build_grid(bx(0, 0, 32, 32), 2).is_err());
    }

    #[test]
    fn strict_majority_labels() {
        let fp = bx(0, 0, 16, 16);
        let mut d = vec![0u8; 256];
        assert_eq!(label_patch(&fp, Plane::new(&d, 16, 16).unwrap()), 0);
        for v in d.iter_mut().take(128) {
            *v = 1;
        }
        assert_eq!(label_patch(&fp, Plane::new(&d, 16, 16).unwrap()), 0);
        d[200] = 1;
        assert_eq!(label_patch(&fp, Plane::new(&d, 16, 16).unwrap()), 1);
        assert_eq!(label_patch(&fp, Plane::new(&[1u8; 256], 16, 16).unwrap()), 1);
    }

    fn slab(id: &str) -> (Volume, MaskVolume) {
        let mut mask = vec![0u8; 2 * 64 * 64];
        for r in 10..40 {
            for c in 20..50 {
                mask[64 * 64 + r * 64 + c] = 1;
            }
        }
        let data = mask.iter().map(|&m| m as f32).collect();
        (
            Volume::new(id, [2, 64, 64], [1.0; 3], data).unwrap(),
            MaskVolume::new(id, [2, 64, 64], [1.0; 3], mask).unwrap(),
        )
    }

    #[test]
    fn dataset_counts_and_recount() {
        let (v, m) = slab("a");
        let s = BoxSeries::new("a", vec![None, Some(bx(0, 0, 64, 64))]);
        let ds = build_patch_dataset(&[v], &[m.clone()], &[s], 16).unwrap();
        assert_eq!(ds.len(), 49);
        for smp in &ds {
            let fp = smp.source.footprint;
            let mut fg = 0;
            for r in fp.r0()..fp.r1() {
                for c in fp.c0()..fp.c1() {
                    fg += m.slice(1)[r * 64 + c] as usize;
                }
            }
            assert_eq!(smp.label, (fg * 2 > 256) as u8);
            assert_eq!(smp.pixels.iter().filter(|&&x| x == 1.0).count(), fg);
        }
    }

    #[test]
    fn dataset_rejects_id_mismatch() {
        let (v, m) = slab("a");
        let s = BoxSeries::new("b", vec![None, None]);
        assert!(build_patch_dataset(&[v], &[m], &[s], 16).is_err());
    }

    #[test]
    fn dataset_directory_round_trip() {
        let (v, m) = slab("a");
        let s = BoxSeries::new("a", vec![None, Some(bx(5, 5, 45, 60))]);
        let ds = build_patch_dataset(&[v], &[m], &[s], 16).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_patch_dataset(&ds, 16, dir.path()).unwrap();
        let (back, p) = load_patch_dataset(dir.path()).unwrap();
        assert_eq!(p, 16);
        assert_eq!(back, ds);
    }

    proptest::proptest! {
        #[test]
        fn label_depends_only_on_count(bits in proptest::collection::vec(0u8..2, 64), seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let fp = bx(0, 0, 8, 8);
            let mut shuffled = bits.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            proptest::prop_assert_eq!(
                label_patch(&fp, Plane::new(&bits, 8, 8).unwrap()),
                label_patch(&fp, Plane::new(&shuffled, 8, 8).unwrap())
            );
        }
    }
}
