//! Half-open integer boxes: `[r0, r1) × [c0, c1)` in a slice, and
//! `[z0, z1) × [r0, r1) × [c0, c1)` in a volume.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::volumes::MaskVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[usize; 4]", into = "[usize; 4]")]
pub struct Box2D {
    r0: usize,
    c0: usize,
    r1: usize,
    c1: usize,
}

impl Box2D {
    pub fn new(r0: usize, c0: usize, r1: usize, c1: usize) -> Result<Self> {
        if r0 >= r1 || c0 >= c1 {
            return Err(Error::InvalidBox(format!(
                "rows [{r0},{r1}) cols [{c0},{c1}) is empty"
            )));
        }
        Ok(Self { r0, c0, r1, c1 })
    }

    pub fn r0(&self) -> usize {
        self.r0
    }
    pub fn c0(&self) -> usize {
        self.c0
    }
    pub fn r1(&self) -> usize {
        self.r1
    }
    pub fn c1(&self) -> usize {
        self.c1
    }

    pub fn height(&self) -> usize {
        self.r1 - self.r0
    }

    pub fn width(&self) -> usize {
        self.c1 - self.c0
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn contains(&self, other: &Box2D) -> bool {
        self.r0 <= other.r0 && self.c0 <= other.c0 && other.r1 <= self.r1 && other.c1 <= self.c1
    }

    pub fn contains_pixel(&self, r: usize, c: usize) -> bool {
        (self.r0..self.r1).contains(&r) && (self.c0..self.c1).contains(&c)
    }

    pub fn fits_in(&self, rows: usize, cols: usize) -> bool {
        self.r1 <= rows && self.c1 <= cols
    }

    pub fn intersection(&self, other: &Box2D) -> Option<Box2D> {
        Box2D::new(
            self.r0.max(other.r0),
            self.c0.max(other.c0),
            self.r1.min(other.r1),
            self.c1.min(other.c1),
        )
        .ok()
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &Box2D) -> Box2D {
        Box2D {
            r0: self.r0.min(other.r0),
            c0: self.c0.min(other.c0),
            r1: self.r1.max(other.r1),
            c1: self.c1.max(other.c1),
        }
    }

    pub fn to_array(self) -> [usize; 4] {
        [self.r0, self.c0, self.r1, self.c1]
    }
}

impl TryFrom<[usize; 4]> for Box2D {
    type Error = Error;
    fn try_from(a: [usize; 4]) -> Result<Self> {
        Box2D::new(a[0], a[1], a[2], a[3])
    }
}

impl From<Box2D> for [usize; 4] {
    fn from(b: Box2D) -> Self {
        b.to_array()
    }
}

impl fmt::Display for Box2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})x[{},{})", self.r0, self.r1, self.c0, self.c1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Box3D {
    z0: usize,
    r0: usize,
    c0: usize,
    z1: usize,
    r1: usize,
    c1: usize,
}

impl Box3D {
    pub fn new(z0: usize, r0: usize, c0: usize, z1: usize, r1: usize, c1: usize) -> Result<Self> {
        if z0 >= z1 || r0 >= r1 || c0 >= c1 {
            return Err(Error::InvalidBox(format!(
                "z [{z0},{z1}) rows [{r0},{r1}) cols [{c0},{c1}) is empty"
            )));
        }
        Ok(Self {
            z0,
            r0,
            c0,
            z1,
            r1,
            c1,
        })
    }

    pub fn z_range(&self) -> std::ops::Range<usize> {
        self.z0..self.z1
    }

    /// The in-plane rectangle shared by every covered slice.
    pub fn footprint(&self) -> Box2D {
        Box2D {
            r0: self.r0,
            c0: self.c0,
            r1: self.r1,
            c1: self.c1,
        }
    }

    pub fn to_array(self) -> [usize; 6] {
        [self.z0, self.r0, self.c0, self.z1, self.r1, self.c1]
    }
}

/// Minimal box around the nonzero pixels; `None` on an empty slice.
pub fn tight_box_2d(slice_mask: Plane<'_, u8>) -> Option<Box2D> {
    let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
    for r in 0..slice_mask.rows() {
        let row = slice_mask.row(r);
        let Some(first) = row.iter().position(|&v| v != 0) else {
            continue;
        };
        let last = row.iter().rposition(|&v| v != 0).unwrap_or(first);
        r0 = r0.min(r);
        r1 = r + 1;
        c0 = c0.min(first);
        c1 = c1.max(last + 1);
    }
    (r0 != usize::MAX).then_some(Box2D { r0, c0, r1, c1 })
}

pub fn tight_box_3d(mask: &MaskVolume) -> Result<Box3D> {
    let mut acc: Option<(usize, usize, Box2D)> = None;
    for z in 0..mask.depth() {
        if let Some(b) = tight_box_2d(mask.plane(z)) {
            acc = Some(match acc {
                None => (z, z + 1, b),
                Some((z0, _, h)) => (z0, z + 1, h.hull(&b)),
            });
        }
    }
    let (z0, z1, b) = acc.ok_or_else(|| {
        Error::EmptyForeground(format!("mask `{}` has no foreground voxels", mask.id()))
    })?;
    Box3D::new(z0, b.r0, b.c0, z1, b.r1, b.c1)
}

pub fn slice_box_3d(b: &Box3D, z: usize) -> Option<Box2D> {
    b.z_range().contains(&z).then(|| b.footprint())
}

/// Intersection over union of the two pixel sets.
pub fn iou_2d(a: &Box2D, b: &Box2D) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Every row and every column of `b` holds at least one foreground pixel
/// inside `b`.
pub fn is_tight(b: &Box2D, slice_mask: Plane<'_, u8>) -> bool {
    if !b.fits_in(slice_mask.rows(), slice_mask.cols()) {
        return false;
    }
    let mut col_hit = vec![false; b.width()];
    for r in b.r0..b.r1 {
        let row = &slice_mask.row(r)[b.c0..b.c1];
        let mut row_hit = false;
        for (hit, &v) in col_hit.iter_mut().zip(row) {
            if v != 0 {
                *hit = true;
                row_hit = true;
            }
        }
        if !row_hit {
            return false;
        }
    }
    col_hit.into_iter().all(|h| h)
}

/// Per-side growth in pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Margin {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl Margin {
    pub fn uniform(m: usize) -> Self {
        Self {
            top: m,
            left: m,
            bottom: m,
            right: m,
        }
    }
}

/// Grows `b` by `margin`, clipped to a `rows × cols` slice.
pub fn inflate_box(b: &Box2D, margin: Margin, bounds: (usize, usize)) -> Box2D {
    let (rows, cols) = bounds;
    Box2D {
        r0: b.r0.saturating_sub(margin.top),
        c0: b.c0.saturating_sub(margin.left),
        r1: (b.r1 + margin.bottom).min(rows).max(b.r0.saturating_sub(margin.top) + 1),
        c1: (b.c1 + margin.right).min(cols).max(b.c0.saturating_sub(margin.left) + 1),
    }
}

/// Per-slice annotation track of one volume; index = slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxSeries {
    pub volume_id: String,
    pub entries: Vec<Option<Box2D>>,
}

#[derive(Serialize, Deserialize)]
struct SeriesRecord {
    z: usize,
    #[serde(rename = "box")]
    bbox: Option<Box2D>,
}

impl BoxSeries {
    pub fn new(volume_id: impl Into<String>, entries: Vec<Option<Box2D>>) -> Self {
        Self {
            volume_id: volume_id.into(),
            entries,
        }
    }

    pub fn empty(volume_id: impl Into<String>, depth: usize) -> Self {
        Self::new(volume_id, vec![None; depth])
    }

    /// Tight 2D box of every slice of the mask.
    pub fn tight_from_mask(mask: &MaskVolume) -> Self {
        let entries = (0..mask.depth()).map(|z| tight_box_2d(mask.plane(z))).collect();
        Self::new(mask.id(), entries)
    }

    /// Cross-sections of a 3D box over `depth` slices.
    pub fn from_box_3d(volume_id: impl Into<String>, b: &Box3D, depth: usize) -> Self {
        Self::new(volume_id, (0..depth).map(|z| slice_box_3d(b, z)).collect())
    }

    /// Cross-sections of the tight 3D box of the mask.
    pub fn sliced_from_mask(mask: &MaskVolume) -> Result<Self> {
        Ok(Self::from_box_3d(mask.id(), &tight_box_3d(mask)?, mask.depth()))
    }

    pub fn depth(&self) -> usize {
        self.entries.len()
    }

    pub fn present(&self) -> usize {
        self.entries.iter().flatten().count()
    }

    /// Errors if any box exceeds a `rows × cols` slice or depth differs.
    pub fn check_fits(&self, depth: usize, rows: usize, cols: usize) -> Result<()> {
        if self.depth() != depth {
            return Err(Error::Shape(format!(
                "series `{}` has {} slices, volume has {depth}",
                self.volume_id,
                self.depth()
            )));
        }
        for (z, b) in self.entries.iter().enumerate() {
            if let Some(b) = b.filter(|b| !b.fits_in(rows, cols)) {
                return Err(Error::InvalidBox(format!(
                    "slice {z} of `{}`: {b} exceeds {rows}x{cols}",
                    self.volume_id
                )));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (z, b) in self.entries.iter().enumerate() {
            let rec = SeriesRecord { z, bbox: *b };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses one record per slice; `z` must run over `0..n` exactly once.
    pub fn from_jsonl(volume_id: impl Into<String>, reader: impl BufRead) -> Result<Self> {
        let volume_id = volume_id.into();
        let mut recs: Vec<SeriesRecord> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(format!("<{volume_id}>"), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SeriesRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
                path: format!("<{volume_id}> line {}", i + 1).into(),
                msg: e.to_string(),
            })?;
            recs.push(rec);
        }
        let mut entries = vec![None; recs.len()];
        let mut seen = vec![false; recs.len()];
        for rec in recs {
            if rec.z >= entries.len() || seen[rec.z] {
                return Err(Error::field(
                    "z",
                    format!("slice index {} is duplicated or out of 0..{}", rec.z, entries.len()),
                ));
            }
            seen[rec.z] = true;
            entries[rec.z] = rec.bbox;
        }
        Ok(Self { volume_id, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// Loads a series; the volume id is the file name up to its first `.`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let id = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.split('.').next())
            .unwrap_or_default()
            .to_string();
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(id, BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plane_from(rows: usize, cols: usize, on: &[(usize, usize)]) -> Vec<u8> {
        let mut d = vec![0u8; rows * cols];
        for &(r, c) in on {
            d[r * cols + c] = 1;
        }
        d
    }

    fn bx(r0: usize, c0: usize, r1: usize, c1: usize) -> Box2D {
        Box2D::new(r0, c0, r1, c1).unwrap()
    }

    #[test]
    fn tight_box_of_two_pixels() {
        let d = plane_from(6, 8, &[(1, 2), (3, 5)]);
        let b = tight_box_2d(Plane::new(&d, 6, 8).unwrap()).unwrap();
        assert_eq!(b, bx(1, 2, 4, 6));
    }

    #[test]
    fn tight_box_of_empty_and_full() {
        let d = vec![0u8; 12];
        assert_eq!(tight_box_2d(Plane::new(&d, 3, 4).unwrap()), None);
        let d = vec![1u8; 12];
        assert_eq!(tight_box_2d(Plane::new(&d, 3, 4).unwrap()), Some(bx(0, 0, 3, 4)));
    }

    #[test]
    fn tight_box_3d_examples() {
        let mut d = vec![0u8; 6 * 4 * 9];
        d[(4 * 4 + 2) * 9 + 7] = 1;
        d[0] = 1;
        let m = MaskVolume::new("m", [6, 4, 9], [1.0; 3], d).unwrap();
        assert_eq!(tight_box_3d(&m).unwrap().to_array(), [0, 0, 0, 5, 3, 8]);

        let mut d = vec![0u8; 27];
        d[(1 * 3 + 2) * 3 + 1] = 1;
        let m = MaskVolume::new("m", [3, 3, 3], [1.0; 3], d).unwrap();
        assert_eq!(tight_box_3d(&m).unwrap().to_array(), [1, 2, 1, 2, 3, 2]);

        let m = MaskVolume::new("m", [3, 3, 3], [1.0; 3], vec![0; 27]).unwrap();
        assert!(tight_box_3d(&m).is_err());
    }

    #[test]
    fn slicing_is_half_open_and_constant() {
        let b = Box3D::new(2, 1, 1, 5, 4, 6).unwrap();
        assert_eq!(slice_box_3d(&b, 2), Some(bx(1, 1, 4, 6)));
        assert_eq!(slice_box_3d(&b, 5), None);
        assert_eq!(slice_box_3d(&b, 1), None);
        let s = BoxSeries::from_box_3d("v", &b, 8);
        let present: Vec<_> = s.entries.iter().flatten().collect();
        assert_eq!(present.len(), 3);
        assert!(present.iter().all(|p| **p == bx(1, 1, 4, 6)));
    }

    #[test]
    fn iou_examples() {
        let a = bx(0, 0, 4, 4);
        assert_eq!(iou_2d(&a, &a), 1.0);
        assert_eq!(iou_2d(&a, &bx(4, 0, 6, 4)), 0.0);
        assert!((iou_2d(&a, &bx(2, 2, 6, 6)) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn tightness_examples() {
        let d = plane_from(5, 5, &[(1, 1), (1, 2), (2, 2), (3, 2), (3, 3)]);
        let p = Plane::new(&d, 5, 5).unwrap();
        let t = tight_box_2d(p).unwrap();
        assert!(is_tight(&t, p));
        assert!(!is_tight(&inflate_box(&t, Margin::uniform(1), (5, 5)), p));

        let mut d = vec![0u8; 25];
        for r in 1..4 {
            for c in 0..2 {
                d[r * 5 + c] = 1;
            }
        }
        assert!(is_tight(&bx(1, 0, 4, 2), Plane::new(&d, 5, 5).unwrap()));
    }

    #[test]
    fn inflation() {
        let b = bx(2, 2, 5, 5);
        assert_eq!(inflate_box(&b, Margin::default(), (10, 10)), b);
        assert_eq!(inflate_box(&b, Margin::uniform(3), (6, 10)), bx(0, 0, 6, 8));
        let grown = inflate_box(&b, Margin { top: 0, left: 1, bottom: 0, right: 0 }, (10, 10));
        assert!(iou_2d(&grown, &b) < 1.0);
    }

    #[test]
    fn jsonl_format_and_round_trip() {
        let s = BoxSeries::new("case", vec![None, Some(bx(1, 2, 3, 4))]);
        let text = s.to_jsonl();
        assert_eq!(text, "{\"z\":0,\"box\":null}\n{\"z\":1,\"box\":[1,2,3,4]}\n");
        let back = BoxSeries::from_jsonl("case", text.as_bytes()).unwrap();
        assert_eq!(back, s);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("case.boxes.jsonl");
        s.save(&p).unwrap();
        assert_eq!(BoxSeries::load(&p).unwrap(), s);
    }

    #[test]
    fn jsonl_rejects_gaps_and_degenerate_boxes() {
        assert!(BoxSeries::from_jsonl("x", "{\"z\":1,\"box\":null}\n".as_bytes()).is_err());
        assert!(BoxSeries::from_jsonl("x", "{\"z\":0,\"box\":[3,0,3,4]}\n".as_bytes()).is_err());
    }

    fn arb_box(n: usize) -> impl Strategy<Value = Box2D> {
        (0..n, 0..n, 1..=n, 1..=n).prop_filter_map("nonempty", move |(r0, c0, h, w)| {
            Box2D::new(r0, c0, (r0 + h).min(n), (c0 + w).min(n)).ok()
        })
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_one_iff_equal(a in arb_box(12), b in arb_box(12)) {
            prop_assert_eq!(iou_2d(&a, &b), iou_2d(&b, &a));
            prop_assert_eq!(iou_2d(&a, &b) == 1.0, a == b);
        }

        #[test]
        fn sliced_3d_box_never_undercovers(
            bits in proptest::collection::vec(0u8..2, 4 * 6 * 6)
        ) {
            let m = MaskVolume::new("m", [4, 6, 6], [1.0; 3], bits).unwrap();
            if let Ok(s) = BoxSeries::sliced_from_mask(&m) {
                for z in 0..4 {
                    if let Some(t) = tight_box_2d(m.plane(z)) {
                        prop_assert!(s.entries[z].unwrap().contains(&t));
                    }
                }
            }
        }

        // Disconnected masks can leave empty rows inside their tight box, so
        // tightness is only claimed for connected shapes: a random walk.
        #[test]
        fn tight_box_of_connected_blob_is_tight(
            start in (0usize..10, 0usize..10),
            steps in proptest::collection::vec(0u8..4, 0..40)
        ) {
            let mut mask = vec![0u8; 100];
            let (mut r, mut c) = start;
            mask[r * 10 + c] = 1;
            for s in steps {
                match s {
                    0 if r > 0 => r -= 1,
                    1 if r < 9 => r += 1,
                    2 if c > 0 => c -= 1,
                    3 if c < 9 => c += 1,
                    _ => {}
                }
                mask[r * 10 + c] = 1;
            }
            let plane = Plane::new(&mask, 10, 10).unwrap();
            let t = tight_box_2d(plane).unwrap();
            prop_assert!(is_tight(&t, plane));
            if t.r1() < 10 {
                let grown = Box2D::new(t.r0(), t.c0(), t.r1() + 1, t.c1()).unwrap();
                prop_assert!(!is_tight(&grown, plane));
            }
        }
    }
}
