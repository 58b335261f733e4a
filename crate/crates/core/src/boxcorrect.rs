//! Box correction: the corrected box is the extent of every patch footprint
//! the classifier labels as foreground.
//!
//! Slices where no patch is foreground lose their box; downstream they are
//! treated as background-only supervision.

use crate::boxgeom::{Box2D, BoxSeries};
use crate::error::{Error, Result};
use crate::patchclf::{predict_grid, PatchClassifier};
use crate::patchgrid::PatchGrid;
use crate::volumes::Volume;

/// Hull of the foreground-labeled footprints, or `None` if there are none.
pub fn correct_box_slice(grid: &PatchGrid) -> Option<Box2D> {
    let mut out: Option<Box2D> = None;
    for i in 0..grid.rows() {
        for j in 0..grid.cols() {
            if grid.label(i, j) == 1 {
                let f = grid.footprint(i, j);
                out = Some(out.map_or(f, |b| b.hull(&f)));
            }
        }
    }
    out
}

/// Runs the classifier over every present box of `series`. `volume` must be
/// normalized the same way as the classifier's training patches.
pub fn correct_box_series(
    model: &PatchClassifier,
    volume: &Volume,
    series: &BoxSeries,
    p: usize,
) -> Result<BoxSeries> {
    if series.volume_id != volume.id() {
        return Err(Error::Shape(format!(
            "box series `{}` does not belong to volume `{}`",
            series.volume_id,
            volume.id()
        )));
    }
    let [depth, rows, cols] = volume.shape();
    series.check_fits(depth, rows, cols)?;
    let entries = series
        .entries
        .iter()
        .enumerate()
        .map(|(z, b)| match b {
            Some(crop) => Ok(correct_box_slice(&predict_grid(model, volume.plane(z), *crop, p)?)),
            None => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoxSeries::new(volume.id(), entries))
}
