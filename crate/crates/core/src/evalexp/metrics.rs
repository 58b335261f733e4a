use serde::{Deserialize, Serialize};

use crate::boxgeom::{iou_2d, BoxSeries};
use crate::error::{Error, Result};
use crate::volumes::MaskVolume;

/// `2|a∩b| / (|a|+|b|)`, and 1 when both masks are empty.
pub fn dice(a: &MaskVolume, b: &MaskVolume) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("dice of {:?} and {:?} masks", a.shape(), b.shape())));
    }
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x & y) as usize;
        total += (x + y) as usize;
    }
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

/// Slice IoU statistics between two box series of the same volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    /// `None` when no slice has a box in both series.
    pub mean: Option<f64>,
    /// Population standard deviation over the compared slices.
    pub std: Option<f64>,
    /// Slices compared.
    pub compared: usize,
    /// Slices where exactly one of the two series has a box.
    pub mismatches: usize,
    /// Per-slice IoU values, in slice order.
    pub values: Vec<f64>,
}

pub fn box_iou_report(predicted: &BoxSeries, reference: &BoxSeries) -> Result<IouReport> {
    if predicted.volume_id != reference.volume_id || predicted.depth() != reference.depth() {
        return Err(Error::Shape(format!(
            "box series `{}` ({} slices) vs `{}` ({} slices)",
            predicted.volume_id,
            predicted.depth(),
            reference.volume_id,
            reference.depth()
        )));
    }
    let mut values = Vec::new();
    let mut mismatches = 0;
    for (a, b) in predicted.entries.iter().zip(&reference.entries) {
        match (a, b) {
            (Some(a), Some(b)) => values.push(iou_2d(a, b)),
            (None, None) => {}
            _ => mismatches += 1,
        }
    }
    let (mean, std) = mean_std(&values).unzip();
    Ok(IouReport {
        mean,
        std,
        compared: values.len(),
        mismatches,
        values,
    })
}

/// Mean and population standard deviation, `None` for an empty slice.
pub(crate) fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}
