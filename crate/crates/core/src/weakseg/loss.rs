//! Box-supervised loss on one slice of foreground probabilities: masked
//! cross-entropy outside the box, tightness bands and size bounds inside it,
//! with the inequality constraints penalized by an extended log-barrier.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::boxgeom::Box2D;
use crate::error::{Error, Result};

/// Clipping applied to probabilities inside logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintConfig {
    pub band_width: usize,
    pub size_lo_frac: f64,
    pub size_hi_frac: f64,
    pub barrier_t_init: f64,
    pub barrier_t_growth: f64,
    pub barrier_t_max: f64,
    /// Multiplier on the summed barrier terms; 1 gives the plain sum.
    pub barrier_weight: f64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            band_width: 5,
            size_lo_frac: 0.1,
            size_hi_frac: 1.0,
            barrier_t_init: 5.0,
            barrier_t_growth: 1.1,
            barrier_t_max: 100.0,
            barrier_weight: 1.0,
        }
    }
}

impl ConstraintConfig {
    pub fn validate(&self) -> Result<()> {
        if self.band_width == 0 {
            return Err(Error::field("band_width", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.size_lo_frac) {
            return Err(Error::field("size_lo_frac", "must lie in [0, 1]"));
        }
        if !(self.size_hi_frac > 0.0 && self.size_hi_frac <= 1.0) {
            return Err(Error::field("size_hi_frac", "must lie in (0, 1]"));
        }
        if self.size_lo_frac > self.size_hi_frac {
            return Err(Error::field("size_lo_frac", "must not exceed size_hi_frac"));
        }
        if !(self.barrier_t_init > 0.0 && self.barrier_t_init.is_finite()) {
            return Err(Error::field("barrier_t_init", "must be > 0"));
        }
        if !(self.barrier_t_growth >= 1.0 && self.barrier_t_growth.is_finite()) {
            return Err(Error::field("barrier_t_growth", "must be >= 1"));
        }
        if !(self.barrier_weight > 0.0 && self.barrier_weight.is_finite()) {
            return Err(Error::field("barrier_weight", "must be > 0"));
        }
        if !(self.barrier_t_max >= self.barrier_t_init) {
            return Err(Error::field("barrier_t_max", "must be >= barrier_t_init"));
        }
        Ok(())
    }

    /// Barrier parameter used during `epoch` (0-based).
    pub fn t_at(&self, epoch: usize) -> f64 {
        let t = self.barrier_t_init * self.barrier_t_growth.powi(epoch as i32);
        t.min(self.barrier_t_max)
    }
}

/// Foreground probabilities of one slice, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSlice {
    probs: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl PredictionSlice {
    pub fn new(probs: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if probs.len() != rows * cols {
            return Err(Error::Shape(format!("{} probabilities for {rows}x{cols}", probs.len())));
        }
        if let Some(v) = probs.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self { probs, rows, cols })
    }

    pub fn filled(value: f64, rows: usize, cols: usize) -> Result<Self> {
        Self::new(vec![value; rows * cols], rows, cols)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn check_box(&self, b: &Box2D) -> Result<()> {
        if b.fits_in(self.rows, self.cols) {
            Ok(())
        } else {
            Err(Error::InvalidBox(format!("{b} outside {}x{} slice", self.rows, self.cols)))
        }
    }
}

/// Extended log-barrier for the constraint `z <= 0`.
pub fn barrier(z: f64, t: f64) -> f64 {
    if z <= -1.0 / (t * t) {
        -(-z).ln() / t
    } else {
        t * z - (1.0 / (t * t)).ln() / t + 1.0 / t
    }
}

pub fn barrier_grad(z: f64, t: f64) -> f64 {
    if z <= -1.0 / (t * t) {
        -1.0 / (t * z)
    } else {
        t
    }
}

/// Band ranges along an axis of length `extent`: consecutive windows of `w`,
/// the last one moved back to end flush with the extent. An extent shorter
/// than `w` is a single band.
pub fn band_ranges(extent: usize, w: usize) -> Vec<Range<usize>> {
    let w = w.max(1);
    if extent <= w {
        return vec![0..extent];
    }
    let mut out: Vec<Range<usize>> = (0..extent).step_by(w).map(|s| s..s + w).collect();
    let last = out.last_mut().expect("extent > 0");
    if last.end > extent {
        *last = extent - w..extent;
    }
    out
}

/// One tightness constraint: a band of box-relative rows (`horizontal`) or
/// columns and the foreground mass it must hold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Band {
    pub horizontal: bool,
    pub range: Range<usize>,
    pub bound: usize,
}

pub fn tightness_bands(b: &Box2D, w: usize) -> Vec<Band> {
    let make = |horizontal: bool, extent: usize| {
        band_ranges(extent, w).into_iter().map(move |range| Band {
            horizontal,
            bound: range.len().min(w),
            range,
        })
    };
    make(true, b.height()).chain(make(false, b.width())).collect()
}

/// Sums of `s` over each box row and each box column.
fn box_marginals(pred: &PredictionSlice, b: &Box2D) -> (Vec<f64>, Vec<f64>) {
    let mut row_sums = vec![0.0; b.height()];
    let mut col_sums = vec![0.0; b.width()];
    for (i, r) in (b.r0()..b.r1()).enumerate() {
        let row = &pred.probs[r * pred.cols + b.c0()..r * pred.cols + b.c1()];
        for (j, &v) in row.iter().enumerate() {
            row_sums[i] += v;
            col_sums[j] += v;
        }
    }
    (row_sums, col_sums)
}

fn band_values(bands: &[Band], row_sums: &[f64], col_sums: &[f64]) -> Vec<f64> {
    bands
        .iter()
        .map(|band| {
            let sums = if band.horizontal { row_sums } else { col_sums };
            band.bound as f64 - sums[band.range.clone()].iter().sum::<f64>()
        })
        .collect()
}

/// `z_l = w − Σ s` over each horizontal then each vertical band of `b`.
pub fn tightness_constraints(pred: &PredictionSlice, b: &Box2D, w: usize) -> Result<Vec<f64>> {
    pred.check_box(b)?;
    let (rs, cs) = box_marginals(pred, b);
    Ok(band_values(&tightness_bands(b, w), &rs, &cs))
}

fn outside<'a>(pred: &'a PredictionSlice, b: Option<&'a Box2D>) -> impl Iterator<Item = usize> + 'a {
    (0..pred.probs.len()).filter(move |&i| match b {
        Some(b) => !b.contains_pixel(i / pred.cols, i % pred.cols),
        None => true,
    })
}

fn bce_background(s: f64) -> f64 {
    -(1.0 - s.clamp(PROB_EPS, 1.0 - PROB_EPS)).ln()
}

/// Mean cross-entropy toward background over pixels outside `b` (the whole
/// slice when `b` is `None`). Zero when the box covers the slice.
pub fn emptiness_loss(pred: &PredictionSlice, b: Option<&Box2D>) -> f64 {
    let (sum, n) = outside(pred, b).fold((0.0, 0usize), |(sum, n), i| {
        (sum + bce_background(pred.probs[i]), n + 1)
    });
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// `(z_lo, z_hi)` for `lo·A ≤ S ≤ hi·A`, `S` the predicted mass in `b`.
pub fn size_constraints(pred: &PredictionSlice, b: &Box2D, cfg: &ConstraintConfig) -> Result<(f64, f64)> {
    pred.check_box(b)?;
    let (rs, _) = box_marginals(pred, b);
    Ok(size_values(rs.iter().sum(), b.area() as f64, cfg))
}

fn size_values(mass: f64, area: f64, cfg: &ConstraintConfig) -> (f64, f64) {
    (cfg.size_lo_frac * area - mass, mass - cfg.size_hi_frac * area)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub emptiness: f64,
    /// Weighted sum of all barrier penalties (tightness and size).
    pub barrier: f64,
    pub total: f64,
}

pub fn total_loss(
    pred: &PredictionSlice,
    b: Option<&Box2D>,
    cfg: &ConstraintConfig,
    t: f64,
) -> Result<LossTerms> {
    Ok(total_loss_with_grad(pred, b, cfg, t)?.0)
}

/// The loss and its gradient with respect to every probability.
pub fn total_loss_with_grad(
    pred: &PredictionSlice,
    b: Option<&Box2D>,
    cfg: &ConstraintConfig,
    t: f64,
) -> Result<(LossTerms, Vec<f64>)> {
    let mut grad = vec![0.0; pred.probs.len()];

    let out: Vec<usize> = outside(pred, b).collect();
    let mut emptiness = 0.0;
    if !out.is_empty() {
        let inv = 1.0 / out.len() as f64;
        for &i in &out {
            let s = pred.probs[i];
            emptiness += bce_background(s);
            if s > PROB_EPS && s < 1.0 - PROB_EPS {
                grad[i] = inv / (1.0 - s);
            }
        }
        emptiness *= inv;
    }

    let mut barrier_sum = 0.0;
    if let Some(b) = b {
        pred.check_box(b)?;
        let (rs, cs) = box_marginals(pred, b);
        let bands = tightness_bands(b, cfg.band_width);
        let mut row_g = vec![0.0; b.height()];
        let mut col_g = vec![0.0; b.width()];
        for (band, z) in bands.iter().zip(band_values(&bands, &rs, &cs)) {
            barrier_sum += barrier(z, t);
            // dz/ds = −1 for every pixel in the band
            let g = -cfg.barrier_weight * barrier_grad(z, t);
            let target = if band.horizontal { &mut row_g } else { &mut col_g };
            target[band.range.clone()].iter_mut().for_each(|v| *v += g);
        }
        let (z_lo, z_hi) = size_values(rs.iter().sum(), b.area() as f64, cfg);
        barrier_sum += barrier(z_lo, t) + barrier(z_hi, t);
        barrier_sum *= cfg.barrier_weight;
        let size_g = cfg.barrier_weight * (barrier_grad(z_hi, t) - barrier_grad(z_lo, t));
        for (i, r) in (b.r0()..b.r1()).enumerate() {
            for (j, c) in (b.c0()..b.c1()).enumerate() {
                grad[r * pred.cols + c] += row_g[i] + col_g[j] + size_g;
            }
        }
    }
    let terms = LossTerms {
        emptiness,
        barrier: barrier_sum,
        total: emptiness + barrier_sum,
    };
    Ok((terms, grad))
}
