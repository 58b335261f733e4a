//! Synthetic phantoms: one bright blob made of 1–3 overlapping ellipsoids
//! chained diagonally through the volume, on a Gaussian-noise background.
//!
//! Successive ellipsoids are displaced both along z and in-plane, so each
//! slice's cross-section occupies only part of the 3D bounding box; near the
//! poles the cross-sections shrink further. Slicing the tight 3D box therefore
//! yields non-tight per-slice boxes by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{MaskVolume, Volume};
use crate::error::{Error, Result};

pub const MIN_SHAPE: [usize; 3] = [16, 32, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    /// `(Z, Y, X)`.
    pub shape: [usize; 3],
    /// Mean intensity of the object above the background.
    pub offset: f32,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f32,
    pub seed: u64,
    pub spacing: [f64; 3],
    /// Exponent of the z term in the implicit surface; 2 gives ellipsoids,
    /// larger values flatten the caps.
    pub pole_exponent: f64,
    /// Minimum number of empty voxels between the object and each face.
    pub margin: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 30,
            shape: [32, 64, 64],
            offset: 1.0,
            noise: 0.5,
            seed: 0,
            spacing: [2.5, 0.8, 0.8],
            pole_exponent: 2.0,
            margin: 2,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.shape.iter().zip(MIN_SHAPE).any(|(&s, m)| s < m) {
            return Err(Error::field(
                "shape",
                format!("must be at least {MIN_SHAPE:?}, got {:?}", self.shape),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::field("noise", "must be finite and >= 0"));
        }
        if !self.offset.is_finite() {
            return Err(Error::field("offset", "must be finite"));
        }
        if !(self.pole_exponent >= 1.0) {
            return Err(Error::field("pole_exponent", "must be >= 1"));
        }
        Ok(())
    }
}

struct Ellipsoid {
    center: [f64; 3],
    axes: [f64; 3],
    /// Columns are the ellipsoid's principal directions in `(z, y, x)`.
    rot: [[f64; 3]; 3],
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn rotation(in_plane: f64, tilt_y: f64, tilt_x: f64) -> [[f64; 3]; 3] {
    let (sa, ca) = in_plane.sin_cos();
    let (sb, cb) = tilt_y.sin_cos();
    let (sc, cc) = tilt_x.sin_cos();
    let rz = [[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]];
    let ry = [[cb, -sb, 0.0], [sb, cb, 0.0], [0.0, 0.0, 1.0]];
    let rx = [[cc, 0.0, -sc], [0.0, 1.0, 0.0], [sc, 0.0, cc]];
    matmul(&matmul(&rz, &ry), &rx)
}

fn sample_blob(rng: &mut ChaCha8Rng, shape: [usize; 3], scale: f64) -> Vec<Ellipsoid> {
    let [z, y, x] = shape.map(|d| d as f64);
    let k = match rng.gen::<f64>() {
        u if u < 0.1 => 1,
        u if u < 0.8 => 2,
        _ => 3,
    };
    let sign = |rng: &mut ChaCha8Rng| if rng.gen::<bool>() { 1.0 } else { -1.0 };
    let step = [
        rng.gen_range(0.25..0.34) * z * scale * sign(rng),
        rng.gen_range(0.19..0.25) * y * scale * sign(rng),
        rng.gen_range(0.19..0.25) * x * scale * sign(rng),
    ];
    let jitter = [1.0, 3.0 * y / 64.0, 3.0 * x / 64.0];
    let half = (k - 1) as f64 / 2.0;
    let start: [f64; 3] = std::array::from_fn(|i| {
        [z, y, x][i] / 2.0 - step[i] * half + rng.gen_range(-1.0..1.0) * jitter[i]
    });
    (0..k)
        .map(|i| Ellipsoid {
            center: std::array::from_fn(|d| start[d] + i as f64 * step[d]),
            axes: [
                rng.gen_range(0.22..0.31) * z * scale,
                rng.gen_range(0.28..0.34) * y * scale,
                rng.gen_range(0.28..0.34) * x * scale,
            ],
            rot: rotation(
                rng.gen_range(0.0..std::f64::consts::PI),
                rng.gen_range(-0.15..0.15),
                rng.gen_range(-0.15..0.15),
            ),
        })
        .collect()
}

fn rasterize(blob: &[Ellipsoid], shape: [usize; 3], pole_exponent: f64) -> Vec<u8> {
    let [nz, ny, nx] = shape;
    let mut mask = vec![0u8; nz * ny * nx];
    for (i, m) in mask.iter_mut().enumerate() {
        let p = [
            (i / (ny * nx)) as f64 + 0.5,
            ((i / nx) % ny) as f64 + 0.5,
            (i % nx) as f64 + 0.5,
        ];
        let inside = blob.iter().any(|e| {
            let d: [f64; 3] = std::array::from_fn(|k| p[k] - e.center[k]);
            let q: [f64; 3] = std::array::from_fn(|j| (0..3).map(|k| d[k] * e.rot[k][j]).sum());
            (q[0] / e.axes[0]).abs().powf(pole_exponent)
                + (q[1] / e.axes[1]).powi(2)
                + (q[2] / e.axes[2]).powi(2)
                <= 1.0
        });
        *m = inside as u8;
    }
    mask
}

fn fits(mask: &[u8], shape: [usize; 3], margin: usize) -> bool {
    let [_, ny, nx] = shape;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m == 1) {
        any = true;
        let c = [i / (ny * nx), (i / nx) % ny, i % nx];
        for d in 0..3 {
            lo[d] = lo[d].min(c[d]);
            hi[d] = hi[d].max(c[d]);
        }
    }
    any && (0..3).all(|d| lo[d] >= margin && hi[d] + margin < shape[d])
}

fn noise_field(rng: &mut ChaCha8Rng, n: usize, sigma: f32) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let g: f32 = StandardNormal.sample(rng);
            g * sigma
        })
        .collect()
}

fn volume_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Generates `cfg.count` volumes `synth_000, synth_001, ...` with their masks.
pub fn generate_synthetic_dataset(cfg: &SynthConfig) -> Result<(Vec<Volume>, Vec<MaskVolume>)> {
    cfg.validate()?;
    let n = cfg.shape.iter().product();
    let mut volumes = Vec::with_capacity(cfg.count);
    let mut masks = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let mut rng = volume_rng(cfg.seed, i);
        let mut scale = 1.0;
        let mut attempt = 0;
        let mask = loop {
            let blob = sample_blob(&mut rng, cfg.shape, scale);
            let mask = rasterize(&blob, cfg.shape, cfg.pole_exponent);
            if fits(&mask, cfg.shape, cfg.margin) {
                break mask;
            }
            attempt += 1;
            if attempt % 25 == 0 {
                scale *= 0.9;
            }
            if attempt > 500 {
                return Err(Error::invalid(format!(
                    "could not place an object in shape {:?} with margin {}",
                    cfg.shape, cfg.margin
                )));
            }
        };
        let noise = noise_field(&mut rng, n, cfg.noise);
        let data = mask
            .iter()
            .zip(noise)
            .map(|(&m, e)| if m == 1 { cfg.offset + e } else { e })
            .collect();
        let id = format!("synth_{i:03}");
        volumes.push(Volume::new(&id, cfg.shape, cfg.spacing, data)?);
        masks.push(MaskVolume::new(&id, cfg.shape, cfg.spacing, mask)?);
    }
    Ok((volumes, masks))
}

/// A volume with noise only, and its empty mask.
pub fn generate_background_volume(
    id: &str,
    shape: [usize; 3],
    noise: f32,
    seed: u64,
) -> Result<(Volume, MaskVolume)> {
    let n = shape.iter().product();
    let mut rng = volume_rng(seed, usize::MAX - 1);
    let data = noise_field(&mut rng, n, noise);
    Ok((
        Volume::new(id, shape, [1.0; 3], data)?,
        MaskVolume::new(id, shape, [1.0; 3], vec![0; n])?,
    ))
}
