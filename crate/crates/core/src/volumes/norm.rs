//! Foreground-statistics intensity normalization: pool the intensities under
//! the training masks, clip every volume to the pooled 0.5/99.5 percentiles,
//! then z-score with the pooled mean and standard deviation.

use serde::{Deserialize, Serialize};

use super::{MaskVolume, Volume};
use crate::error::{Error, Result};

/// Lower and upper clipping percentiles, in percent.
pub const CLIP_PERCENTILES: (f64, f64) = (0.5, 99.5);

/// Floor applied to the standard deviation before dividing.
pub const STD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    /// Short stable tag identifying these statistics, stored with trained models.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in [self.clip_lo, self.clip_hi, self.mean, self.std] {
            h.update(v.to_le_bytes());
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Self = serde_json::from_str(&text)?;
        if !(s.clip_lo <= s.clip_hi) || !(s.std >= 0.0) || !s.mean.is_finite() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: "inconsistent normalization statistics".into(),
            });
        }
        Ok(s)
    }
}

/// Percentile `q` (in percent) of an ascending slice, linearly interpolated
/// between the two closest ranks.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let h = (sorted.len() - 1) as f64 * (q / 100.0).clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn compute_norm_stats(volumes: &[Volume], masks: &[MaskVolume]) -> Result<NormStats> {
    if volumes.len() != masks.len() {
        return Err(Error::Shape(format!(
            "{} volumes but {} masks",
            volumes.len(),
            masks.len()
        )));
    }
    let mut pool = Vec::new();
    for (v, m) in volumes.iter().zip(masks) {
        m.check_pairs_with(v)?;
        pool.extend(
            v.data()
                .iter()
                .zip(m.data())
                .filter(|(_, &l)| l == 1)
                .map(|(&x, _)| x as f64),
        );
    }
    if pool.is_empty() {
        return Err(Error::EmptyForeground(
            "no mask voxels to collect intensities from".into(),
        ));
    }
    pool.sort_by(f64::total_cmp);
    let n = pool.len() as f64;
    let mean = pool.iter().sum::<f64>() / n;
    let var = pool.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(NormStats {
        clip_lo: percentile(&pool, CLIP_PERCENTILES.0),
        clip_hi: percentile(&pool, CLIP_PERCENTILES.1),
        mean,
        std: var.sqrt(),
    })
}

pub fn apply_normalization(v: &Volume, s: &NormStats) -> Volume {
    let scale = 1.0 / s.std.max(STD_EPS);
    let data = v
        .data()
        .iter()
        .map(|&x| (((x as f64).clamp(s.clip_lo, s.clip_hi) - s.mean) * scale) as f32)
        .collect();
    v.with_data(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, values: &[f32], fg: &[u8]) -> (Volume, MaskVolume) {
        let n = values.len();
        (
            Volume::new(id, [1, 1, n], [1.0; 3], values.to_vec()).unwrap(),
            MaskVolume::new(id, [1, 1, n], [1.0; 3], fg.to_vec()).unwrap(),
        )
    }

    #[test]
    fn stats_of_ten_twenty_thirty() {
        let (v, m) = line("a", &[10.0, 20.0, 30.0, 999.0], &[1, 1, 1, 0]);
        let s = compute_norm_stats(&[v], &[m]).unwrap();
        assert!((s.mean - 20.0).abs() < 1e-12);
        assert!((s.std - (200.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((s.std - 8.1650).abs() < 1e-4);
    }

    #[test]
    fn constant_foreground_collapses_stats() {
        let (v, m) = line("a", &[4.5, 4.5, 4.5, -3.0], &[1, 1, 1, 0]);
        let s = compute_norm_stats(&[v.clone()], &[m]).unwrap();
        assert_eq!((s.clip_lo, s.clip_hi, s.mean, s.std), (4.5, 4.5, 4.5, 0.0));
        let out = apply_normalization(&v, &s);
        assert!(out.data().iter().all(|x| x.is_finite()));
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_pool_is_an_error() {
        let (v, m) = line("a", &[1.0, 2.0], &[0, 0]);
        assert!(matches!(
            compute_norm_stats(&[v], &[m]),
            Err(Error::EmptyForeground(_))
        ));
    }

    #[test]
    fn percentiles_of_one_to_thousand_match_sorted_rank_oracle() {
        // Oracle: closest-rank interpolation written out on the sorted array.
        let sorted: Vec<f64> = (1..=1000).map(f64::from).collect();
        let oracle = |q: f64| {
            let pos = 999.0 * q / 100.0;
            let i = pos as usize;
            sorted[i] * (1.0 - (pos - i as f64)) + sorted[i + 1] * (pos - i as f64)
        };
        assert!((oracle(0.5) - 5.995).abs() < 1e-9);
        assert!((oracle(99.5) - 995.005).abs() < 1e-9);

        let values: Vec<f32> = (1..=1000).rev().map(|x| x as f32).collect();
        let (v, m) = line("a", &values, &[1; 1000]);
        let s = compute_norm_stats(&[v], &[m]).unwrap();
        assert!((s.clip_lo - 5.995).abs() < 1e-9);
        assert!((s.clip_hi - 995.005).abs() < 1e-9);
    }

    #[test]
    fn normalization_examples() {
        let (v, m) = line("a", &[10.0, 20.0, 30.0], &[1, 1, 1]);
        let s = compute_norm_stats(&[v], &[m]).unwrap();
        let probe = Volume::new("p", [1, 1, 4], [1.0; 3], vec![20.0, 30.0, 500.0, 600.0]).unwrap();
        let out = apply_normalization(&probe, &s);
        assert!(out.data()[0].abs() < 1e-6);
        // clip_hi of {10,20,30} is 29.9, so 30 is clipped first
        let expect_hi = ((s.clip_hi - 20.0) / s.std) as f32;
        assert!((out.data()[1] - expect_hi).abs() < 1e-5);
        assert_eq!(out.data()[2], out.data()[3]);

        let wide = NormStats { clip_lo: 0.0, clip_hi: 100.0, ..s };
        let out = apply_normalization(&probe, &wide);
        assert!((out.data()[1] - 1.2247).abs() < 1e-4);
        // source untouched
        assert_eq!(probe.data()[2], 500.0);
    }

    proptest::proptest! {
        #[test]
        fn normalization_is_monotone_and_affine_inside_clip(
            a in -50f32..50.0, b in -50f32..50.0, lo in -20f64..0.0, width in 0.1f64..40.0,
            mean in -5f64..5.0, std in 0.01f64..10.0,
        ) {
            let s = NormStats { clip_lo: lo, clip_hi: lo + width, mean, std };
            let v = Volume::new("x", [1, 1, 2], [1.0; 3], vec![a.min(b), a.max(b)]).unwrap();
            let out = apply_normalization(&v, &s);
            proptest::prop_assert!(out.data()[0] <= out.data()[1]);
            for (&x, &y) in v.data().iter().zip(out.data()) {
                let x = x as f64;
                if x >= s.clip_lo && x <= s.clip_hi {
                    proptest::prop_assert!(((x - mean) / std - y as f64).abs() < 1e-3 * (1.0 + ((x - mean) / std).abs()));
                }
            }
        }
    }
}
