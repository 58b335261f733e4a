//! Foreground-statistics normalization: statistics come from training volumes
//! and their masks only, then every volume is clipped and z-scored.
//!
//!     cargo run --release --example normalize_volumes

use tightbox::volumes::{apply_normalization, compute_norm_stats, generate_synthetic_dataset, SynthConfig};
use tightbox::Volume;

fn describe(v: &Volume) -> String {
    let n = v.data().len() as f64;
    let mean = v.data().iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.data().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let lo = v.data().iter().copied().fold(f32::INFINITY, f32::min);
    let hi = v.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    format!("mean {mean:+.3} std {:.3} range [{lo:+.2}, {hi:+.2}]", var.sqrt())
}

fn main() -> tightbox::Result<()> {
    let (mut volumes, masks) = generate_synthetic_dataset(&SynthConfig {
        count: 5,
        offset: 300.0,
        noise: 40.0,
        ..Default::default()
    })?;
    // shift the raw intensities into a CT-like range
    for v in &mut volumes {
        *v = Volume::new(v.id(), v.shape(), v.spacing(), v.data().iter().map(|x| x - 1000.0).collect())?;
    }

    let stats = compute_norm_stats(&volumes[..4], &masks[..4])?;
    println!("train-fold stats: {stats:?}");
    println!("fingerprint: {}", stats.fingerprint());
    for v in &volumes {
        let tag = if v.id() == volumes[4].id() { "held out" } else { "train" };
        println!("{} ({tag})", v.id());
        println!("  raw        {}", describe(v));
        println!("  normalized {}", describe(&apply_normalization(v, &stats)));
    }
    Ok(())
}
