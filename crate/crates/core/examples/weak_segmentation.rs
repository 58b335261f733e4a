//! Trains the 2.5D residual UNet from tight per-slice boxes only and scores it
//! against the voxel masks of held-out volumes after every epoch.
//!
//!     cargo run --release --example weak_segmentation -- [epochs] [tight2d|nontight3d]

use tightbox::evalexp::dice;
use tightbox::volumes::{apply_normalization, compute_norm_stats, generate_synthetic_dataset, SynthConfig};
use tightbox::weakseg::{predict_mask, train_segmenter, ConstraintConfig, SegmenterArch, SegmenterConfig, Validation};
use tightbox::BoxSeries;

fn main() -> tightbox::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);
    let mode = args.next().unwrap_or_else(|| "tight2d".into());
    let (raw, masks) = generate_synthetic_dataset(&SynthConfig {
        count: 8,
        ..Default::default()
    })?;
    let stats = compute_norm_stats(&raw[..6], &masks[..6])?;
    let volumes: Vec<_> = raw.iter().map(|v| apply_normalization(v, &stats)).collect();
    let boxes = masks[..6]
        .iter()
        .map(|m| match mode.as_str() {
            "nontight3d" => BoxSeries::sliced_from_mask(m),
            _ => Ok(BoxSeries::tight_from_mask(m)),
        })
        .collect::<tightbox::Result<Vec<_>>>()?;

    let cfg = SegmenterConfig {
        arch: SegmenterArch::ResUnetSmall,
        epochs,
        ..Default::default()
    };
    let constraints = ConstraintConfig {
        barrier_weight: 0.01,
        ..Default::default()
    };
    let validation = Validation {
        volumes: &volumes[6..],
        masks: &masks[6..],
    };
    let model = train_segmenter(&volumes[..6], &boxes, &cfg, &constraints, Some(validation), &stats.fingerprint())?;
    for e in &model.log {
        println!(
            "epoch {:>2} t {:>5.2}  emptiness {:.4}  barrier {:>8.4}  val dice {:.3}",
            e.epoch,
            e.t,
            e.emptiness,
            e.barrier,
            e.val_dice.unwrap_or(f64::NAN)
        );
    }
    for (v, m) in volumes[6..].iter().zip(&masks[6..]) {
        let pred = predict_mask(&model, v, 0.5)?;
        println!("{}: {} voxels predicted, {} true, dice {:.3}", v.id(), pred.count(), m.count(), dice(&pred, m)?);
    }
    Ok(())
}
