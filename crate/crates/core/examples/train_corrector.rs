//! Trains the patch classifier on five pixel-labeled volumes and uses it to
//! shrink the sliced 3D boxes of held-out volumes.
//!
//!     cargo run --release --example train_corrector -- [epochs]

use tightbox::boxcorrect::correct_box_series;
use tightbox::evalexp::box_iou_report;
use tightbox::patchclf::{train_classifier, ClassifierArch, ClassifierConfig};
use tightbox::patchgrid::build_patch_dataset;
use tightbox::volumes::{apply_normalization, compute_norm_stats, generate_synthetic_dataset, SynthConfig};
use tightbox::BoxSeries;

fn main() -> tightbox::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let p = 16;
    let (raw, masks) = generate_synthetic_dataset(&SynthConfig {
        count: 10,
        ..Default::default()
    })?;
    let (labeled, held_out) = (0..5, 5..10);
    let stats = compute_norm_stats(&raw[labeled.clone()], &masks[labeled.clone()])?;
    let volumes: Vec<_> = raw.iter().map(|v| apply_normalization(v, &stats)).collect();
    let sliced = masks.iter().map(BoxSeries::sliced_from_mask).collect::<tightbox::Result<Vec<_>>>()?;

    let patches = build_patch_dataset(&volumes[labeled.clone()], &masks[labeled.clone()], &sliced[labeled], p)?;
    let positives = patches.iter().filter(|s| s.label == 1).count();
    println!("{} patches of {p}x{p}, {positives} foreground", patches.len());
    let cfg = ClassifierConfig {
        arch: ClassifierArch::VggSmall,
        input_size: p,
        epochs,
        ..Default::default()
    };
    let model = train_classifier(&patches, &cfg, &stats.fingerprint())?;
    for e in &model.history {
        println!("epoch {:>2}: loss {:.4} accuracy {:.4}", e.epoch, e.loss, e.accuracy);
    }

    println!("{:<10} {:>12} {:>12}", "volume", "IoU before", "IoU after");
    for i in held_out {
        let tight = BoxSeries::tight_from_mask(&masks[i]);
        let corrected = correct_box_series(&model, &volumes[i], &sliced[i], p)?;
        let before = box_iou_report(&sliced[i], &tight)?;
        let after = box_iou_report(&corrected, &tight)?;
        println!(
            "{:<10} {:>12.3} {:>12.3}",
            volumes[i].id(),
            before.mean.unwrap_or(0.0),
            after.mean.unwrap_or(0.0)
        );
    }
    Ok(())
}
