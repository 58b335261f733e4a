//! The box-constrained loss on hand-made predictions: a prediction shaped
//! like the object, an empty one, and one that fills the whole box, under a
//! growing barrier parameter t.
//!
//!     cargo run --release --example constraint_loss

use tightbox::boxgeom::tight_box_2d;
use tightbox::weakseg::{barrier, tightness_constraints, total_loss, ConstraintConfig, PredictionSlice};
use tightbox::Plane;

fn main() -> tightbox::Result<()> {
    let (rows, cols) = (32, 32);
    let disc: Vec<u8> = (0..rows * cols)
        .map(|i| {
            let (r, c) = ((i / cols) as f64 - 15.5, (i % cols) as f64 - 13.0);
            (r * r / 100.0 + c * c / 49.0 <= 1.0) as u8
        })
        .collect();
    let b = tight_box_2d(Plane::new(&disc, rows, cols)?).expect("nonempty disc");
    println!("box {b}, {} foreground pixels", disc.iter().filter(|&&v| v == 1).count());

    let soft = |inside: f64, outside: f64| -> tightbox::Result<PredictionSlice> {
        let probs = (0..rows * cols)
            .map(|i| if b.contains_pixel(i / cols, i % cols) { inside } else { outside })
            .collect();
        PredictionSlice::new(probs, rows, cols)
    };
    let truth = PredictionSlice::new(disc.iter().map(|&v| if v == 1 { 0.95 } else { 0.05 }).collect(), rows, cols)?;
    let cases = [
        ("object-shaped", truth),
        ("empty", soft(0.02, 0.02)?),
        ("box filled", soft(0.98, 0.02)?),
        ("leaking", soft(0.98, 0.4)?),
    ];

    let cfg = ConstraintConfig::default();
    let zs = tightness_constraints(&cases[0].1, &b, cfg.band_width)?;
    println!("object-shaped: {} tightness bands, max z = {:.2}", zs.len(), zs.iter().cloned().fold(f64::MIN, f64::max));
    for epoch in [0, 10, 25, 48] {
        let t = cfg.t_at(epoch);
        println!("epoch {epoch:>2}, t = {t:.1}, barrier(-1) = {:+.4}, barrier(+1) = {:+.1}", barrier(-1.0, t), barrier(1.0, t));
        for (name, pred) in &cases {
            let l = total_loss(pred, Some(&b), &cfg, t)?;
            println!("  {name:<14} emptiness {:.4}  barrier {:>9.3}  total {:>9.3}", l.emptiness, l.barrier, l.total);
        }
    }
    Ok(())
}
