//! Generates a small phantom dataset, prints per-volume statistics and writes
//! it to a dataset directory.
//!
//!     cargo run --release --example synthetic_volumes -- [out_dir]

use tightbox::volumes::{generate_synthetic_dataset, save_dataset, SynthConfig};

fn main() -> tightbox::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic_data".into());
    let cfg = SynthConfig {
        count: 6,
        ..Default::default()
    };
    let (volumes, masks) = generate_synthetic_dataset(&cfg)?;

    println!("{:<10} {:>14} {:>10} {:>8} {:>8}", "id", "shape", "voxels", "fg mean", "bg mean");
    for (v, m) in volumes.iter().zip(&masks) {
        let (mut fg, mut bg) = ((0.0, 0usize), (0.0, 0usize));
        for (&x, &l) in v.data().iter().zip(m.data()) {
            let acc = if l != 0 { &mut fg } else { &mut bg };
            acc.0 += x as f64;
            acc.1 += 1;
        }
        println!(
            "{:<10} {:>14} {:>10} {:>8.3} {:>8.3}",
            v.id(),
            format!("{:?}", v.shape()),
            m.count(),
            fg.0 / fg.1 as f64,
            bg.0 / bg.1 as f64
        );
    }
    save_dataset(&out, &volumes, &masks)?;
    println!("wrote {out}/images and {out}/labels");
    Ok(())
}
