//! Tiles a non-tight box into p×p patches with stride p/2 and prints the
//! ground-truth patch labels as a map.
//!
//!     cargo run --release --example patch_grid -- [p]

use tightbox::boxgeom::tight_box_3d;
use tightbox::patchgrid::{build_grid, label_grid};
use tightbox::volumes::{generate_synthetic_dataset, SynthConfig};
use tightbox::BoxSeries;

fn main() -> tightbox::Result<()> {
    let p: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let (_, masks) = generate_synthetic_dataset(&SynthConfig {
        count: 1,
        ..Default::default()
    })?;
    let mask = &masks[0];
    let b3 = tight_box_3d(mask)?;
    let sliced = BoxSeries::from_box_3d(mask.id(), &b3, mask.depth());

    let z_range = b3.z_range();
    for z in [z_range.start + 1, z_range.start + z_range.len() / 2] {
        let crop = sliced.entries[z].unwrap();
        let mut grid = build_grid(crop, p)?;
        let labels = label_grid(&grid, mask.plane(z));
        grid.set_labels(labels)?;
        println!(
            "z={z} crop {crop}: {}x{} patches of {p}x{p}, stride {}, padded {}",
            grid.rows(),
            grid.cols(),
            grid.stride(),
            grid.padded()
        );
        for i in 0..grid.rows() {
            let row: String = (0..grid.cols()).map(|j| if grid.label(i, j) == 1 { '#' } else { '.' }).collect();
            println!("  {row}");
        }
    }
    Ok(())
}
