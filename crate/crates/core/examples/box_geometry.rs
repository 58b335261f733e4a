//! Why boxes cut from a 3D box are not tight: per-slice IoU between the
//! sliced 3D box and the tight 2D box of each slice of one phantom.
//!
//!     cargo run --release --example box_geometry

use tightbox::boxgeom::{inflate_box, iou_2d, is_tight, tight_box_3d, Margin};
use tightbox::volumes::{generate_synthetic_dataset, SynthConfig};
use tightbox::BoxSeries;

fn main() -> tightbox::Result<()> {
    let (_, masks) = generate_synthetic_dataset(&SynthConfig {
        count: 1,
        ..Default::default()
    })?;
    let mask = &masks[0];
    let b3 = tight_box_3d(mask)?;
    println!("tight 3D box of {}: {:?}", mask.id(), b3.to_array());

    let tight = BoxSeries::tight_from_mask(mask);
    let sliced = BoxSeries::from_box_3d(mask.id(), &b3, mask.depth());
    let mut total = 0.0;
    for z in b3.z_range() {
        let (t, s) = (tight.entries[z].unwrap(), sliced.entries[z].unwrap());
        let iou = iou_2d(&s, &t);
        total += iou;
        println!(
            "z={z:>2}  tight {t}  sliced {s}  iou {iou:.3}  {}",
            "#".repeat((iou * 40.0).round() as usize)
        );
        assert!(is_tight(&t, mask.plane(z)));
    }
    println!("mean slice IoU {:.3}", total / b3.z_range().len() as f64);

    let [_, rows, cols] = mask.shape();
    let mid = b3.z_range().start + b3.z_range().len() / 2;
    let t = tight.entries[mid].unwrap();
    println!("inflating {t} by 4: {}", inflate_box(&t, Margin::uniform(4), (rows, cols)));
    Ok(())
}
