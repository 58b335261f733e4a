//! A reduced version of the full comparison: tight, non-tight and corrected
//! box supervision under two-fold cross-validation, with report files.
//!
//!     cargo run --release --example experiment_matrix -- [out_dir]

use tightbox::config::{ExperimentConfig, Preset};
use tightbox::evalexp::{emit_report, run_experiment_matrix_with, Dataset};
use tightbox::volumes::generate_synthetic_dataset;

fn main() -> tightbox::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "experiment_report".into());
    let mut cfg = ExperimentConfig::preset(Preset::Desk);
    for o in [
        "synth.count=8",
        "synth.shape=[16, 48, 48]",
        "matrix.folds=2",
        "matrix.patch_sizes=[16]",
        "matrix.correction_sizes=[2, 4]",
        "clf.epochs=5",
        "seg.epochs=6",
    ] {
        cfg.set(o)?;
    }
    print!("{}", cfg.to_toml());

    let (v, m) = generate_synthetic_dataset(&cfg.synth)?;
    let ds = Dataset::new(v, m)?;
    let report = run_experiment_matrix_with(&ds, &cfg.matrix_spec(), |key, res| {
        let status = match res {
            Ok(row) => format!("{:.1}s", row.wall_time_s),
            Err(e) => format!("failed: {e}"),
        };
        eprintln!("fold {} {} p={:?} n={:?}: {status}", key.fold, key.supervision, key.p, key.n_correction);
    })?;
    for cell in report.summary() {
        println!("{cell}");
    }
    let files = emit_report(&report, &out)?;
    println!("wrote {} and {}", files.csv.display(), files.summary.display());
    Ok(())
}
