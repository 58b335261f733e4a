//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line to
//! stderr (bypassing the test harness capture) before asserting.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tightbox::boxgeom::{iou_2d, is_tight, tight_box_2d, tight_box_3d};
use tightbox::config::{ExperimentConfig, Preset};
use tightbox::evalexp::{run_experiment_matrix, write_report_csv, Dataset, ExperimentReport, MatrixSpec, Supervision};
use tightbox::patchgrid::{build_grid, label_patch};
use tightbox::volumes::{generate_synthetic_dataset, SynthConfig, CLIP_PERCENTILES};
use tightbox::weakseg::{barrier, barrier_grad, total_loss, total_loss_with_grad, ConstraintConfig, PredictionSlice};
use tightbox::{Box2D, MaskVolume, Plane};

fn verdict(n: usize, name: &str, pass: bool, detail: &str, elapsed: Duration) {
    let line = format!(
        "criterion {n} ({name}): {} [{detail}; {:.1}s]\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

// ---------------------------------------------------------------------------
// 1. Geometry against pixel-set oracles

/// Pixel `(r, c)` of an 8×8 plane is bit `8r + c`.
fn box_bits(r0: usize, c0: usize, r1: usize, c1: usize) -> u64 {
    let mut bits = 0u64;
    for r in r0..r1 {
        for c in c0..c1 {
            bits |= 1 << (8 * r + c);
        }
    }
    bits
}

fn all_boxes_8x8() -> Vec<([usize; 4], u64)> {
    let mut out = Vec::new();
    for r0 in 0..8 {
        for r1 in r0 + 1..=8 {
            for c0 in 0..8 {
                for c1 in c0 + 1..=8 {
                    out.push(([r0, c0, r1, c1], box_bits(r0, c0, r1, c1)));
                }
            }
        }
    }
    out
}

fn plane_bits(p: &[u8]) -> u64 {
    p.iter().enumerate().filter(|(_, &v)| v != 0).fold(0, |acc, (i, _)| acc | 1 << i)
}

fn oracle_tight_2d(bits: u64) -> Option<[usize; 4]> {
    let pix: Vec<(usize, usize)> = (0..64).filter(|i| bits >> i & 1 == 1).map(|i| (i / 8, i % 8)).collect();
    if pix.is_empty() {
        return None;
    }
    let r0 = pix.iter().map(|p| p.0).min().unwrap();
    let r1 = pix.iter().map(|p| p.0).max().unwrap() + 1;
    let c0 = pix.iter().map(|p| p.1).min().unwrap();
    let c1 = pix.iter().map(|p| p.1).max().unwrap() + 1;
    Some([r0, c0, r1, c1])
}

fn oracle_is_tight(b: [usize; 4], bits: u64) -> bool {
    let inside = bits & box_bits(b[0], b[1], b[2], b[3]);
    (b[0]..b[2]).all(|r| inside & box_bits(r, 0, r + 1, 8) != 0)
        && (b[1]..b[3]).all(|c| inside & box_bits(0, c, 8, c + 1) != 0)
}

fn random_masks(count: usize, seed: u64) -> Vec<MaskVolume> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let density = [0.0, 0.003, 0.02, 0.1, 0.4][i % 5];
            let data = (0..512).map(|_| rng.gen_bool(density) as u8).collect();
            MaskVolume::new(format!("m{i}"), [8, 8, 8], [1.0; 3], data).unwrap()
        })
        .collect()
}

#[test]
fn criterion_1_geometry_matches_pixel_set_oracles() {
    let start = Instant::now();
    let boxes = all_boxes_8x8();
    let mut mismatches = 0usize;
    let mut checks = 0usize;

    let typed: Vec<Box2D> = boxes.iter().map(|(b, _)| Box2D::new(b[0], b[1], b[2], b[3]).unwrap()).collect();
    for (a, (_, abits)) in typed.iter().zip(&boxes) {
        for (b, (_, bbits)) in typed.iter().zip(&boxes) {
            let expect = (abits & bbits).count_ones() as f64 / (abits | bbits).count_ones() as f64;
            mismatches += (iou_2d(a, b) != expect) as usize;
            checks += 1;
        }
    }

    for mask in random_masks(1000, 1) {
        for z in 0..8 {
            let plane = mask.plane(z);
            let bits = plane_bits(mask.slice(z));
            let got = tight_box_2d(plane).map(|b| b.to_array());
            mismatches += (got != oracle_tight_2d(bits)) as usize;
            for (b, typed_b) in boxes.iter().zip(&typed) {
                mismatches += (is_tight(typed_b, plane) != oracle_is_tight(b.0, bits)) as usize;
            }
            checks += 1 + boxes.len();
        }
        let voxels: Vec<[usize; 3]> = (0..512).filter(|&i| mask.data()[i] != 0).map(|i| [i / 64, i / 8 % 8, i % 8]).collect();
        let expect = (!voxels.is_empty()).then(|| {
            let lo = |k: usize| voxels.iter().map(|v| v[k]).min().unwrap();
            let hi = |k: usize| voxels.iter().map(|v| v[k]).max().unwrap() + 1;
            [lo(0), lo(1), lo(2), hi(0), hi(1), hi(2)]
        });
        mismatches += (tight_box_3d(&mask).ok().map(|b| b.to_array()) != expect) as usize;
        checks += 1;
    }

    let elapsed = start.elapsed();
    let pass = mismatches == 0 && elapsed < Duration::from_secs(60);
    verdict(1, "geometry oracles", pass, &format!("{mismatches} mismatches in {checks} checks"), elapsed);
}

// ---------------------------------------------------------------------------
// 2. Patch grids and labels

#[test]
fn criterion_2_patch_grid_and_labels_match_recount() {
    let start = Instant::now();
    let mut violations = Vec::new();
    let mut grids = 0usize;
    for p in [8usize, 16, 32] {
        let stride = p / 2;
        for h in 1..=128usize {
            for w in 1..=128usize {
                let crop = Box2D::new(3, 5, 3 + h, 5 + w).unwrap();
                let g = build_grid(crop, p).unwrap();
                grids += 1;
                let mut cover = vec![0u16; h * w];
                for fp in g.footprints() {
                    if !crop.contains(&fp) {
                        violations.push(format!("p={p} {h}x{w}: footprint {fp} leaves crop"));
                    }
                    let full_r = h < p || fp.height() == p;
                    let full_c = w < p || fp.width() == p;
                    if !(full_r && full_c) {
                        violations.push(format!("p={p} {h}x{w}: footprint {fp} is not p wide"));
                    }
                    for r in fp.r0()..fp.r1() {
                        for c in fp.c0()..fp.c1() {
                            cover[(r - 3) * w + (c - 5)] += 1;
                        }
                    }
                }
                if cover.contains(&0) {
                    violations.push(format!("p={p} {h}x{w}: pixel not covered"));
                }
                if g.padded() != (h < p || w < p) {
                    violations.push(format!("p={p} {h}x{w}: padded flag"));
                }
                // neighbours step by p/2, except a final flush patch that steps less
                for (axis, n, ext) in [("row", g.rows(), h), ("col", g.cols(), w)] {
                    let starts: Vec<usize> = (0..n)
                        .map(|i| if axis == "row" { g.footprint(i, 0).r0() - 3 } else { g.footprint(0, i).c0() - 5 })
                        .collect();
                    if ext <= p {
                        if starts != [0] {
                            violations.push(format!("p={p} {h}x{w}: {axis} offsets {starts:?}"));
                        }
                        continue;
                    }
                    let ok = starts[0] == 0
                        && *starts.last().unwrap() == ext - p
                        && starts.windows(2).enumerate().all(|(k, s)| {
                            let d = s[1] - s[0];
                            d == stride || (k + 2 == n && d > 0 && d < stride)
                        });
                    if !ok {
                        violations.push(format!("p={p} {h}x{w}: {axis} offsets {starts:?}"));
                    }
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (rows, cols) = (40, 40);
    let mut label_mismatch = 0usize;
    let mut ties = 0usize;
    for k in 0..10_000 {
        let r0 = rng.gen_range(0..rows - 1);
        let c0 = rng.gen_range(0..cols - 1);
        let fp = Box2D::new(r0, c0, rng.gen_range(r0 + 1..=rows.min(r0 + 33)), rng.gen_range(c0 + 1..=cols.min(c0 + 33))).unwrap();
        let mut mask = vec![0u8; rows * cols];
        if k % 4 == 0 && fp.area() % 2 == 0 {
            // exactly half of the footprint in foreground, scattered
            let mut inside: Vec<usize> = (0..rows * cols).filter(|&i| fp.contains_pixel(i / cols, i % cols)).collect();
            for i in 0..inside.len() {
                let j = rng.gen_range(i..inside.len());
                inside.swap(i, j);
            }
            for &i in &inside[..inside.len() / 2] {
                mask[i] = 1;
            }
            ties += 1;
        } else {
            let d = rng.gen_range(0.0..1.0);
            mask.iter_mut().for_each(|v| *v = rng.gen_bool(d) as u8);
        }
        let fg = (0..rows * cols).filter(|&i| mask[i] == 1 && fp.contains_pixel(i / cols, i % cols)).count();
        let expect = (fg as f64 / fp.area() as f64 > 0.5) as u8;
        let got = label_patch(&fp, Plane::new(&mask, rows, cols).unwrap());
        label_mismatch += (got != expect) as usize;
    }

    let elapsed = start.elapsed();
    let pass = violations.is_empty() && label_mismatch == 0 && elapsed < Duration::from_secs(60);
    let detail = format!(
        "{grids} grids, {} invariant violations{}; 10000 labels ({ties} exact ties), {label_mismatch} mismatches",
        violations.len(),
        violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
    );
    verdict(2, "patch pipeline oracles", pass, &detail, elapsed);
}

// ---------------------------------------------------------------------------
// 3. Extended log-barrier

#[test]
fn criterion_3_barrier_continuity_and_gradients() {
    let start = Instant::now();
    let mut worst_gap = 0f64;
    for t in [0.5f64, 1.0, 5.0, 20.0] {
        let z0 = -1.0 / (t * t);
        let log_branch = -(-z0).ln() / t;
        let lin_branch = t * z0 - (1.0 / (t * t)).ln() / t + 1.0 / t;
        let slope_log = -1.0 / (t * z0);
        let slope_lin = t;
        let eps = z0.abs() * 1e-13;
        for gap in [
            (log_branch - lin_branch).abs(),
            (barrier(z0, t) - log_branch).abs(),
            (barrier(z0 + eps, t) - barrier(z0 - eps, t)).abs(),
            (slope_log - slope_lin).abs(),
            (barrier_grad(z0 + eps, t) - barrier_grad(z0 - eps, t)).abs(),
            (barrier_grad(z0 - eps, t) - slope_log).abs(),
            (barrier_grad(z0 + eps, t) - slope_lin).abs(),
        ] {
            worst_gap = worst_gap.max(gap);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_rel = 0f64;
    for _ in 0..100 {
        let rows = rng.gen_range(6..20);
        let cols = rng.gen_range(6..20);
        let probs: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(0.02..0.98)).collect();
        let r0 = rng.gen_range(0..rows - 1);
        let c0 = rng.gen_range(0..cols - 1);
        let b = Box2D::new(r0, c0, rng.gen_range(r0 + 1..=rows), rng.gen_range(c0 + 1..=cols)).unwrap();
        let b = (rng.gen::<f64>() < 0.9).then_some(b);
        let cfg = ConstraintConfig {
            band_width: rng.gen_range(1..8),
            size_lo_frac: rng.gen_range(0.0..0.5),
            barrier_weight: [1.0, 0.01][rng.gen_range(0..2)],
            ..Default::default()
        };
        let t = rng.gen_range(0.5..50.0);
        let (_, grad) = total_loss_with_grad(&PredictionSlice::new(probs.clone(), rows, cols).unwrap(), b.as_ref(), &cfg, t).unwrap();
        let k = rng.gen_range(0..probs.len());
        let h = 1e-6;
        let at = |d: f64| {
            let mut q = probs.clone();
            q[k] += d;
            total_loss(&PredictionSlice::new(q, rows, cols).unwrap(), b.as_ref(), &cfg, t).unwrap().total
        };
        let numeric = (at(h) - at(-h)) / (2.0 * h);
        let rel = (grad[k] - numeric).abs() / grad[k].abs().max(numeric.abs()).max(1e-8);
        worst_rel = worst_rel.max(rel);
    }

    let elapsed = start.elapsed();
    let pass = worst_gap <= 1e-9 && worst_rel <= 1e-4 && elapsed < Duration::from_secs(120);
    let detail = format!("max branch gap {worst_gap:.2e}, max gradient rel. error {worst_rel:.2e} over 100 points");
    verdict(3, "barrier correctness", pass, &detail, elapsed);
}

// ---------------------------------------------------------------------------
// 4 to 7. Synthetic experiments with the desk preset

fn desk() -> ExperimentConfig {
    ExperimentConfig::preset(Preset::Desk)
}

fn dataset(synth: &SynthConfig) -> Dataset {
    let (v, m) = generate_synthetic_dataset(synth).unwrap();
    Dataset::new(v, m).unwrap()
}

fn fold_iou(r: &ExperimentReport, sup: Supervision, n: Option<usize>, fold: usize) -> f64 {
    r.rows
        .iter()
        .find(|row| row.supervision == sup && row.n_correction == n && row.fold == fold)
        .and_then(|row| row.iou)
        .expect("row with iou")
}

#[test]
fn criterion_4_correction_raises_slice_iou() {
    let start = Instant::now();
    let cfg = desk();
    assert_eq!((cfg.synth.count, cfg.synth.shape), (30, [32, 64, 64]));
    let spec = MatrixSpec {
        supervision: vec![Supervision::Nontight3d, Supervision::Corrected],
        patch_sizes: vec![16],
        correction_sizes: vec![5],
        segment: false,
        ..cfg.matrix_spec()
    };
    let r = run_experiment_matrix(&dataset(&cfg.synth), &spec).unwrap();
    assert!(r.failures.is_empty(), "{:?}", r.failures);
    let before: Vec<f64> = (0..3).map(|f| fold_iou(&r, Supervision::Nontight3d, None, f)).collect();
    let after: Vec<f64> = (0..3).map(|f| fold_iou(&r, Supervision::Corrected, Some(5), f)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let elapsed = start.elapsed();
    let pass = mean(&before) <= 0.5
        && mean(&after) >= 0.75
        && before.iter().zip(&after).all(|(b, a)| a > b)
        && elapsed < Duration::from_secs(15 * 60);
    let detail = format!(
        "IoU before {:.4} (folds {before:.3?}), after {:.4} (folds {after:.3?})",
        mean(&before),
        mean(&after)
    );
    verdict(4, "correction efficacy", pass, &detail, elapsed);
}

#[test]
fn criterion_5_segmentation_ordering() {
    let start = Instant::now();
    let cfg = desk();
    let spec = MatrixSpec {
        patch_sizes: vec![16],
        correction_sizes: vec![20],
        ..cfg.matrix_spec()
    };
    let r = run_experiment_matrix(&dataset(&cfg.synth), &spec).unwrap();
    assert!(r.failures.is_empty(), "{:?}", r.failures);
    let dice = |sup, p, n| r.cell(sup, p, n).and_then(|c| c.dice_mean).expect("dice cell");
    let tight = dice(Supervision::Tight2d, None, None);
    let nontight = dice(Supervision::Nontight3d, None, None);
    let corrected = dice(Supervision::Corrected, Some(16), Some(20));
    let elapsed = start.elapsed();
    let pass = nontight < corrected
        && corrected >= tight - 0.05
        && tight >= 0.85
        && elapsed < Duration::from_secs(45 * 60);
    let detail = format!("Dice tight2d {tight:.4}, nontight3d {nontight:.4}, corrected(p=16, n=20) {corrected:.4}");
    verdict(5, "segmentation ordering", pass, &detail, elapsed);
}

#[test]
fn criterion_6_more_correction_images_do_not_hurt() {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for seed in 0..3u64 {
        let mut cfg = desk();
        cfg.synth.seed = seed;
        cfg.clf.seed = seed;
        let spec = MatrixSpec {
            supervision: vec![Supervision::Corrected],
            patch_sizes: vec![16],
            correction_sizes: vec![5, 20],
            segment: false,
            seed,
            ..cfg.matrix_spec()
        };
        let r = run_experiment_matrix(&dataset(&cfg.synth), &spec).unwrap();
        assert!(r.failures.is_empty(), "{:?}", r.failures);
        let iou = |n| r.cell(Supervision::Corrected, Some(16), Some(n)).and_then(|c| c.iou_mean).unwrap();
        let (five, twenty) = (iou(5), iou(20));
        pass &= twenty >= five;
        lines.push(format!("seed {seed}: n=5 {five:.4}, n=20 {twenty:.4}"));
    }
    verdict(6, "monotone in correction subset", pass, &lines.join("; "), start.elapsed());
}

fn csv_without_timing(r: &ExperimentReport, dir: &std::path::Path, name: &str) -> String {
    let path = dir.join(name);
    write_report_csv(&r.rows, &path).unwrap();
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn criterion_7_matrix_reruns_reproduce_the_report() {
    let start = Instant::now();
    let mut cfg = desk();
    cfg.synth.count = 8;
    cfg.synth.shape = [16, 32, 32];
    cfg.matrix.patch_sizes = vec![8, 16];
    cfg.matrix.correction_sizes = vec![2, 3];
    cfg.matrix.folds = 2;
    cfg.clf.epochs = 2;
    cfg.seg.epochs = 2;
    cfg.seg.batch_size = 8;
    let ds = dataset(&cfg.synth);
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = cfg.matrix_spec();
    let first = run_experiment_matrix(&ds, &spec).unwrap();
    spec.jobs = 3;
    let second = run_experiment_matrix(&dataset(&cfg.synth), &spec).unwrap();
    let a = csv_without_timing(&first, tmp.path(), "a.csv");
    let b = csv_without_timing(&second, tmp.path(), "b.csv");
    let cells = first.rows.len();
    let pass = a == b && first.failures == second.failures && cells == 2 * (2 + 2 * 2);
    let detail = format!("{cells} rows, serial vs 3-thread run identical apart from wall time: {}", a == b);
    verdict(7, "determinism", pass, &detail, start.elapsed());
}

// ---------------------------------------------------------------------------
// 8. Published settings are the defaults

#[test]
fn criterion_8_defaults_encode_published_settings() {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let mut wrong = Vec::new();
    let mut expect = |what: &str, ok: bool| {
        if !ok {
            wrong.push(what.to_string());
        }
    };
    expect("clf.learning_rate", cfg.clf.learning_rate == 1e-4);
    expect("clf.batch_size", cfg.clf.batch_size == 32);
    expect("clf.epochs", cfg.clf.epochs == 50);
    expect("seg.learning_rate", cfg.seg.learning_rate == 1e-4);
    expect("seg.batch_size", cfg.seg.batch_size == 32);
    expect("seg.epochs", cfg.seg.epochs == 50);
    expect("matrix.folds", cfg.matrix.folds == 3);
    expect("matrix.patch_sizes", cfg.matrix.patch_sizes == [16, 32]);
    expect("matrix.correction_sizes", cfg.matrix.correction_sizes == [5, 10, 20]);
    expect("clip percentiles", CLIP_PERCENTILES == (0.5, 99.5));
    for &p in &cfg.matrix.patch_sizes {
        let g = build_grid(Box2D::new(0, 0, 4 * p, 4 * p).unwrap(), p).unwrap();
        expect(&format!("overlap for p={p}"), g.stride() == p / 2 && g.rows() == 7);
    }
    let text = cfg.to_toml();
    for line in ["learning_rate = 0.0001", "batch_size = 32", "epochs = 50", "folds = 3", "patch_sizes = [", "16,", "32,"] {
        expect(&format!("snapshot line `{line}`"), text.contains(line));
    }
    let detail = if wrong.is_empty() { "all settings match".to_string() } else { format!("wrong: {}", wrong.join(", ")) };
    verdict(8, "published settings", wrong.is_empty(), &detail, start.elapsed());
}
