use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tightbox::boxcorrect::correct_box_series;
use tightbox::boxgeom::{inflate_box, Margin};
use tightbox::config::{append_run_record, ExperimentConfig, Preset};
use tightbox::evalexp::{box_iou_report, dice, emit_report, run_experiment_matrix_with, Dataset};
use tightbox::patchclf::{predict_grid, train_classifier, PatchClassifier};
use tightbox::patchgrid::{build_patch_dataset, load_patch_dataset, save_patch_dataset};
use tightbox::volumes::{
    apply_normalization, compute_norm_stats, generate_synthetic_dataset, load_dataset, load_mask, load_volume,
    save_dataset, save_mask,
};
use tightbox::weakseg::{predict_mask, train_segmenter, Segmenter};
use tightbox::{Box3D, BoxSeries, MaskVolume, NormStats};

#[derive(Parser)]
#[command(name = "tightbox", version, about = "Box tightness correction and box-supervised segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory (images/ and labels/).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Normalize a dataset with foreground statistics of its labels.
    Normalize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reuse saved statistics instead of computing them from `--data`.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    #[command(subcommand)]
    Boxes(BoxesCmd),
    #[command(subcommand)]
    Patches(PatchesCmd),
    #[command(subcommand)]
    Clf(ClfCmd),
    #[command(subcommand)]
    Seg(SegCmd),
    #[command(subcommand)]
    Eval(EvalCmd),
    #[command(subcommand)]
    Experiment(ExperimentCmd),
}

#[derive(Subcommand)]
enum BoxesCmd {
    /// Per-slice boxes of a mask.
    Derive {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, value_enum)]
        mode: BoxMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-sections of a 3D box given as z0,r0,c0,z1,r1,c1.
    Slice {
        #[arg(long = "box", value_parser = parse_box3d)]
        bbox: Box3D,
        #[arg(long)]
        depth: usize,
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grow every box by a margin, clamped to the volume's slice.
    Inflate {
        #[arg(long)]
        boxes: PathBuf,
        #[arg(long)]
        margin: usize,
        /// Volume whose slice size bounds the result.
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shrink boxes with a trained patch classifier.
    Correct {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        boxes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BoxMode {
    Tight2d,
    Nontight3d,
}

#[derive(Subcommand)]
enum PatchesCmd {
    /// Labeled patches from the boxed slices of a normalized dataset.
    Build {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        p: usize,
        #[arg(long, value_enum, default_value = "nontight3d")]
        mode: BoxMode,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ClfCmd {
    Train {
        #[arg(long)]
        patches: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Statistics the patches were normalized with, recorded in the checkpoint.
        #[arg(long)]
        norm_stats: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Patch labels for every boxed slice, one JSON line per slice.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        boxes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum SegCmd {
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Directory of `<id>.jsonl` box files; without it boxes come from the labels.
        #[arg(long, conflicts_with = "mode")]
        boxes: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<BoxMode>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss log (CSV).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        norm_stats: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        /// Output directory for `<id>.vol`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        level: f32,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    Dice {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    Iou {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Run the supervision × p × n matrix with cross-validation.
    Run {
        #[arg(long)]
        out: PathBuf,
        /// Dataset directory; a synthetic dataset is generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `full` or `desk`.
    #[arg(long, default_value = "full")]
    preset: Preset,
    /// Override one key, e.g. `--set clf.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::preset(self.preset);
        if let Some(path) = &self.config {
            cfg = cfg.merged_file(path)?;
        }
        for o in &self.overrides {
            cfg.set(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_box3d(s: &str) -> std::result::Result<Box3D, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|e| format!("`{x}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let [z0, r0, c0, z1, r1, c1] = v[..] else {
        return Err("expected z0,r0,c0,z1,r1,c1".into());
    };
    Box3D::new(z0, r0, c0, z1, r1, c1).map_err(|e| e.to_string())
}

fn parent(path: &Path) -> &Path {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

fn derive_series(mask: &MaskVolume, mode: BoxMode) -> Result<BoxSeries> {
    Ok(match mode {
        BoxMode::Tight2d => BoxSeries::tight_from_mask(mask),
        BoxMode::Nontight3d => BoxSeries::sliced_from_mask(mask)?,
    })
}

fn norm_id(path: &Option<PathBuf>) -> Result<String> {
    Ok(match path {
        Some(p) => NormStats::load(p)?.fingerprint(),
        None => "unrecorded".to_string(),
    })
}

fn run(cli: Cli, argv: &[String]) -> Result<()> {
    match cli.command {
        Command::Synth { out, cfg } => {
            let cfg = cfg.load()?;
            let (v, m) = generate_synthetic_dataset(&cfg.synth)?;
            save_dataset(&out, &v, &m)?;
            append_run_record(&out, argv, &cfg.synth)?;
            println!("wrote {} volumes to {}", v.len(), out.display());
        }
        Command::Normalize { data, out, stats } => {
            let (v, m) = load_dataset(&data)?;
            let stats = match &stats {
                Some(p) => NormStats::load(p)?,
                None if m.is_empty() => bail!("{} has no labels; pass --stats", data.display()),
                None => compute_norm_stats(&v, &m)?,
            };
            let normalized: Vec<_> = v.iter().map(|x| apply_normalization(x, &stats)).collect();
            save_dataset(&out, &normalized, &m)?;
            stats.save(out.join("norm_stats.json"))?;
            append_run_record(&out, argv, &json!({ "stats": stats, "data": data }))?;
        }
        Command::Boxes(cmd) => boxes(cmd, argv)?,
        Command::Patches(PatchesCmd::Build { data, p, mode, out }) => {
            let (v, m) = load_dataset(&data)?;
            if m.is_empty() {
                bail!("{} has no labels", data.display());
            }
            let series = m.iter().map(|x| derive_series(x, mode)).collect::<Result<Vec<_>>>()?;
            let samples = build_patch_dataset(&v, &m, &series, p)?;
            save_patch_dataset(&samples, p, &out)?;
            let positives = samples.iter().filter(|s| s.label == 1).count();
            append_run_record(&out, argv, &json!({ "p": p, "count": samples.len(), "positives": positives }))?;
            println!("{} patches ({positives} foreground)", samples.len());
        }
        Command::Clf(ClfCmd::Train { patches, out, norm_stats, cfg }) => {
            let mut cfg = cfg.load()?.clf;
            let (samples, p) = load_patch_dataset(&patches)?;
            cfg.input_size = p;
            let model = train_classifier(&samples, &cfg, &norm_id(&norm_stats)?)?;
            model.save(&out)?;
            append_run_record(parent(&out), argv, &cfg)?;
            if let Some(last) = model.history.last() {
                println!("final loss {:.4}, accuracy {:.4}", last.loss, last.accuracy);
            }
        }
        Command::Clf(ClfCmd::Infer { model, volume, boxes, out }) => {
            let model = PatchClassifier::load(&model)?;
            let v = load_volume(&volume)?;
            let series = BoxSeries::load(&boxes)?;
            let p = model.config.input_size;
            let mut lines = String::new();
            for (z, b) in series.entries.iter().enumerate() {
                let Some(b) = b else { continue };
                let grid = predict_grid(&model, v.plane(z), *b, p)?;
                let line = json!({
                    "z": z, "crop": b, "rows": grid.rows(), "cols": grid.cols(), "labels": grid.labels(),
                });
                lines.push_str(&line.to_string());
                lines.push('\n');
            }
            std::fs::write(&out, lines).with_context(|| out.display().to_string())?;
            append_run_record(parent(&out), argv, &model.config)?;
        }
        Command::Seg(SegCmd::Train { data, boxes, mode, out, log, norm_stats, cfg }) => {
            let cfg = cfg.load()?;
            let (v, m) = load_dataset(&data)?;
            let series = match (&boxes, mode) {
                (Some(dir), _) => v
                    .iter()
                    .map(|x| BoxSeries::load(dir.join(format!("{}.jsonl", x.id()))).map_err(Into::into))
                    .collect::<Result<Vec<_>>>()?,
                (None, Some(mode)) if !m.is_empty() => {
                    m.iter().map(|x| derive_series(x, mode)).collect::<Result<Vec<_>>>()?
                }
                (None, Some(_)) => bail!("{} has no labels to derive boxes from", data.display()),
                (None, None) => bail!("pass --boxes or --mode"),
            };
            let model = train_segmenter(&v, &series, &cfg.seg, &cfg.constraints, None, &norm_id(&norm_stats)?)?;
            model.save(&out)?;
            if let Some(log) = &log {
                model.write_log(log)?;
            }
            append_run_record(parent(&out), argv, &json!({ "seg": cfg.seg, "constraints": cfg.constraints }))?;
        }
        Command::Seg(SegCmd::Predict { model, volume, out, level }) => {
            let model = Segmenter::load(&model)?;
            let mask = predict_mask(&model, &load_volume(&volume)?, level)?;
            save_mask(&mask, &out)?;
            append_run_record(&out, argv, &json!({ "level": level, "seg": model.config }))?;
        }
        Command::Eval(EvalCmd::Dice { pred, truth }) => {
            println!("{:.6}", dice(&load_mask(&pred)?, &load_mask(&truth)?)?);
        }
        Command::Eval(EvalCmd::Iou { pred, truth }) => {
            let r = box_iou_report(&BoxSeries::load(&pred)?, &BoxSeries::load(&truth)?)?;
            println!(
                "{}",
                json!({ "mean": r.mean, "std": r.std, "compared": r.compared, "mismatches": r.mismatches })
            );
        }
        Command::Experiment(ExperimentCmd::Run { out, data, jobs, cfg }) => {
            let mut cfg = cfg.load()?;
            if let Some(j) = jobs {
                cfg.matrix.jobs = j;
            }
            cfg.validate()?;
            let (v, m) = match &data {
                Some(dir) => load_dataset(dir)?,
                None => generate_synthetic_dataset(&cfg.synth)?,
            };
            let ds = Dataset::new(v, m)?;
            append_run_record(&out, argv, &cfg)?;
            let report = run_experiment_matrix_with(&ds, &cfg.matrix_spec(), |key, res| match res {
                Ok(row) => eprintln!("{key:?}: {:.1}s", row.wall_time_s),
                Err(e) => eprintln!("{key:?}: failed: {e}"),
            })?;
            let files = emit_report(&report, &out)?;
            for c in report.summary() {
                println!("{c}");
            }
            println!("report: {}", files.csv.display());
        }
    }
    Ok(())
}

fn boxes(cmd: BoxesCmd, argv: &[String]) -> Result<()> {
    let (series, out) = match cmd {
        BoxesCmd::Derive { mask, mode, out } => (derive_series(&load_mask(&mask)?, mode)?, out),
        BoxesCmd::Slice { bbox, depth, id, out } => (BoxSeries::from_box_3d(id, &bbox, depth), out),
        BoxesCmd::Inflate { boxes, margin, volume, out } => {
            let [_, rows, cols] = load_volume(&volume)?.shape();
            let s = BoxSeries::load(&boxes)?;
            let entries =
                s.entries.iter().map(|b| b.map(|b| inflate_box(&b, Margin::uniform(margin), (rows, cols)))).collect();
            (BoxSeries::new(s.volume_id, entries), out)
        }
        BoxesCmd::Correct { model, volume, boxes, out } => {
            let model = PatchClassifier::load(&model)?;
            let p = model.config.input_size;
            (correct_box_series(&model, &load_volume(&volume)?, &BoxSeries::load(&boxes)?, p)?, out)
        }
    };
    series.save(&out)?;
    append_run_record(parent(&out), argv, &json!({ "volume_id": series.volume_id, "present": series.present() }))?;
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match run(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
