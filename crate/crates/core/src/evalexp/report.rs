use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::matrix::{ExperimentReport, ReportRow, Supervision};
use super::metrics::mean_std;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 8] =
    ["supervision", "p", "n_correction", "fold", "dice", "iou", "mismatches", "wall_time_s"];

/// Fold statistics of one matrix cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub supervision: Supervision,
    pub p: Option<usize>,
    pub n_correction: Option<usize>,
    pub folds: usize,
    pub dice_mean: Option<f64>,
    pub dice_std: Option<f64>,
    pub iou_mean: Option<f64>,
    pub iou_std: Option<f64>,
}

impl CellSummary {
    pub fn label(&self) -> String {
        match (self.p, self.n_correction) {
            (Some(p), Some(n)) => format!("{} p={p} n={n}", self.supervision),
            _ => self.supervision.to_string(),
        }
    }
}

impl std::fmt::Display for CellSummary {
    /// `label  dice mean ± std  iou mean ± std`, with `-` for missing values.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let stat = |m: Option<f64>, s: Option<f64>| match (m, s) {
            (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
            (Some(m), None) => format!("{m:.3}"),
            _ => "-".to_string(),
        };
        write!(
            f,
            "{:<24} dice {:<15} iou {}",
            self.label(),
            stat(self.dice_mean, self.dice_std),
            stat(self.iou_mean, self.iou_std)
        )
    }
}

/// Groups rows by cell and averages over folds.
pub fn aggregate(rows: &[ReportRow]) -> Vec<CellSummary> {
    let mut groups: BTreeMap<(Supervision, Option<usize>, Option<usize>), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.supervision, r.p, r.n_correction)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((supervision, p, n_correction), rs)| {
            let dice: Vec<f64> = rs.iter().filter_map(|r| r.dice).collect();
            let iou: Vec<f64> = rs.iter().filter_map(|r| r.iou).collect();
            let (dice_mean, dice_std) = mean_std(&dice).unzip();
            let (iou_mean, iou_std) = mean_std(&iou).unzip();
            CellSummary {
                supervision,
                p,
                n_correction,
                folds: rs.len(),
                dice_mean,
                dice_std,
                iou_mean,
                iou_std,
            }
        })
        .collect()
}

impl ExperimentReport {
    pub fn summary(&self) -> Vec<CellSummary> {
        aggregate(&self.rows)
    }

    /// The summary cell matching `(supervision, p, n)`.
    pub fn cell(&self, supervision: Supervision, p: Option<usize>, n: Option<usize>) -> Option<CellSummary> {
        self.summary()
            .into_iter()
            .find(|c| c.supervision == supervision && c.p == p && c.n_correction == n)
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn write_report_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.supervision.to_string(),
            opt(r.p),
            opt(r.n_correction),
            r.fold.to_string(),
            opt(r.dice),
            opt(r.iou),
            r.mismatches.to_string(),
            format!("{:.3}", r.wall_time_s),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    if rd.headers()?.iter().ne(CSV_HEADER) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: "unexpected report columns".into(),
        });
    }
    let bad = |field: &str, msg: String| Error::field(field, msg);
    let num = |field: &str, s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| bad(field, format!("{e}")))
        }
    };
    let int = |field: &str, s: &str| -> Result<Option<usize>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| bad(field, format!("{e}")))
        }
    };
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        rows.push(ReportRow {
            supervision: rec[0].parse()?,
            p: int("p", &rec[1])?,
            n_correction: int("n_correction", &rec[2])?,
            fold: int("fold", &rec[3])?.ok_or_else(|| bad("fold", "missing".into()))?,
            dice: num("dice", &rec[4])?,
            iou: num("iou", &rec[5])?,
            mismatches: int("mismatches", &rec[6])?.unwrap_or(0),
            wall_time_s: num("wall_time_s", &rec[7])?.unwrap_or(0.0),
        });
    }
    Ok(rows)
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub plots: Vec<PathBuf>,
}

fn summary_json(r: &ExperimentReport) -> serde_json::Value {
    let cells = r.summary();
    let table = |pick: fn(&CellSummary) -> (Option<f64>, Option<f64>)| {
        cells
            .iter()
            .filter(|c| pick(c).0.is_some())
            .map(|c| {
                let (mean, std) = pick(c);
                serde_json::json!({
                    "supervision": c.supervision,
                    "p": c.p,
                    "n_correction": c.n_correction,
                    "folds": c.folds,
                    "mean": mean,
                    "std": std,
                })
            })
            .collect::<Vec<_>>()
    };
    serde_json::json!({
        "dice": table(|c| (c.dice_mean, c.dice_std)),
        "box_iou": table(|c| (c.iou_mean, c.iou_std)),
        "failures": r.failures,
        "meta": r.meta,
    })
}

fn bar_plot(path: &Path, title: &str, bars: &[(String, f64, f64)]) -> Result<()> {
    let plot_err = |e: &dyn std::fmt::Display| Error::Format {
        path: path.to_path_buf(),
        msg: format!("plot: {e}"),
    };
    let width = (160 + 110 * bars.len()) as u32;
    let root = SVGBackend::new(path, (width.max(480), 400)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let n = bars.len() as i32;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(60)
        .y_label_area_size(50)
        .build_cartesian_2d((0..n).into_segmented(), 0.0..1.05)
        .map_err(|e| plot_err(&e))?;
    let labels: Vec<String> = bars.iter().map(|b| b.0.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(bars.len())
        .x_label_formatter(&|x| match x {
            SegmentValue::CenterOf(i) => labels.get(*i as usize).cloned().unwrap_or_default(),
            _ => String::new(),
        })
        .y_desc("mean over folds")
        .draw()
        .map_err(|e| plot_err(&e))?;
    chart
        .draw_series(bars.iter().enumerate().map(|(i, (_, mean, _))| {
            let i = i as i32;
            let mut bar = Rectangle::new(
                [(SegmentValue::Exact(i), 0.0), (SegmentValue::Exact(i + 1), *mean)],
                BLUE.mix(0.5).filled(),
            );
            bar.set_margin(0, 0, 12, 12);
            bar
        }))
        .map_err(|e| plot_err(&e))?;
    chart
        .draw_series(bars.iter().enumerate().map(|(i, (_, mean, std))| {
            ErrorBar::new_vertical(
                SegmentValue::CenterOf(i as i32),
                (mean - std).max(0.0),
                *mean,
                (mean + std).min(1.05),
                BLACK.filled(),
                10,
            )
        }))
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}

/// Writes `report.csv`, `summary.json` and, when there is data for them,
/// `dice.svg` and `box_iou.svg` into `out_dir`.
pub fn emit_report(r: &ExperimentReport, out_dir: impl AsRef<Path>) -> Result<ReportFiles> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join("report.csv");
    write_report_csv(&r.rows, &csv)?;
    let summary = dir.join("summary.json");
    fs::write(&summary, serde_json::to_string_pretty(&summary_json(r))?).map_err(|e| Error::io(&summary, e))?;

    let cells = r.summary();
    let mut plots = Vec::new();
    let series = |pick: fn(&CellSummary) -> (Option<f64>, Option<f64>)| -> Vec<(String, f64, f64)> {
        cells
            .iter()
            .filter_map(|c| match pick(c) {
                (Some(m), s) => Some((c.label(), m, s.unwrap_or(0.0))),
                _ => None,
            })
            .collect()
    };
    for (name, title, bars) in [
        ("dice.svg", "Dice by supervision", series(|c| (c.dice_mean, c.dice_std))),
        ("box_iou.svg", "Box IoU vs tight boxes", series(|c| (c.iou_mean, c.iou_std))),
    ] {
        if bars.is_empty() {
            continue;
        }
        let path = dir.join(name);
        bar_plot(&path, title, &bars)?;
        plots.push(path);
    }
    Ok(ReportFiles { csv, summary, plots })
}
