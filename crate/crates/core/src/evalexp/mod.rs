//! Metrics, cross-validation and the experiment matrix.

mod cv;
mod matrix;
mod metrics;
mod report;

pub use cv::{fold_assignment, fold_split, run_cross_validation, CvSummary};
pub use matrix::{
    run_experiment_matrix, run_experiment_matrix_with, CellFailure, CellKey, CorrectionUnit, Dataset,
    ExperimentReport, MatrixSpec, ReportMeta, ReportRow, Supervision,
};
pub use metrics::{box_iou_report, dice, IouReport};
pub use report::{aggregate, emit_report, read_report_csv, write_report_csv, CellSummary, ReportFiles, CSV_HEADER};
