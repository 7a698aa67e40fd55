//! Metrics, experiment cells and the risk report.

mod cells;
mod metrics;
mod report;

pub use cells::{
    cells_from_csv, cells_to_csv, read_cell_file, write_atomic, write_cell_file, CellFile,
    ExperimentCell, SkippedCell, CSV_HEADER, SKIPPED_INAPPLICABLE,
};
pub use metrics::{gap_from_accuracies, median, overfitting_gap, pearson};
pub use report::{
    build_report, write_report, AttackCorrelations, ComplexityRow, Correlation, GapPoint,
    GapSeries, PairCorrelation, RiskReport, TargetRow, ThreatRow, INSUFFICIENT_DATA, REPORT_CSV,
    REPORT_JSON, REPORT_SUMMARY,
};
