//! CSV report rows.
//!
//! One row per configuration; reals are written with 17 significant digits
//! so a row can be compared bit-exactly against a recomputation from the
//! persisted prediction files. Percentage columns hold the metric scaled
//! by 100; the binary relative PD column is empty for non-binary tasks.

use crate::harness::ExperimentRow;
use crate::predfile::format_real;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

pub const REPORT_HEADER: &str = "config_hash,log_loss,accuracy,delta_1,delta_2,delta_true_label_pct,delta_hamming_pct,delta_rel_binary_pct,wall_time_s";

/// Formats one CSV row (no trailing newline).
pub fn format_report_row(row: &ExperimentRow) -> String {
    let r = &row.report;
    let pct = |v: f64| format_real(v * 100.0);
    let delta_l = r
        .delta_true_label
        .map(pct)
        .unwrap_or_default();
    let delta_rb = r.delta_rel_binary.map(pct).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{:.3}",
        row.config_hash,
        format_real(r.log_loss),
        format_real(r.accuracy),
        format_real(r.delta_1),
        format_real(r.delta_2),
        delta_l,
        pct(r.delta_hamming),
        delta_rb,
        row.wall_time_s,
    )
}

/// Appends a row, writing the header first when the file is new.
pub fn append_report_row(path: &Path, row: &ExperimentRow) -> std::io::Result<()> {
    let new_file = !path.exists();
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    if new_file {
        writeln!(file, "{REPORT_HEADER}")?;
    }
    writeln!(file, "{}", format_report_row(row))
}
