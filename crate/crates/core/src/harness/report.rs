//! Evaluation report CSVs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::envs::EvalReport;
use crate::error::Result;
use crate::textfmt::format_sig;

use super::io::write_atomic;

pub const EPISODE_HEADER: &str = "episode,success,length,final_distance";
pub const SUMMARY_HEADER: &str = "method,band,success_rate,mean_len,seed";

/// One row per episode.
pub fn episodes_csv(report: &EvalReport) -> String {
    let mut out = String::from(EPISODE_HEADER);
    out.push('\n');
    for r in &report.records {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.episode,
            r.success as u8,
            r.length,
            format_sig(r.final_distance, 9)
        );
    }
    out
}

/// `method,band,success_rate,mean_len,seed` with the rate to 4 decimals.
pub fn summary_line(report: &EvalReport) -> String {
    format!(
        "{},{},{:.4},{:.2},{}",
        report.method, report.band, report.success_rate, report.mean_episode_length, report.base_seed
    )
}

/// Writes `<stem>.csv` and `<stem>.summary.csv`; returns both paths.
pub fn emit_report(report: &EvalReport, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let episodes = stem.with_extension("csv");
    let summary = stem.with_extension("summary.csv");
    write_atomic(&episodes, episodes_csv(report).as_bytes())?;
    write_atomic(
        &summary,
        format!("{SUMMARY_HEADER}\n{}\n", summary_line(report)).as_bytes(),
    )?;
    Ok((episodes, summary))
}
