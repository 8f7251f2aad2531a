//! Whitespace-separated data files for external plotting, three columns each.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use homog::effective::{DensityCurve, FlatnessReport};
use homog::validate::ConvergenceStudy;
use serde::de::DeserializeOwned;

use crate::record::ResultRecord;
use crate::{CliError, Command};

pub fn format_columns(columns: [&str; 3], rows: &[[f64; 3]]) -> String {
    let mut out = format!("# {} {} {}\n", columns[0], columns[1], columns[2]);
    for r in rows {
        writeln!(out, "{:e} {:e} {:e}", r[0], r[1], r[2]).unwrap();
    }
    out
}

/// `alpha  mean  stderr` over every density estimate.
pub fn density_rows(curves: &[DensityCurve]) -> Vec<[f64; 3]> {
    curves
        .iter()
        .flat_map(|c| &c.estimates)
        .map(|e| [e.alpha, e.mean_fraction, e.std_error])
        .collect()
}

/// `r  sup_w  sup_grad`.
pub fn flatness_rows(reports: &[FlatnessReport]) -> Vec<[f64; 3]> {
    reports
        .iter()
        .flat_map(|r| &r.levels)
        .map(|l| [l.r, l.sup_w, l.sup_grad])
        .collect()
}

/// `eps  sup_error  runtime`.
pub fn convergence_rows(studies: &[ConvergenceStudy]) -> Vec<[f64; 3]> {
    studies
        .iter()
        .flat_map(|s| {
            s.eps_list
                .iter()
                .zip(&s.sup_errors)
                .zip(&s.runtimes)
                .map(|((&e, &err), &t)| [e, err, t])
        })
        .collect()
}

fn parts<T: DeserializeOwned>(records: &[ResultRecord], key: &str) -> Result<Vec<T>, CliError> {
    records
        .iter()
        .map(|r| {
            let v = r.payload.get(key).cloned().unwrap_or_default();
            serde_json::from_value(v)
                .map_err(|e| CliError::Config(format!("record payload lacks `{key}`: {e}")))
        })
        .collect()
}

/// Plot data for a list of records of one command, or `None` for commands without a
/// curve to plot. An empty list gives a file with the header only.
pub fn plot_data(command: Command, records: &[ResultRecord]) -> Result<Option<String>, CliError> {
    if let Some(r) = records.iter().find(|r| r.command != command) {
        return Err(CliError::Config(format!(
            "cannot mix {} records into a {command} plot",
            r.command
        )));
    }
    Ok(match command {
        Command::DensityCurve => Some(format_columns(
            ["alpha", "mean_fraction", "std_error"],
            &density_rows(&parts(records, "curve")?),
        )),
        Command::Flatness => Some(format_columns(
            ["r", "sup_w", "sup_grad"],
            &flatness_rows(&parts(records, "report")?),
        )),
        Command::Validate => Some(format_columns(
            ["eps", "sup_error", "runtime"],
            &convergence_rows(&parts(records, "study")?),
        )),
        _ => None,
    })
}

/// Writes `<command>.dat` into `dir` when the command has plot data.
pub fn emit_plot_data(
    command: Command,
    records: &[ResultRecord],
    dir: &Path,
) -> Result<Option<PathBuf>, CliError> {
    match plot_data(command, records)? {
        Some(text) => {
            let path = dir.join(format!("{}.dat", command.name()));
            std::fs::write(&path, text)?;
            Ok(Some(path))
        }
        None => Ok(None),
    }
}
