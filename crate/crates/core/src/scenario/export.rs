//! Trajectory CSV and output files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use super::run::ScenarioReport;
use crate::dynamics::{LogRow, TrajectoryLog};
use crate::error::{Error, Result};
use crate::identification::FitResult;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Column names for `n` coordinates and `m` inputs.
pub fn csv_header(n: usize, m: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("q_{i}")));
    cols.extend((1..=n).map(|i| format!("qd_{i}")));
    cols.extend((1..=m).map(|i| format!("tau_{i}")));
    cols.extend(["E_kin", "E_elastic", "E_grav", "V_lyap"].map(String::from));
    cols.join(",")
}

/// 17 significant digits, enough to read every `f64` back exactly.
fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:.16e}")
    }
}

/// Writes the log as CSV. An empty log writes the header for `n` coordinates
/// and `m` inputs.
pub fn export_csv(log: &TrajectoryLog, n: usize, m: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let mut out = csv_header(n, m);
    out.push('\n');
    for r in &log.rows {
        let mut fields = vec![num(r.t)];
        fields.extend(r.q.iter().chain(r.q_dot.iter()).chain(r.tau.iter()).map(|&x| num(x)));
        fields.extend([r.kinetic, r.elastic, r.gravitational, r.lyapunov].map(num));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    w.write_all(out.as_bytes()).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a CSV written by [`export_csv`].
pub fn read_csv_log(path: impl AsRef<Path>) -> Result<TrajectoryLog> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let n = header.iter().filter(|c| c.starts_with("q_")).count();
    let m = header.iter().filter(|c| c.starts_with("tau_")).count();
    if header.len() != 1 + 2 * n + m + 4 || header.first() != Some(&"t") {
        return Err(Error::InvalidArgument(format!("{}: not a trajectory CSV", path.display())));
    }
    let mut log = TrajectoryLog::default();
    for (k, line) in lines.enumerate() {
        let v: Vec<f64> = line
            .split(',')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("{}: row {}: {e}", path.display(), k + 2)))?;
        if v.len() != header.len() {
            return Err(Error::InvalidArgument(format!("{}: row {} has {} fields", path.display(), k + 2, v.len())));
        }
        let tail = 1 + 2 * n + m;
        log.rows.push(LogRow {
            t: v[0],
            q: DVector::from_column_slice(&v[1..1 + n]),
            q_dot: DVector::from_column_slice(&v[1 + n..1 + 2 * n]),
            tau: DVector::from_column_slice(&v[1 + 2 * n..tail]),
            kinetic: v[tail],
            elastic: v[tail + 1],
            gravitational: v[tail + 2],
            lyapunov: v[tail + 3],
        });
    }
    Ok(log)
}

/// `out.csv` → `out.summary.json`.
pub fn summary_path(output: &Path) -> PathBuf {
    output.with_extension("summary.json")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_fits(fits: &[FitResult], path: &Path) -> Result<()> {
    let mut text = FitResult::csv_header().to_string();
    text.push('\n');
    for f in fits {
        text.push_str(&f.csv_row());
        text.push('\n');
    }
    write_text(path, &text)
}

/// Writes the report to `output`: the trajectory CSV plus a JSON summary,
/// the fit table, or the certificate, depending on what the report holds.
pub fn write_report(report: &ScenarioReport, n: usize, m: usize, output: &Path) -> Result<()> {
    if let Some(fits) = &report.fits {
        return write_fits(fits, output);
    }
    if let Some(cert) = &report.certificate {
        return write_text(output, &serde_json::to_string_pretty(cert).expect("serializes"));
    }
    export_csv(&report.log, n, m, output)?;
    write_text(
        &summary_path(output),
        &serde_json::to_string_pretty(&report.metrics).expect("serializes"),
    )
}
