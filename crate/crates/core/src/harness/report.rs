use std::fs;
use std::path::Path;

use super::{EvalReport, EvalRow};
use crate::error::{Error, Result};

pub const REPORT_HEADER: &str = "family,threshold,accuracy,mean_n,undecided";

/// One row per report entry, fixed six-decimal formatting.
pub fn report_to_csv(report: &EvalReport) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            r.family, r.threshold, r.accuracy, r.mean_n, r.undecided_fraction
        ));
    }
    out
}

pub fn write_report_csv(report: &EvalReport, path: &Path) -> Result<()> {
    fs::write(path, report_to_csv(report))?;
    Ok(())
}

pub fn parse_report_csv(text: &str) -> Result<Vec<EvalRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == REPORT_HEADER => {}
        _ => {
            return Err(Error::parse(
                1,
                format!("expected header '{REPORT_HEADER}'"),
            ))
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let line_no = i + 2;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::parse(line_no, "expected 5 fields"));
            }
            let num = |k: usize| {
                fields[k]
                    .parse::<f64>()
                    .map_err(|_| Error::parse(line_no, format!("bad number '{}'", fields[k])))
            };
            Ok(EvalRow {
                family: fields[0].to_string(),
                threshold: num(1)?,
                accuracy: num(2)?,
                mean_n: num(3)?,
                undecided_fraction: num(4)?,
            })
        })
        .collect()
}
