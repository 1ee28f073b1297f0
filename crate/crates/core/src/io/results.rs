use std::path::Path;

use super::IoError;
use crate::metrics::MetricsReport;

pub const RESULTS_HEADER: [&str; 10] = [
    "run_id", "branch", "method", "cr", "sparsity", "dice", "mse", "aji", "pq", "speedup",
];

/// Formats like C's `%.6g`: six significant digits, trailing zeros dropped,
/// scientific notation for exponents below -4 or from 6 up.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    trim_zeros(&format!("{v:.*}", (5 - exp) as usize)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn field(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

/// Writes the header and one row per report, sorted by (branch, method, cr).
pub fn write_results_csv(path: &Path, reports: &[MetricsReport]) -> Result<(), IoError> {
    let mut rows: Vec<&MetricsReport> = reports.iter().collect();
    rows.sort_by(|a, b| (&a.branch, &a.method, a.cr).cmp(&(&b.branch, &b.method, b.cr)));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.run_id.clone(),
            r.branch.clone(),
            r.method.clone(),
            r.cr.to_string(),
            field(r.sparsity),
            field(r.dice),
            field(r.mse),
            field(r.aji),
            field(r.pq),
            field(r.speedup),
        ])?;
    }
    w.flush().map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Parses a file written by [`write_results_csv`]; empty fields become `None`.
pub fn read_results_csv(path: &Path) -> Result<Vec<MetricsReport>, IoError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut records = r.records();
    let header = records.next().ok_or_else(|| IoError::CsvRecord {
        record: 0,
        reason: "missing header".into(),
    })??;
    if header.iter().ne(RESULTS_HEADER) {
        return Err(IoError::CsvRecord {
            record: 0,
            reason: format!(
                "unexpected header `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let record = i + 1;
        let bad = |reason: String| IoError::CsvRecord { record, reason };
        if rec.len() != RESULTS_HEADER.len() {
            return Err(bad(format!(
                "expected {} fields, found {}",
                RESULTS_HEADER.len(),
                rec.len()
            )));
        }
        let num = |j: usize| -> Result<Option<f64>, IoError> {
            match &rec[j] {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| {
                    bad(format!(
                        "`{s}` in column {} is not a number",
                        RESULTS_HEADER[j]
                    ))
                }),
            }
        };
        out.push(MetricsReport {
            run_id: rec[0].to_string(),
            branch: rec[1].to_string(),
            method: rec[2].to_string(),
            cr: rec[3]
                .parse()
                .map_err(|_| bad(format!("`{}` is not a compression ratio", &rec[3])))?,
            sparsity: num(4)?,
            dice: num(5)?,
            mse: num(6)?,
            aji: num(7)?,
            pq: num(8)?,
            speedup: num(9)?,
        });
    }
    Ok(out)
}
